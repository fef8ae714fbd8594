use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::params::{Grads, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// AdaGrad: `G += g²; θ -= lr · g / (√G + ε)`.
#[derive(Debug, Clone)]
pub struct AdaGrad<T: Real = f64> {
    pub learning_rate: T,
    pub epsilon: T,
    accum: Vec<Option<Tensor<T>>>,
}

impl<T: Real> AdaGrad<T> {
    pub fn new(learning_rate: T, epsilon: T) -> Self {
        AdaGrad { learning_rate, epsilon, accum: Vec::new() }
    }

    pub fn accumulator(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.accum.get(id.0).and_then(|a| a.as_ref())
    }

    /// Applies one update to every parameter that has a gradient and passes
    /// `active`. Nothing is written unless every update is finite.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>, active: impl Fn(ParamId) -> bool) -> Result<()> {
        if self.accum.len() < params.len() {
            self.accum.resize(params.len(), None);
        }
        let mut staged: Vec<(ParamId, Vec<T>, Vec<T>)> = Vec::new();
        for (id, g) in grads.iter() {
            if !active(id) {
                continue;
            }
            if !g.all_finite() {
                return Err(Error::non_finite(format!("gradient of parameter `{}`", params.name(id))));
            }
            let theta = params.get(id).data();
            let acc = self.accum[id.0].as_ref().map(|a| a.data());
            let mut new_acc = Vec::with_capacity(g.len());
            let mut new_theta = Vec::with_capacity(g.len());
            for (i, &gi) in g.data().iter().enumerate() {
                let a = acc.map_or(T::zero(), |a| a[i]) + gi * gi;
                let t = if gi == T::zero() { theta[i] } else { theta[i] - self.learning_rate * gi / (a.sqrt() + self.epsilon) };
                if !t.is_finite() {
                    return Err(Error::non_finite(format!("AdaGrad update of parameter `{}`", params.name(id))));
                }
                new_acc.push(a);
                new_theta.push(t);
            }
            staged.push((id, new_acc, new_theta));
        }
        for (id, acc, theta) in staged {
            let shape = params.get(id).shape().to_vec();
            params.get_mut(id).data_mut().copy_from_slice(&theta);
            self.accum[id.0] = Some(Tensor::from_vec(&shape, acc)?);
        }
        Ok(())
    }
}
