use num_traits::Float;
use rand::Rng;

use crate::real::Real;
use crate::tensor::Tensor;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let bound = Float::sqrt(6.0 / (fan_in + fan_out).max(1) as f64);
    uniform_fill(shape, bound, rng)
}

pub fn uniform_fill<T: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = T::from_f64(rng.gen_range(-bound..=bound));
    }
    t
}
