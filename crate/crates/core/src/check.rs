//! Finite-difference check of the complete training objective on a toy model.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, uniform_fill, GradCheckConfig, GradCheckReport, Graph};
use crate::data::{Batch, Domain, EmbeddingTable};
use crate::error::Result;
use crate::hcnn::HcnnConfig;
use crate::heads::{combined_loss, LossWeights};
use crate::model::{Model, ModelConfig, Variant};
use crate::omega::{omega_inverse, Mat4, Omega};

/// Dimensions of the toy problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyDims {
    pub m: usize,
    pub l: usize,
    pub filters: usize,
    pub batch: usize,
    pub vocab: usize,
}

impl Default for ToyDims {
    fn default() -> Self {
        ToyDims { m: 8, l: 4, filters: 3, batch: 4, vocab: 12 }
    }
}

/// A randomly initialized model with non-zero biases, one batch per domain
/// and a random unit-trace covariance.
pub struct Toy {
    pub model: Model<f64>,
    pub source: Batch,
    pub target: Batch,
    pub omega_inv: Mat4,
}

fn random_batch(rng: &mut ChaCha8Rng, dims: &ToyDims, domain: Domain) -> Batch {
    let sent = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(3..=dims.m);
        let mut v: Vec<u32> = (0..n).map(|_| rng.gen_range(2..dims.vocab as u32 + 2)).collect();
        v.resize(dims.m, 0);
        v
    };
    let mut b = Batch { x1: Vec::new(), x2: Vec::new(), labels: Vec::new(), domain };
    for i in 0..dims.batch {
        b.x1.push(sent(rng));
        b.x2.push(sent(rng));
        b.labels.push(i % 2);
    }
    b
}

pub fn build_toy(variant: Variant, dims: &ToyDims, seed: u64) -> Result<Toy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = EmbeddingTable::empty(dims.l, seed);
    let tokens: Vec<_> = (0..dims.vocab).map(|i| format!("tok{i}")).collect();
    table.extend(tokens.iter().map(|s| s.as_str()));
    let cfg = ModelConfig::new(variant, HcnnConfig::new(dims.m, dims.l, dims.filters), 2);
    let mut model = Model::new(cfg, &table, seed)?;
    // non-zero biases keep ReLU inputs of padded windows away from the kink
    let biases: Vec<_> = model
        .params
        .iter()
        .filter(|(_, p)| p.name.ends_with(".b") || p.name.starts_with("b_"))
        .map(|(id, _)| id)
        .collect();
    for id in biases {
        let shape = model.params.get(id).shape().to_vec();
        *model.params.get_mut(id) = uniform_fill(&shape, 0.1, &mut rng);
    }
    let source = random_batch(&mut rng, dims, Domain::Source);
    let target = random_batch(&mut rng, dims, Domain::Target);
    let mut g = [[0.0; 4]; 4];
    for row in g.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let mut a = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            a[i][j] = (0..4).map(|k| g[k][i] * g[k][j]).sum::<f64>() + if i == j { 0.1 } else { 0.0 };
        }
    }
    let tr: f64 = (0..4).map(|i| a[i][i]).sum();
    a.iter_mut().flatten().for_each(|v| *v /= tr);
    let omega_inv = omega_inverse(&Omega { matrix: a }, crate::omega::DEFAULT_RIDGE)?;
    Ok(Toy { model, source, target, omega_inv })
}

/// Checks every parameter group of `variant`'s full objective (both domain
/// batches, all regularizers) against central differences.
pub fn full_objective_gradcheck(variant: Variant, dims: &ToyDims, seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let toy = build_toy(variant, dims, seed)?;
    let weights = LossWeights::default();
    let inv = variant.has_trace().then_some(&toy.omega_inv);
    let grads = {
        let mut g = Graph::new(&toy.model.params);
        let terms = combined_loss(&mut g, &toy.model, Some(&toy.source), Some(&toy.target), inv, &weights)?;
        g.backward(terms.total)?
    };
    let mut probe = toy.model.clone();
    let loss = |params: &crate::autodiff::ParamStore<f64>| -> Result<f64> {
        probe.params.clone_from(params);
        let mut g = Graph::new(&probe.params);
        let terms = combined_loss(&mut g, &probe, Some(&toy.source), Some(&toy.target), inv, &weights)?;
        Ok(g.scalar(terms.total))
    };
    grad_check(&toy.model.params, &grads, loss, &toy.model.parameter_groups(), &GradCheckConfig { seed, ..cfg.clone() })
}
