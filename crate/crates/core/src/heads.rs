//! Output layers and losses of the transfer variants: fully-shared and
//! specific-shared prediction, the stacked head matrix with its trace
//! regularizer, the domain-entropy adversarial term, and the combined
//! training objective.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamId};
use crate::data::{Batch, Domain};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::omega::Mat4;
use crate::real::Real;
use crate::tensor::Tensor;

/// Regularization weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Adversarial entropy term.
    pub lambda0: f64,
    /// Trace (domain-relationship) regularizer.
    pub lambda1: f64,
    /// Frobenius norm of the stacked head weights.
    pub lambda2: f64,
    /// Shared encoder.
    pub lambda3: f64,
    /// Source-specific encoder.
    pub lambda4: f64,
    /// Target-specific encoder.
    pub lambda5: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda0: 0.05, lambda1: 0.0008, lambda2: 0.0004, lambda3: 0.0004, lambda4: 0.0004, lambda5: 0.0004 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights { lambda0: 0.0, lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, lambda4: 0.0, lambda5: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda0, self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5];
        if all.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config(format!("regularization weights must be finite and >= 0, got {all:?}")));
        }
        Ok(())
    }
}

/// Plain-value copy of the four output heads and the two biases. Each weight
/// matrix is `|Y| x q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputHeads {
    pub w_s: Tensor<f64>,
    pub w_sc: Tensor<f64>,
    pub w_t: Tensor<f64>,
    pub w_tc: Tensor<f64>,
    pub b_s: Tensor<f64>,
    pub b_t: Tensor<f64>,
}

impl OutputHeads {
    pub fn zeros(classes: usize, q: usize) -> Self {
        OutputHeads {
            w_s: Tensor::zeros(&[classes, q]),
            w_sc: Tensor::zeros(&[classes, q]),
            w_t: Tensor::zeros(&[classes, q]),
            w_tc: Tensor::zeros(&[classes, q]),
            b_s: Tensor::zeros(&[classes]),
            b_t: Tensor::zeros(&[classes]),
        }
    }

    pub fn classes(&self) -> usize {
        self.w_sc.shape()[0]
    }

    pub fn q(&self) -> usize {
        self.w_sc.shape()[1]
    }

    fn check(&self) -> Result<()> {
        let s = self.w_sc.shape();
        for (name, t) in [("W_s", &self.w_s), ("W_t", &self.w_t), ("W_tc", &self.w_tc)] {
            if t.shape() != s {
                return Err(Error::shape("output heads", format!("{name} is {:?}, W_sc is {s:?}", t.shape())));
            }
        }
        for (name, b) in [("b_s", &self.b_s), ("b_t", &self.b_t)] {
            if b.shape() != [s[0]] {
                return Err(Error::shape("output heads", format!("{name} is {:?}, expected [{}]", b.shape(), s[0])));
            }
        }
        Ok(())
    }
}

fn matvec(w: &Tensor<f64>, x: &[f64], out: &mut [f64]) {
    let q = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o += w.data()[i * q..(i + 1) * q].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    use num_traits::Float;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| Float::exp(z - max)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Fully-shared prediction `softmax(W_kc z_c + b_k)` for domain `k`.
pub fn fs_predict(z_c: &[f64], domain: Domain, heads: &OutputHeads) -> Result<Vec<f64>> {
    heads.check()?;
    if z_c.len() != heads.q() {
        return Err(Error::shape("fs_predict", format!("z_c has {} values, heads expect {}", z_c.len(), heads.q())));
    }
    let (w, b) = match domain {
        Domain::Source => (&heads.w_sc, &heads.b_s),
        Domain::Target => (&heads.w_tc, &heads.b_t),
    };
    let mut logits = b.data().to_vec();
    matvec(w, z_c, &mut logits);
    Ok(softmax(&logits))
}

/// Specific-shared prediction `softmax(W_kc z_c + W_k z_k + b_k)`.
pub fn ss_predict(z_c: &[f64], z_dom: &[f64], domain: Domain, heads: &OutputHeads) -> Result<Vec<f64>> {
    heads.check()?;
    if z_c.len() != heads.q() || z_dom.len() != heads.q() {
        return Err(Error::shape(
            "ss_predict",
            format!("z_c has {}, z_dom has {}, heads expect {}", z_c.len(), z_dom.len(), heads.q()),
        ));
    }
    let (wc, wd, b) = match domain {
        Domain::Source => (&heads.w_sc, &heads.w_s, &heads.b_s),
        Domain::Target => (&heads.w_tc, &heads.w_t, &heads.b_t),
    };
    let mut logits = b.data().to_vec();
    matvec(wc, z_c, &mut logits);
    matvec(wd, z_dom, &mut logits);
    Ok(softmax(&logits))
}

/// The four head matrices flattened (row-major) into the columns of a
/// `(q·|Y|) x 4` matrix, in the order `W_s, W_sc, W_t, W_tc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedW {
    rows: usize,
    /// Row-major: entry `(r, k)` at `r * 4 + k`.
    data: Vec<f64>,
}

impl StackedW {
    pub fn from_columns(cols: [&[f64]; 4]) -> Result<Self> {
        let rows = cols[0].len();
        if cols.iter().any(|c| c.len() != rows) {
            return Err(Error::shape("stack_w", "columns differ in length"));
        }
        let mut data = Vec::with_capacity(rows * 4);
        for r in 0..rows {
            for c in &cols {
                data.push(c[r]);
            }
        }
        Ok(StackedW { rows, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn get(&self, r: usize, k: usize) -> f64 {
        self.data[r * 4 + k]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * 4 + k]).collect()
    }

    /// `WᵀW`.
    pub fn gram(&self) -> Mat4 {
        let mut g = [[0.0; 4]; 4];
        for r in 0..self.rows {
            let row = &self.data[r * 4..r * 4 + 4];
            for i in 0..4 {
                for j in 0..4 {
                    g[i][j] += row[i] * row[j];
                }
            }
        }
        g
    }

    pub fn scaled(&self, c: f64) -> Self {
        StackedW { rows: self.rows, data: self.data.iter().map(|v| v * c).collect() }
    }

    /// Inverse of [`stack_w`]: the four `|Y| x q` matrices in column order.
    pub fn unstack(&self, classes: usize, q: usize) -> Result<[Tensor<f64>; 4]> {
        if classes * q != self.rows {
            return Err(Error::shape("unstack", format!("{} rows cannot be viewed as {classes} x {q}", self.rows)));
        }
        let mk = |k: usize| Tensor::from_vec(&[classes, q], self.column(k));
        Ok([mk(0)?, mk(1)?, mk(2)?, mk(3)?])
    }
}

pub fn stack_w(heads: &OutputHeads) -> Result<StackedW> {
    heads.check()?;
    StackedW::from_columns([heads.w_s.data(), heads.w_sc.data(), heads.w_t.data(), heads.w_tc.data()])
}

/// `tr(W Ω⁻¹ Wᵀ)`.
pub fn trace_penalty(w: &StackedW, omega_inv: &Mat4) -> Result<f64> {
    let v = crate::omega::trace_objective(w, omega_inv);
    if !v.is_finite() {
        return Err(Error::non_finite("trace penalty (near-singular covariance?)"));
    }
    Ok(v)
}

/// Gradient of [`trace_penalty`] with respect to `W`: `W (A + Aᵀ)`, i.e.
/// `2 W Ω⁻¹` for symmetric `Ω⁻¹`.
pub fn trace_penalty_grad(w: &StackedW, omega_inv: &Mat4) -> StackedW {
    let mut data = alloc::vec![0.0; w.rows * 4];
    for r in 0..w.rows {
        for k in 0..4 {
            data[r * 4 + k] = (0..4).map(|j| w.get(r, j) * (omega_inv[j][k] + omega_inv[k][j])).sum();
        }
    }
    StackedW { rows: w.rows, data }
}

/// `Σ_p p log p` of a softmax distribution (0·log 0 = 0).
pub fn entropy_term(logits: &[f64]) -> f64 {
    use num_traits::Float;
    softmax(logits).into_iter().map(|p| if p > 0.0 { p * Float::ln(p) } else { 0.0 }).sum()
}

/// `Σ_k (1/n_k) Σ_i Σ_j p(d_ij) log p(d_ij)` over the domain logits of the
/// source and target instances. An empty domain contributes nothing.
pub fn adversarial_entropy_loss(source_logits: &[Vec<f64>], target_logits: &[Vec<f64>]) -> f64 {
    [source_logits, target_logits]
        .iter()
        .filter(|l| !l.is_empty())
        .map(|l| l.iter().map(|z| entropy_term(z)).sum::<f64>() / l.len() as f64)
        .sum()
}

/// Node handles of one evaluation of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: NodeId,
    /// Mean source cross-entropy.
    pub ce_src: Option<NodeId>,
    /// Mean target cross-entropy.
    pub ce_tgt: Option<NodeId>,
    /// `tr(W Ω⁻¹ Wᵀ)` (unweighted).
    pub trace: Option<NodeId>,
    /// Adversarial entropy `ℓ` (unweighted).
    pub adv: Option<NodeId>,
    /// Weighted sum of the L2 terms.
    pub l2: Option<NodeId>,
}

/// Scalar values of [`LossTerms`], each already multiplied by its weight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub ce_src: f64,
    pub ce_tgt: f64,
    pub trace: f64,
    pub adv: f64,
    pub l2: f64,
}

impl LossTerms {
    pub fn values<T: Real>(&self, g: &Graph<'_, T>, w: &LossWeights) -> LossValues {
        let v = |n: Option<NodeId>| n.map_or(0.0, |n| g.scalar(n).as_f64());
        LossValues {
            total: g.scalar(self.total).as_f64(),
            ce_src: v(self.ce_src),
            ce_tgt: v(self.ce_tgt),
            trace: 0.5 * w.lambda1 * v(self.trace),
            adv: w.lambda0 * v(self.adv),
            l2: v(self.l2),
        }
    }
}

/// Builds the training objective on `g`:
///
/// ```text
/// Σ_k (1/n_k) Σ_i CE_i  +  λ1/2 tr(W Ω⁻¹ Wᵀ)  +  λ2/2 ‖W‖²
///   + λ3/2 ‖Θ_c‖² + λ4/2 ‖Θ_s‖² + λ5/2 ‖Θ_t‖²  +  λ0 ℓ
/// ```
///
/// Terms the variant does not have (the trace for non-DRSS variants, `ℓ` for
/// non-adversarial ones), terms with a zero weight, and the private-encoder
/// norm of a domain without a batch are left out.
pub fn combined_loss<T: Real>(
    g: &mut Graph<'_, T>,
    model: &Model<T>,
    src: Option<&Batch>,
    tgt: Option<&Batch>,
    omega_inv: Option<&Mat4>,
    weights: &LossWeights,
) -> Result<LossTerms> {
    weights.validate()?;
    let variant = model.config.variant;
    if variant.has_trace() && weights.lambda1 > 0.0 && omega_inv.is_none() {
        return Err(Error::Config(format!("variant {variant} needs the inverse covariance for its trace term")));
    }
    if src.is_none() && tgt.is_none() {
        return Err(Error::Empty("combined_loss: no batch"));
    }
    let mut ce = [None, None];
    let mut adv_parts: Vec<(NodeId, T)> = Vec::new();
    for (slot, (batch, domain)) in [(src, Domain::Source), (tgt, Domain::Target)].into_iter().enumerate() {
        let Some(batch) = batch else { continue };
        if batch.domain != domain {
            return Err(Error::invalid("combined_loss", format!("{} batch passed as the {domain} batch", batch.domain)));
        }
        if batch.is_empty() {
            return Err(Error::Empty("combined_loss: batch"));
        }
        let inv_n = T::from_f64(1.0 / batch.len() as f64);
        let mut terms = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let out = model.forward_pair(g, &batch.x1[i], &batch.x2[i], domain)?;
            let l = g.softmax_cross_entropy(out.logits, batch.labels[i])?;
            terms.push((l, inv_n));
            if variant.has_adversary() && weights.lambda0 > 0.0 {
                let d = out.domain_logits.ok_or_else(|| Error::Config(format!("variant {variant} has no domain head")))?;
                let e = g.neg_entropy(d)?;
                adv_parts.push((e, inv_n));
            }
        }
        ce[slot] = Some(g.weighted_sum(&terms)?);
    }

    let layout = &model.layout;
    let mut l2_parts: Vec<(NodeId, T)> = Vec::new();
    let mut sq = |g: &mut Graph<'_, T>, ids: &[ParamId], lambda: f64| {
        if lambda > 0.0 && !ids.is_empty() {
            let nodes: Vec<NodeId> = ids.iter().map(|&p| g.param(p)).collect();
            let s = g.sum_squares(&nodes);
            l2_parts.push((s, T::from_f64(0.5 * lambda)));
        }
    };
    sq(g, &layout.head_weights(), weights.lambda2);
    sq(g, &layout.shared.ids(), weights.lambda3);
    if src.is_some() {
        if let Some(p) = &layout.source {
            sq(g, &p.ids(), weights.lambda4);
        }
    }
    if tgt.is_some() {
        if let Some(p) = &layout.target {
            sq(g, &p.ids(), weights.lambda5);
        }
    }
    let l2 = if l2_parts.is_empty() { None } else { Some(g.weighted_sum(&l2_parts)?) };

    let trace = match (variant.has_trace(), omega_inv) {
        (true, Some(inv)) if weights.lambda1 > 0.0 => {
            let cols = layout.stacked_columns().ok_or_else(|| Error::Config(format!("variant {variant} lacks the four heads")))?;
            let nodes = cols.map(|p| g.param(p));
            Some(g.trace_penalty(nodes, inv)?)
        }
        _ => None,
    };
    let adv = if adv_parts.is_empty() { None } else { Some(g.weighted_sum(&adv_parts)?) };

    let mut total: Vec<(NodeId, T)> = Vec::new();
    total.extend(ce.iter().flatten().map(|&n| (n, T::one())));
    if let Some(t) = trace {
        total.push((t, T::from_f64(0.5 * weights.lambda1)));
    }
    if let Some(l) = l2 {
        total.push((l, T::one()));
    }
    if let Some(a) = adv {
        total.push((a, T::from_f64(weights.lambda0)));
    }
    let total = g.weighted_sum(&total)?;
    if !g.scalar(total).is_finite() {
        return Err(Error::non_finite("combined loss"));
    }
    Ok(LossTerms { total, ce_src: ce[0], ce_tgt: ce[1], trace, adv, l2 })
}
