//! Hybrid CNN pair encoder: a sentence-encoding branch (per-sentence 1-D
//! convolution, max over time, and element-wise comparison features) and a
//! sentence-interaction branch (2-D convolutions over the word-by-word
//! dot-product matrix). The pair representation is their concatenation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{glorot_uniform, Activation, Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub kernel: usize,
    pub maps: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool2dSpec {
    pub size: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcnnConfig {
    /// Padded sentence length.
    pub m: usize,
    /// Embedding dimension.
    pub l: usize,
    /// Feature maps of each sentence convolution.
    pub filters: usize,
    pub window: usize,
    /// Use one filter bank for both sentences.
    pub shared_filters: bool,
    pub bcnn: bool,
    pub pyramid: bool,
    pub conv1: Conv2dSpec,
    pub pool1: Pool2dSpec,
    pub conv2: Conv2dSpec,
    pub pool2: Pool2dSpec,
}

impl HcnnConfig {
    /// Defaults with `filters` sentence feature maps (50 for paraphrase
    /// identification, 100 for inference).
    pub fn new(m: usize, l: usize, filters: usize) -> Self {
        HcnnConfig {
            m,
            l,
            filters,
            window: 4,
            shared_filters: false,
            bcnn: true,
            pyramid: true,
            conv1: Conv2dSpec { kernel: 6, maps: 8, stride: 1 },
            pool1: Pool2dSpec { size: 4, stride: 4 },
            conv2: Conv2dSpec { kernel: 4, maps: 16, stride: 3 },
            pool2: Pool2dSpec { size: 2, stride: 2 },
        }
    }

    pub fn paraphrase(m: usize, l: usize) -> Self {
        Self::new(m, l, 50)
    }

    pub fn inference(m: usize, l: usize) -> Self {
        Self::new(m, l, 100)
    }

    /// Smallest admissible padded length.
    pub fn min_m(&self) -> usize {
        let mut min = 1;
        if self.bcnn {
            min = min.max(self.window);
        }
        if self.pyramid {
            min = min.max(self.conv1.kernel);
        }
        min
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bcnn && !self.pyramid {
            return Err(Error::Config(String::from("hCNN needs at least one of the two branches")));
        }
        if self.l == 0 || self.filters == 0 || self.window == 0 {
            return Err(Error::Config(format!("l ({}), filters ({}) and window ({}) must be >= 1", self.l, self.filters, self.window)));
        }
        if self.m < self.min_m() {
            return Err(Error::Config(format!("sentence length m = {} is below the required minimum {}", self.m, self.min_m())));
        }
        for (name, s) in [("conv1", self.conv1), ("conv2", self.conv2)] {
            if s.kernel == 0 || s.maps == 0 || s.stride == 0 {
                return Err(Error::Config(format!("{name}: kernel, maps and stride must be >= 1")));
            }
        }
        for (name, p) in [("pool1", self.pool1), ("pool2", self.pool2)] {
            if p.size == 0 || p.stride == 0 {
                return Err(Error::Config(format!("{name}: size and stride must be >= 1")));
            }
        }
        Ok(())
    }

    /// `(h, w, channels)` after each of conv1, pool1, conv2, pool2.
    pub fn pyramid_shapes(&self) -> [[usize; 3]; 4] {
        let c1 = self.m.div_ceil(self.conv1.stride);
        let p1 = c1.div_ceil(self.pool1.stride);
        let c2 = p1.div_ceil(self.conv2.stride);
        let p2 = c2.div_ceil(self.pool2.stride);
        [
            [c1, c1, self.conv1.maps],
            [p1, p1, self.conv1.maps],
            [c2, c2, self.conv2.maps],
            [p2, p2, self.conv2.maps],
        ]
    }

    pub fn bcnn_dim(&self) -> usize {
        if self.bcnn {
            4 * self.filters
        } else {
            0
        }
    }

    pub fn pyramid_dim(&self) -> usize {
        if self.pyramid {
            let [h, w, c] = self.pyramid_shapes()[3];
            h * w * c
        } else {
            0
        }
    }

    /// Size `q` of the pair representation.
    pub fn output_dim(&self) -> usize {
        self.bcnn_dim() + self.pyramid_dim()
    }
}

/// Parameter handles of one hCNN instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcnnParams {
    pub conv_s1: Option<(ParamId, ParamId)>,
    pub conv_s2: Option<(ParamId, ParamId)>,
    pub pyr1: Option<(ParamId, ParamId)>,
    pub pyr2: Option<(ParamId, ParamId)>,
}

impl HcnnParams {
    /// Registers fan-scaled uniform weights and zero biases under `prefix`.
    pub fn register<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, cfg: &HcnnConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (w, l, f) = (cfg.window, cfg.l, cfg.filters);
        let conv = |store: &mut ParamStore<T>, name: &str, rng: &mut R| {
            let filt = store.add(format!("{prefix}.{name}.w"), glorot_uniform(&[w, l, f], w * l, w * f, rng));
            let bias = store.add(format!("{prefix}.{name}.b"), Tensor::zeros(&[f]));
            (filt, bias)
        };
        let (conv_s1, conv_s2) = if cfg.bcnn {
            let a = conv(store, "conv_s1", rng);
            let b = if cfg.shared_filters { a } else { conv(store, "conv_s2", rng) };
            (Some(a), Some(b))
        } else {
            (None, None)
        };
        let (pyr1, pyr2) = if cfg.pyramid {
            let (k1, c1) = (cfg.conv1.kernel, cfg.conv1.maps);
            let (k2, c2) = (cfg.conv2.kernel, cfg.conv2.maps);
            let p1 = (
                store.add(format!("{prefix}.pyr1.w"), glorot_uniform(&[k1, k1, 1, c1], k1 * k1, k1 * k1 * c1, rng)),
                store.add(format!("{prefix}.pyr1.b"), Tensor::zeros(&[c1])),
            );
            let p2 = (
                store.add(format!("{prefix}.pyr2.w"), glorot_uniform(&[k2, k2, c1, c2], k2 * k2 * c1, k2 * k2 * c2, rng)),
                store.add(format!("{prefix}.pyr2.b"), Tensor::zeros(&[c2])),
            );
            (Some(p1), Some(p2))
        } else {
            (None, None)
        };
        Ok(HcnnParams { conv_s1, conv_s2, pyr1, pyr2 })
    }

    /// Distinct parameter ids of this encoder.
    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        for (a, b) in [self.conv_s1, self.conv_s2, self.pyr1, self.pyr2].into_iter().flatten() {
            for id in [a, b] {
                if !v.contains(&id) {
                    v.push(id);
                }
            }
        }
        v
    }
}

/// `H_b = h1 ⊕ h2 ⊕ (h1 − h2) ⊕ (h1 · h2)` where `h_i` is the max over time
/// of the ReLU convolution of sentence `i`.
pub fn bcnn_encode<T: Real>(g: &mut Graph<'_, T>, x1: NodeId, x2: NodeId, p: &HcnnParams) -> Result<NodeId> {
    let (Some((w1, b1)), Some((w2, b2))) = (p.conv_s1, p.conv_s2) else {
        return Err(Error::Config(String::from("BCNN branch is disabled for this encoder")));
    };
    let (w1, b1, w2, b2) = (g.param(w1), g.param(b1), g.param(w2), g.param(b2));
    let c1 = g.conv1d(x1, w1, b1, Activation::Relu)?;
    let h1 = g.global_max_pool_1d(c1)?;
    let c2 = g.conv1d(x2, w2, b2, Activation::Relu)?;
    let h2 = g.global_max_pool_1d(c2)?;
    let diff = g.sub(h1, h2)?;
    let prod = g.mul(h1, h2)?;
    g.concat(&[h1, h2, diff, prod])
}

/// `M[i, j] = <x1_i, x2_j>` as an `m x m x 1` image.
pub fn interaction_matrix<T: Real>(g: &mut Graph<'_, T>, x1: NodeId, x2: NodeId) -> Result<NodeId> {
    g.interaction(x1, x2)
}

/// conv(6x6, stride 1) → pool(4, 4) → conv(4x4, stride 3) → pool(2, 2),
/// flattened.
pub fn pyramid_encode<T: Real>(g: &mut Graph<'_, T>, image: NodeId, p: &HcnnParams, cfg: &HcnnConfig) -> Result<NodeId> {
    let (Some((k1, b1)), Some((k2, b2))) = (p.pyr1, p.pyr2) else {
        return Err(Error::Config(String::from("Pyramid branch is disabled for this encoder")));
    };
    let (k1, b1, k2, b2) = (g.param(k1), g.param(b1), g.param(k2), g.param(b2));
    let a = g.conv2d(image, k1, b1, cfg.conv1.stride, Activation::Relu)?;
    let a = g.max_pool_2d(a, cfg.pool1.size, cfg.pool1.stride)?;
    let a = g.conv2d(a, k2, b2, cfg.conv2.stride, Activation::Relu)?;
    let a = g.max_pool_2d(a, cfg.pool2.size, cfg.pool2.stride)?;
    let n = g.value(a).len();
    g.reshape(a, &[n])
}

/// Pair representation `z = H_b ⊕ H_p` of two embedded, padded sentences
/// (`m x l` each).
pub fn hcnn_forward<T: Real>(g: &mut Graph<'_, T>, x1: NodeId, x2: NodeId, p: &HcnnParams, cfg: &HcnnConfig) -> Result<NodeId> {
    for x in [x1, x2] {
        let s = g.value(x).shape();
        if s != [cfg.m, cfg.l] {
            return Err(Error::shape("hcnn_forward", format!("sentence matrix {s:?}, expected [{}, {}]", cfg.m, cfg.l)));
        }
    }
    let mut parts = Vec::with_capacity(2);
    if cfg.bcnn {
        parts.push(bcnn_encode(g, x1, x2, p)?);
    }
    if cfg.pyramid {
        let im = interaction_matrix(g, x1, x2)?;
        parts.push(pyramid_encode(g, im, p, cfg)?);
    }
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        g.concat(&parts)
    }
}
