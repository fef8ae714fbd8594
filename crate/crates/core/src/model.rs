//! Parameter layout of every transfer variant and the forward pass from token
//! ids to class logits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{glorot_uniform, Graph, NodeId, ParamId, ParamStore};
use crate::data::{pad_to, Domain, EmbeddingTable, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::hcnn::{hcnn_forward, HcnnConfig, HcnnParams};
use crate::heads::{OutputHeads, StackedW};
use crate::real::Real;
use crate::retrieval::Matcher;
use crate::tensor::Tensor;

/// Training scheme. The first four train one encoder and one head; the rest
/// train the two-domain transfer architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    TgtOnly,
    SrcOnly,
    Mixed,
    FineTune,
    Fs,
    Ss,
    SsAdv,
    Drss,
    DrssAdv,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::TgtOnly,
        Variant::SrcOnly,
        Variant::Mixed,
        Variant::FineTune,
        Variant::Fs,
        Variant::Ss,
        Variant::SsAdv,
        Variant::Drss,
        Variant::DrssAdv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::TgtOnly => "tgt-only",
            Variant::SrcOnly => "src-only",
            Variant::Mixed => "mixed",
            Variant::FineTune => "fine-tune",
            Variant::Fs => "fs",
            Variant::Ss => "ss",
            Variant::SsAdv => "ss-adv",
            Variant::Drss => "drss",
            Variant::DrssAdv => "drss-adv",
        }
    }

    pub fn is_single_domain(self) -> bool {
        matches!(self, Variant::TgtOnly | Variant::SrcOnly | Variant::Mixed | Variant::FineTune)
    }

    pub fn has_private_encoders(self) -> bool {
        matches!(self, Variant::Ss | Variant::SsAdv | Variant::Drss | Variant::DrssAdv)
    }

    pub fn has_adversary(self) -> bool {
        matches!(self, Variant::SsAdv | Variant::DrssAdv)
    }

    pub fn has_trace(self) -> bool {
        matches!(self, Variant::Drss | Variant::DrssAdv)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub hcnn: HcnnConfig,
    /// Number of labels `|Y|`.
    pub classes: usize,
    /// Explicit request for (or against) domain-specific encoders; `None`
    /// follows the variant.
    pub private_encoders: Option<bool>,
}

impl ModelConfig {
    pub fn new(variant: Variant, hcnn: HcnnConfig, classes: usize) -> Self {
        ModelConfig { variant, hcnn, classes, private_encoders: None }
    }

    pub fn validate(&self) -> Result<()> {
        self.hcnn.validate()?;
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        match self.private_encoders {
            Some(true) if !self.variant.has_private_encoders() => Err(Error::Config(format!(
                "variant {} has no domain-specific encoders (Θ_s, Θ_t) but they were requested",
                self.variant
            ))),
            Some(false) if self.variant.has_private_encoders() => Err(Error::Config(format!(
                "variant {} requires domain-specific encoders",
                self.variant
            ))),
            _ => Ok(()),
        }
    }
}

/// Parameter handles. Optional slots are present only for the variants that
/// use them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub embed: ParamId,
    pub shared: HcnnParams,
    pub source: Option<HcnnParams>,
    pub target: Option<HcnnParams>,
    pub w_s: Option<ParamId>,
    pub w_sc: ParamId,
    pub w_t: Option<ParamId>,
    pub w_tc: Option<ParamId>,
    pub b_s: ParamId,
    pub b_t: Option<ParamId>,
    pub w_d: Option<ParamId>,
    pub b_d: Option<ParamId>,
}

impl ModelLayout {
    /// The output weight matrices that exist, in `W_s, W_sc, W_t, W_tc` order.
    pub fn head_weights(&self) -> Vec<ParamId> {
        [self.w_s, Some(self.w_sc), self.w_t, self.w_tc].into_iter().flatten().collect()
    }

    pub fn stacked_columns(&self) -> Option<[ParamId; 4]> {
        Some([self.w_s?, self.w_sc, self.w_t?, self.w_tc?])
    }

    /// Everything a step on `domain` data may update: the shared encoder, the
    /// domain's own encoder and bias, every head matrix, the adversary and the
    /// embeddings.
    pub fn step_params(&self, domain: Domain, embeddings: bool) -> Vec<ParamId> {
        let mut v = self.shared.ids();
        let (enc, bias) = match domain {
            Domain::Source => (&self.source, Some(self.b_s)),
            Domain::Target => (&self.target, self.b_t.or(Some(self.b_s))),
        };
        if let Some(e) = enc {
            v.extend(e.ids());
        }
        v.extend(self.head_weights());
        v.extend(bias);
        v.extend(self.w_d);
        v.extend(self.b_d);
        if embeddings {
            v.push(self.embed);
        }
        v
    }
}

/// Outputs of one pair forward pass.
#[derive(Debug, Clone, Copy)]
pub struct PairOutput {
    pub z_c: NodeId,
    pub z_dom: Option<NodeId>,
    pub logits: NodeId,
    pub domain_logits: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model<T: Real = f64> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore<T>,
    pub layout: ModelLayout,
    pub embeddings_trainable: bool,
}

impl Model<f64> {
    /// Registers all parameters with a seeded fan-scaled uniform
    /// initialization (biases start at zero). Two models built from equal
    /// configurations and seeds are bit-identical.
    pub fn new(config: ModelConfig, table: &EmbeddingTable, seed: u64) -> Result<Self> {
        config.validate()?;
        if table.dim() != config.hcnn.l {
            return Err(Error::Config(format!(
                "embedding dimension {} does not match hCNN l = {}",
                table.dim(),
                config.hcnn.l
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let embed = store.add("embed", table.matrix.clone());
        let variant = config.variant;
        let hc = &config.hcnn;
        let shared = HcnnParams::register(&mut store, "shared", hc, &mut rng)?;
        let (source, target) = if variant.has_private_encoders() {
            (
                Some(HcnnParams::register(&mut store, "source", hc, &mut rng)?),
                Some(HcnnParams::register(&mut store, "target", hc, &mut rng)?),
            )
        } else {
            (None, None)
        };
        let (y, q) = (config.classes, hc.output_dim());
        let mut head = |store: &mut ParamStore<f64>, name: &str, rows: usize| store.add(name, glorot_uniform(&[rows, q], q, rows, &mut rng));
        let w_sc = head(&mut store, "W_sc", y);
        let w_tc = (!variant.is_single_domain()).then(|| head(&mut store, "W_tc", y));
        let (w_s, w_t) = if variant.has_private_encoders() {
            (Some(head(&mut store, "W_s", y)), Some(head(&mut store, "W_t", y)))
        } else {
            (None, None)
        };
        let w_d = variant.has_adversary().then(|| head(&mut store, "W_d", 2));
        let b_s = store.add("b_s", Tensor::zeros(&[y]));
        let b_t = (!variant.is_single_domain()).then(|| store.add("b_t", Tensor::zeros(&[y])));
        let b_d = variant.has_adversary().then(|| store.add("b_d", Tensor::zeros(&[2])));
        let layout = ModelLayout { embed, shared, source, target, w_s, w_sc, w_t, w_tc, b_s, b_t, w_d, b_d };
        Ok(Model { config, vocab: table.vocab.clone(), params: store, layout, embeddings_trainable: table.trainable })
    }
}

impl<T: Real> Model<T> {
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
            embeddings_trainable: self.embeddings_trainable,
        }
    }

    /// Head that serves `domain`. Single-domain variants have one head and
    /// send everything through it.
    pub fn route(&self, domain: Domain) -> Domain {
        if self.config.variant.is_single_domain() {
            Domain::Source
        } else {
            domain
        }
    }

    pub fn forward_pair(&self, g: &mut Graph<'_, T>, x1: &[u32], x2: &[u32], domain: Domain) -> Result<PairOutput> {
        let hc = &self.config.hcnn;
        if x1.len() != hc.m || x2.len() != hc.m {
            return Err(Error::shape("forward_pair", format!("sequences of length {} and {}, expected m = {}", x1.len(), x2.len(), hc.m)));
        }
        let l = &self.layout;
        let e1 = g.embed(l.embed, x1)?;
        let e2 = g.embed(l.embed, x2)?;
        let z_c = hcnn_forward(g, e1, e2, &l.shared, hc)?;
        let (w_c, bias, private, w_p) = match self.route(domain) {
            Domain::Source => (l.w_sc, l.b_s, l.source.as_ref(), l.w_s),
            Domain::Target => (
                l.w_tc.ok_or_else(|| Error::Config(String::from("model has no target head")))?,
                l.b_t.ok_or_else(|| Error::Config(String::from("model has no target bias")))?,
                l.target.as_ref(),
                l.w_t,
            ),
        };
        let (w_c, bias) = (g.param(w_c), g.param(bias));
        let mut logits = g.affine(z_c, w_c, Some(bias))?;
        let mut z_dom = None;
        if let (Some(p), Some(w_p)) = (private, w_p) {
            let z = hcnn_forward(g, e1, e2, p, hc)?;
            let w_p = g.param(w_p);
            let t = g.affine(z, w_p, None)?;
            logits = g.add(logits, t)?;
            z_dom = Some(z);
        }
        let domain_logits = match (l.w_d, l.b_d) {
            (Some(w), Some(b)) => {
                let (w, b) = (g.param(w), g.param(b));
                Some(g.affine(z_c, w, Some(b))?)
            }
            _ => None,
        };
        Ok(PairOutput { z_c, z_dom, logits, domain_logits })
    }

    /// Class distributions for a batch of padded pairs, computed in one graph.
    pub fn predict_batch(&self, pairs: &[(&[u32], &[u32])], domain: Domain) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(&self.params);
        let mut out = Vec::with_capacity(pairs.len());
        for (x1, x2) in pairs {
            let o = self.forward_pair(&mut g, x1, x2, domain)?;
            let z: Vec<f64> = g.value(o.logits).data().iter().map(|v| v.as_f64()).collect();
            let p = crate::heads::softmax(&z);
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite("class probabilities"));
            }
            out.push(p);
        }
        Ok(out)
    }

    pub fn predict_proba(&self, x1: &[u32], x2: &[u32], domain: Domain) -> Result<Vec<f64>> {
        Ok(self.predict_batch(&[(x1, x2)], domain)?.pop().expect("one pair"))
    }

    /// Parameter groups reported by gradient checks.
    pub fn parameter_groups(&self) -> Vec<(String, Vec<ParamId>)> {
        let l = &self.layout;
        let mut groups = vec![(String::from("theta_c"), l.shared.ids())];
        if let Some(p) = &l.source {
            groups.push((String::from("theta_s"), p.ids()));
        }
        if let Some(p) = &l.target {
            groups.push((String::from("theta_t"), p.ids()));
        }
        let mut heads = l.head_weights();
        heads.push(l.b_s);
        heads.extend(l.b_t);
        groups.push((String::from("heads"), heads));
        let adv: Vec<ParamId> = [l.w_d, l.b_d].into_iter().flatten().collect();
        if !adv.is_empty() {
            groups.push((String::from("adversary"), adv));
        }
        groups.push((String::from("embeddings"), vec![l.embed]));
        groups
    }

    /// Current head weights as plain `f64` tensors (absent heads are zero).
    pub fn output_heads(&self) -> OutputHeads {
        let l = &self.layout;
        let (y, q) = (self.config.classes, self.config.hcnn.output_dim());
        let get = |id: Option<ParamId>, shape: &[usize]| id.map_or_else(|| Tensor::zeros(shape), |id| self.params.get(id).cast());
        OutputHeads {
            w_s: get(l.w_s, &[y, q]),
            w_sc: get(Some(l.w_sc), &[y, q]),
            w_t: get(l.w_t, &[y, q]),
            w_tc: get(l.w_tc, &[y, q]),
            b_s: get(Some(l.b_s), &[y]),
            b_t: get(l.b_t, &[y]),
        }
    }

    /// The stacked `(q·|Y|) x 4` head matrix; only for variants with all four
    /// heads.
    pub fn stacked_w(&self) -> Result<StackedW> {
        let cols = self
            .layout
            .stacked_columns()
            .ok_or_else(|| Error::Config(format!("variant {} does not have the four output heads", self.config.variant)))?;
        let data: Vec<Vec<f64>> = cols.iter().map(|&c| self.params.get(c).data().iter().map(|v| v.as_f64()).collect()).collect();
        StackedW::from_columns([&data[0], &data[1], &data[2], &data[3]])
    }

    fn encode_padded(&self, text: &str) -> Vec<u32> {
        pad_to(&self.vocab.encode(text), self.config.hcnn.m)
    }
}

impl<T: Real> Matcher for Model<T> {
    fn paraphrase_probs(&self, query: &str, candidates: &[&str]) -> Result<Vec<f64>> {
        let q = self.encode_padded(query);
        let cands: Vec<Vec<u32>> = candidates.iter().map(|c| self.encode_padded(c)).collect();
        let pairs: Vec<(&[u32], &[u32])> = cands.iter().map(|c| (q.as_slice(), c.as_slice())).collect();
        let probs = self.predict_batch(&pairs, Domain::Target)?;
        Ok(probs.into_iter().map(|p| p.get(1).copied().unwrap_or(0.0)).collect())
    }

    fn sentence_embedding(&self, text: &str) -> Vec<f64> {
        let table = self.params.get(self.layout.embed);
        let l = table.shape()[1];
        let ids: Vec<u32> = self.vocab.encode(text).into_iter().filter(|&i| i != PAD).collect();
        let mut mean = vec![0.0; l];
        for &id in &ids {
            for (m, v) in mean.iter_mut().zip(&table.data()[id as usize * l..(id as usize + 1) * l]) {
                *m += v.as_f64();
            }
        }
        if !ids.is_empty() {
            mean.iter_mut().for_each(|m| *m /= ids.len() as f64);
        }
        mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EmbeddingTable {
        let mut t = EmbeddingTable::empty(4, 1);
        t.extend(["a", "b", "c"]);
        t
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("drss-plus".parse::<Variant>().is_err());
    }

    #[test]
    fn private_encoders_must_match_variant() {
        let mut cfg = ModelConfig::new(Variant::Fs, HcnnConfig::new(8, 4, 3), 2);
        cfg.private_encoders = Some(true);
        assert!(matches!(Model::new(cfg.clone(), &table(), 0), Err(Error::Config(_))));
        cfg.private_encoders = None;
        assert!(Model::new(cfg, &table(), 0).is_ok());
    }

    #[test]
    fn layouts_follow_variants() {
        let hc = HcnnConfig::new(8, 4, 3);
        let single = Model::new(ModelConfig::new(Variant::TgtOnly, hc.clone(), 2), &table(), 0).unwrap();
        assert!(single.layout.w_tc.is_none() && single.layout.source.is_none());
        let full = Model::new(ModelConfig::new(Variant::DrssAdv, hc.clone(), 3), &table(), 0).unwrap();
        assert!(full.layout.stacked_columns().is_some() && full.layout.w_d.is_some());
        assert_eq!(full.stacked_w().unwrap().rows(), 3 * hc.output_dim());
        let ss = Model::new(ModelConfig::new(Variant::Ss, hc.clone(), 2), &table(), 5).unwrap();
        let drss = Model::new(ModelConfig::new(Variant::Drss, hc, 2), &table(), 5).unwrap();
        assert_eq!(ss.params, drss.params);
    }

    #[test]
    fn wrong_embedding_width_is_rejected() {
        let cfg = ModelConfig::new(Variant::Ss, HcnnConfig::new(8, 5, 3), 2);
        assert!(Model::new(cfg, &table(), 0).is_err());
    }
}
