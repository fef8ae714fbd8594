//! Training loops: the alternating source/target schedule with periodic
//! closed-form covariance updates, and the single-domain baselines.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdaGrad, Graph, ParamId};
use crate::data::{batch_iter, Batch, Domain, EmbeddingTable, Example};
use crate::error::{Error, Result};
use crate::hcnn::HcnnConfig;
use crate::heads::{combined_loss, LossValues, LossWeights};
use crate::metrics::{accuracy, auc};
use crate::model::{Model, ModelConfig, Variant};
use crate::omega::{omega_inverse, update_omega, Mat4, Omega, DEFAULT_RIDGE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub max_epoch: usize,
    /// Target-phase epochs of fine-tuning; `None` uses `max_epoch`.
    pub finetune_epochs: Option<usize>,
    pub batch_src: usize,
    pub batch_tgt: usize,
    pub m: usize,
    pub filters: usize,
    pub classes: usize,
    pub seed: u64,
    /// Epochs without a dev-accuracy improvement before stopping.
    pub patience: usize,
    pub freeze_embeddings: bool,
    pub shared_filters: bool,
    pub private_encoders: Option<bool>,
    /// Recompute the covariance whenever the target stream wraps around.
    pub omega_updates: bool,
    pub ridge: f64,
    pub bcnn: bool,
    pub pyramid: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Drss,
            weights: LossWeights::default(),
            learning_rate: 0.08,
            epsilon: 1e-8,
            max_epoch: 10,
            finetune_epochs: None,
            batch_src: 64,
            batch_tgt: 64,
            m: 32,
            filters: 50,
            classes: 2,
            seed: 1,
            patience: 3,
            freeze_embeddings: false,
            shared_filters: false,
            private_encoders: None,
            omega_updates: true,
            ridge: DEFAULT_RIDGE,
            bcnn: true,
            pyramid: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_src == 0 || self.batch_tgt == 0 {
            return Err(Error::Config(format!("batch sizes must be >= 1 (got {} and {})", self.batch_src, self.batch_tgt)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("learning rate {} and epsilon {} must be positive", self.learning_rate, self.epsilon)));
        }
        if !(self.ridge > 0.0 && self.ridge.is_finite()) {
            return Err(Error::Config(format!("ridge {} must be positive", self.ridge)));
        }
        Ok(())
    }

    pub fn hcnn(&self, l: usize) -> HcnnConfig {
        let mut h = HcnnConfig::new(self.m, l, self.filters);
        h.shared_filters = self.shared_filters;
        h.bcnn = self.bcnn;
        h.pyramid = self.pyramid;
        h
    }

    pub fn model_config(&self, l: usize) -> ModelConfig {
        let mut c = ModelConfig::new(self.variant, self.hcnn(l), self.classes);
        c.private_encoders = self.private_encoders;
        c
    }
}

/// One line of the training history. Loss components are epoch means of the
/// weighted per-step values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce_src: f64,
    pub ce_tgt: f64,
    pub trace_term: f64,
    pub adv_term: f64,
    pub l2_term: f64,
    pub dev_acc: f64,
    /// `None` when the dev set has a single class or more than two labels.
    pub dev_auc: Option<f64>,
    pub omega_updates: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best dev epoch.
    pub model: Model<f64>,
    /// Covariance matching `model` (two-domain variants only).
    pub omega: Option<Omega>,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of `model`, 0 when no epoch completed.
    pub best_epoch: usize,
    pub best_dev_acc: Option<f64>,
    /// Why training stopped early on a numerical failure.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub n: usize,
}

const EVAL_CHUNK: usize = 256;

/// Accuracy and (binary) AUC of `model` on `examples`, served by the head of
/// `domain`.
pub fn evaluate(model: &Model<f64>, examples: &[Example], domain: Domain) -> Result<EvalMetrics> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluate: no examples"));
    }
    let m = model.config.hcnn.m;
    let mut preds = Vec::with_capacity(examples.len());
    let mut scores = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_CHUNK) {
        let b = Batch::from_examples(chunk, domain, m);
        let pairs: Vec<(&[u32], &[u32])> = b.x1.iter().zip(&b.x2).map(|(a, c)| (a.as_slice(), c.as_slice())).collect();
        for p in model.predict_batch(&pairs, domain)? {
            let arg = p.iter().enumerate().fold(0, |best, (i, v)| if *v > p[best] { i } else { best });
            preds.push(arg);
            scores.push(p.get(1).copied().unwrap_or(0.0));
        }
    }
    let golds: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let acc = accuracy(&preds, &golds)?;
    let auc = if model.config.classes == 2 {
        let pos: Vec<bool> = golds.iter().map(|&g| g == 1).collect();
        auc(&scores, &pos).ok()
    } else {
        None
    };
    Ok(EvalMetrics { accuracy: acc, auc, n: examples.len() })
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SOURCE: u64 = 1;
const STREAM_TARGET: u64 = 2;
const STREAM_SINGLE: u64 = 3;

#[derive(Default)]
struct EpochSums {
    src: LossValues,
    tgt: LossValues,
    src_steps: usize,
    tgt_steps: usize,
}

impl EpochSums {
    fn add(&mut self, v: LossValues, domain: Domain) {
        let (s, n) = match domain {
            Domain::Source => (&mut self.src, &mut self.src_steps),
            Domain::Target => (&mut self.tgt, &mut self.tgt_steps),
        };
        s.ce_src += v.ce_src;
        s.ce_tgt += v.ce_tgt;
        s.trace += v.trace;
        s.adv += v.adv;
        s.l2 += v.l2;
        *n += 1;
    }

    fn record(&self, epoch: usize, dev: EvalMetrics, omega_updates: usize) -> EpochRecord {
        let mean = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
        let steps = self.src_steps + self.tgt_steps;
        EpochRecord {
            epoch,
            ce_src: mean(self.src.ce_src, self.src_steps),
            ce_tgt: mean(self.tgt.ce_tgt, self.tgt_steps),
            trace_term: mean(self.src.trace + self.tgt.trace, steps),
            adv_term: mean(self.src.adv + self.tgt.adv, steps),
            l2_term: mean(self.src.l2 + self.tgt.l2, steps),
            dev_acc: dev.accuracy,
            dev_auc: dev.auc,
            omega_updates,
        }
    }
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    model: Model<f64>,
    opt: AdaGrad<f64>,
    omega: Option<Omega>,
    omega_inv: Option<Mat4>,
    history: Vec<EpochRecord>,
    best: Option<(Model<f64>, Option<Omega>, usize, f64)>,
    stale: usize,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a TrainConfig, model: Model<f64>) -> Result<Self> {
        let (omega, omega_inv) = if model.config.variant.has_trace() {
            let o = Omega::quarter_identity();
            (Some(o), Some(omega_inverse(&o, cfg.ridge)?))
        } else {
            (None, None)
        };
        Ok(Trainer {
            cfg,
            model,
            opt: AdaGrad::new(cfg.learning_rate, cfg.epsilon),
            omega,
            omega_inv,
            history: Vec::new(),
            best: None,
            stale: 0,
        })
    }

    /// One gradient step on a batch from the domain it is tagged with.
    fn step(&mut self, batch: &Batch) -> Result<LossValues> {
        let domain = batch.domain;
        let (src, tgt) = match domain {
            Domain::Source => (Some(batch), None),
            Domain::Target => (None, Some(batch)),
        };
        let g_result = {
            let mut g = Graph::new(&self.model.params);
            let terms = combined_loss(&mut g, &self.model, src, tgt, self.omega_inv.as_ref(), &self.cfg.weights)?;
            let values = terms.values(&g, &self.cfg.weights);
            let grads = g.backward(terms.total)?;
            (values, grads)
        };
        let (values, grads) = g_result;
        let active: Vec<ParamId> = self.model.layout.step_params(domain, self.model.embeddings_trainable);
        self.opt.step(&mut self.model.params, &grads, |id| active.contains(&id))?;
        Ok(values)
    }

    fn refresh_omega(&mut self) -> Result<()> {
        let o = update_omega(&self.model.stacked_w()?)?;
        self.omega_inv = Some(omega_inverse(&o, self.cfg.ridge)?);
        self.omega = Some(o);
        Ok(())
    }

    /// Records the epoch and tracks the best dev accuracy. Returns `true`
    /// when patience is exhausted.
    fn end_epoch(&mut self, sums: &EpochSums, dev: &[Example], omega_updates: usize, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<bool> {
        let epoch = self.history.len() + 1;
        let metrics = evaluate(&self.model, dev, Domain::Target)?;
        let rec = sums.record(epoch, metrics, omega_updates);
        for v in [rec.ce_src, rec.ce_tgt, rec.trace_term, rec.adv_term, rec.l2_term] {
            if !v.is_finite() {
                return Err(Error::non_finite(format!("epoch {epoch} training loss")));
            }
        }
        on_epoch(&rec);
        self.history.push(rec);
        let improved = self.best.as_ref().is_none_or(|b| metrics.accuracy > b.3);
        if improved {
            self.best = Some((self.model.clone(), self.omega, epoch, metrics.accuracy));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Ok(self.stale >= self.cfg.patience.max(1))
    }

    fn finish(self, aborted: Option<String>) -> TrainOutcome {
        match self.best {
            Some((model, omega, epoch, acc)) => TrainOutcome {
                model,
                omega,
                history: self.history,
                best_epoch: epoch,
                best_dev_acc: Some(acc),
                aborted,
            },
            None => TrainOutcome {
                model: self.model,
                omega: self.omega,
                history: self.history,
                best_epoch: 0,
                best_dev_acc: None,
                aborted,
            },
        }
    }

    /// Alternating schedule: every source step is followed by one target
    /// step; the target batches cycle, and each time the cycle completes the
    /// covariance is recomputed (trace variants with updates enabled).
    fn run_alternating(
        mut self,
        d_s: &[Example],
        d_t: &[Example],
        dev: &[Example],
        on_epoch: &mut dyn FnMut(&EpochRecord),
    ) -> Result<TrainOutcome> {
        let cfg = self.cfg;
        let m = cfg.m;
        let update = self.model.config.variant.has_trace() && cfg.omega_updates;
        for epoch in 0..cfg.max_epoch as u64 {
            let src = batch_iter(d_s, cfg.batch_src, true, mix(cfg.seed, STREAM_SOURCE, epoch), Domain::Source, m)?;
            let mut cycle = 0u64;
            let mut tgt = batch_iter(d_t, cfg.batch_tgt, true, mix(cfg.seed, STREAM_TARGET, epoch << 32), Domain::Target, m)?;
            let mut c_t = 0;
            let mut sums = EpochSums::default();
            let mut updates = 0;
            for batch in &src {
                match self.step(batch) {
                    Ok(v) => sums.add(v, Domain::Source),
                    Err(e) => return Ok(self.finish(Some(format!("{e}")))),
                }
                match self.step(&tgt[c_t]) {
                    Ok(v) => sums.add(v, Domain::Target),
                    Err(e) => return Ok(self.finish(Some(format!("{e}")))),
                }
                c_t += 1;
                if c_t == tgt.len() {
                    c_t = 0;
                    cycle += 1;
                    if update {
                        if let Err(e) = self.refresh_omega() {
                            return Ok(self.finish(Some(format!("{e}"))));
                        }
                        updates += 1;
                    }
                    tgt = batch_iter(d_t, cfg.batch_tgt, true, mix(cfg.seed, STREAM_TARGET, (epoch << 32) | cycle), Domain::Target, m)?;
                }
            }
            match self.end_epoch(&sums, dev, updates, on_epoch) {
                Ok(true) => break,
                Ok(false) => {}
                Err(e @ Error::NonFinite { .. }) => return Ok(self.finish(Some(format!("{e}")))),
                Err(e) => return Err(e),
            }
        }
        Ok(self.finish(None))
    }

    /// Plain mini-batch epochs over one corpus through the single head.
    fn run_single(mut self, data: &[Example], dev: &[Example], epochs: usize, stream: u64, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<TrainOutcome> {
        let cfg = self.cfg;
        let b = if stream == STREAM_TARGET { cfg.batch_tgt } else { cfg.batch_src };
        for epoch in 0..epochs as u64 {
            let batches = batch_iter(data, b, true, mix(cfg.seed, stream, epoch), Domain::Source, cfg.m)?;
            let mut sums = EpochSums::default();
            for batch in &batches {
                match self.step(batch) {
                    Ok(v) => sums.add(v, Domain::Source),
                    Err(e) => return Ok(self.finish(Some(format!("{e}")))),
                }
            }
            match self.end_epoch(&sums, dev, 0, on_epoch) {
                Ok(true) => break,
                Ok(false) => {}
                Err(e @ Error::NonFinite { .. }) => return Ok(self.finish(Some(format!("{e}")))),
                Err(e) => return Err(e),
            }
        }
        Ok(self.finish(None))
    }
}

fn build_model(cfg: &TrainConfig, table: &EmbeddingTable) -> Result<Model<f64>> {
    cfg.validate()?;
    let mut model = Model::new(cfg.model_config(table.dim()), table, cfg.seed)?;
    model.embeddings_trainable = table.trainable && !cfg.freeze_embeddings;
    Ok(model)
}

fn require(data: &[Example], what: &'static str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty(what));
    }
    Ok(())
}

/// Trains a trace-regularized variant (DRSS or DRSS-Adv).
pub fn train_drss(
    cfg: &TrainConfig,
    table: &EmbeddingTable,
    d_s: &[Example],
    d_t: &[Example],
    dev: &[Example],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if !cfg.variant.has_trace() {
        return Err(Error::Config(format!("train_drss needs a trace variant, got {}", cfg.variant)));
    }
    require(d_s, "source training set")?;
    require(d_t, "target training set")?;
    require(dev, "dev set")?;
    let model = build_model(cfg, table)?;
    Trainer::new(cfg, model)?.run_alternating(d_s, d_t, dev, on_epoch)
}

/// Trains any variant without the trace term: the single-domain baselines
/// and FS, SS, SS-Adv.
pub fn train_baseline(
    cfg: &TrainConfig,
    table: &EmbeddingTable,
    d_s: &[Example],
    d_t: &[Example],
    dev: &[Example],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if cfg.variant.has_trace() {
        return Err(Error::Config(format!("{} is trained by train_drss", cfg.variant)));
    }
    require(dev, "dev set")?;
    let model = build_model(cfg, table)?;
    let trainer = Trainer::new(cfg, model)?;
    match cfg.variant {
        Variant::TgtOnly => {
            require(d_t, "target training set")?;
            trainer.run_single(d_t, dev, cfg.max_epoch, STREAM_TARGET, on_epoch)
        }
        Variant::SrcOnly => {
            require(d_s, "source training set")?;
            trainer.run_single(d_s, dev, cfg.max_epoch, STREAM_SOURCE, on_epoch)
        }
        Variant::Mixed => {
            let mixed: Vec<Example> = d_s.iter().chain(d_t).cloned().collect();
            require(&mixed, "training set")?;
            trainer.run_single(&mixed, dev, cfg.max_epoch, STREAM_SINGLE, on_epoch)
        }
        Variant::FineTune => {
            require(d_s, "source training set")?;
            require(d_t, "target training set")?;
            let first = trainer.run_single(d_s, dev, cfg.max_epoch, STREAM_SOURCE, on_epoch)?;
            let epochs = cfg.finetune_epochs.unwrap_or(cfg.max_epoch);
            if first.aborted.is_some() || epochs == 0 {
                return Ok(first);
            }
            let mut second = Trainer::new(cfg, first.model.clone())?;
            second.history = first.history.clone();
            second.best = Some((first.model, None, first.best_epoch, first.best_dev_acc.unwrap_or(f64::NEG_INFINITY)));
            second.run_single(d_t, dev, epochs, STREAM_TARGET, on_epoch)
        }
        Variant::Fs | Variant::Ss | Variant::SsAdv => {
            require(d_s, "source training set")?;
            require(d_t, "target training set")?;
            trainer.run_alternating(d_s, d_t, dev, on_epoch)
        }
        Variant::Drss | Variant::DrssAdv => unreachable!("rejected above"),
    }
}

/// Dispatches on the configured variant.
pub fn train(
    cfg: &TrainConfig,
    table: &EmbeddingTable,
    d_s: &[Example],
    d_t: &[Example],
    dev: &[Example],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if cfg.variant.has_trace() {
        train_drss(cfg, table, d_s, d_t, dev, on_epoch)
    } else {
        train_baseline(cfg, table, d_s, d_t, dev, on_epoch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TextPair;
    use crate::synth::{synth_generate, SynthSpec};

    fn tiny() -> (EmbeddingTable, Vec<Example>, Vec<Example>, Vec<Example>) {
        let spec = SynthSpec { n_src: 40, n_tgt: 16, n_dev: 12, n_test: 4, shared_size: 30, ..SynthSpec::default() };
        let data = synth_generate(&spec).unwrap();
        let mut table = EmbeddingTable::empty(4, 3);
        let all: Vec<&TextPair> = data.source.iter().chain(&data.target).chain(&data.dev).collect();
        let tokens: Vec<String> = all.iter().flat_map(|p| crate::data::tokenize(&p.s1).into_iter().chain(crate::data::tokenize(&p.s2))).collect();
        table.extend(tokens.iter().map(String::as_str));
        let enc = |v: &[TextPair]| v.iter().map(|p| Example::from_text(p, &table.vocab, 2).unwrap()).collect::<Vec<_>>();
        let (s, t, d) = (enc(&data.source), enc(&data.target), enc(&data.dev));
        (table, s, t, d)
    }

    fn cfg(variant: Variant) -> TrainConfig {
        TrainConfig { variant, max_epoch: 2, batch_src: 5, batch_tgt: 4, m: 12, filters: 3, patience: 5, ..TrainConfig::default() }
    }

    #[test]
    fn omega_updates_follow_the_target_cycle() {
        let (table, s, t, d) = tiny();
        let out = train(&cfg(Variant::Drss), &table, &s, &t, &d, &mut |_| {}).unwrap();
        assert!(out.aborted.is_none());
        // 8 source batches, 4 target batches
        assert!(out.history.iter().all(|r| r.omega_updates == 2));
        out.omega.unwrap().validate().unwrap();
    }

    #[test]
    fn deterministic_history() {
        let (table, s, t, d) = tiny();
        let a = train(&cfg(Variant::SsAdv), &table, &s, &t, &d, &mut |_| {}).unwrap();
        let b = train(&cfg(Variant::SsAdv), &table, &s, &t, &d, &mut |_| {}).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn empty_inputs_rejected() {
        let (table, s, _, d) = tiny();
        assert!(matches!(train(&cfg(Variant::Drss), &table, &s, &[], &d, &mut |_| {}), Err(Error::Empty(_))));
        assert!(train(&cfg(Variant::Drss), &table, &[], &s, &d, &mut |_| {}).is_err());
    }

    #[test]
    fn fine_tune_without_target_epochs_is_source_only() {
        let (table, s, t, d) = tiny();
        let ft = TrainConfig { finetune_epochs: Some(0), ..cfg(Variant::FineTune) };
        let a = train(&ft, &table, &s, &t, &d, &mut |_| {}).unwrap();
        let b = train(&cfg(Variant::SrcOnly), &table, &s, &t, &d, &mut |_| {}).unwrap();
        assert_eq!(evaluate(&a.model, &d, Domain::Target).unwrap(), evaluate(&b.model, &d, Domain::Target).unwrap());
    }

    #[test]
    fn pad_row_stays_zero() {
        let (table, s, t, d) = tiny();
        let out = train(&cfg(Variant::Fs), &table, &s, &t, &d, &mut |_| {}).unwrap();
        let e = out.model.params.get(out.model.layout.embed);
        assert!(e.data()[..4].iter().all(|&v| v == 0.0));
    }
}
