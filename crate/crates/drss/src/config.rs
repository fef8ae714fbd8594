//! Flat `key = value` configuration files for training and for the
//! synthetic-data generator. `#` starts a comment; blank lines are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use drss_core::model::Variant;
use drss_core::synth::SynthSpec;
use drss_core::trainer::TrainConfig;

use crate::error::{DrssError, Result};

/// Parsed assignments with the line each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    pub origin: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut kv = KeyValues { origin: origin.to_string(), entries: BTreeMap::new() };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(DrssError::parse(Path::new(origin), i + 1, format!("expected `key = value`, got `{line}`")));
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(DrssError::parse(Path::new(origin), i + 1, "empty key"));
            }
            if kv.entries.insert(key.clone(), (v.trim().to_string(), i + 1)).is_some() {
                return Err(DrssError::parse(Path::new(origin), i + 1, format!("duplicate key `{key}`")));
            }
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DrssError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// `key=value` strings from the command line, later ones winning.
    pub fn from_overrides(items: &[String]) -> Result<Self> {
        let mut kv = KeyValues { origin: "--set".into(), entries: BTreeMap::new() };
        for item in items {
            let (k, v) = item.split_once('=').ok_or_else(|| DrssError::Usage(format!("--set expects key=value, got `{item}`")))?;
            kv.entries.insert(k.trim().to_string(), (v.trim().to_string(), 0));
        }
        Ok(kv)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn error(&self, key: &str, msg: String) -> DrssError {
        match self.entries.get(key) {
            Some((_, line)) if *line > 0 => DrssError::Usage(format!("{}:{line}: field `{key}`: {msg}", self.origin)),
            _ => DrssError::Usage(format!("{}: field `{key}`: {msg}", self.origin)),
        }
    }

    fn parsed<T: FromStr>(&self, key: &str, value: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        value.parse::<T>().map_err(|e| self.error(key, format!("cannot parse `{value}`: {e}")))
    }

    fn flag(&self, key: &str, value: &str) -> Result<bool> {
        match value.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            _ => Err(self.error(key, format!("`{value}` is not a boolean"))),
        }
    }
}

/// Documented keys of a training configuration file.
pub const TRAIN_KEYS: &[(&str, &str)] = &[
    ("variant", "tgt-only | src-only | mixed | fine-tune | fs | ss | ss-adv | drss | drss-adv"),
    ("lambda0", "adversarial entropy weight"),
    ("lambda1", "trace regularizer weight"),
    ("lambda2", "output-head L2 weight"),
    ("lambda3", "shared-encoder L2 weight"),
    ("lambda4", "source-encoder L2 weight"),
    ("lambda5", "target-encoder L2 weight"),
    ("learning_rate", "AdaGrad step size"),
    ("epsilon", "AdaGrad denominator offset"),
    ("max_epoch", "maximum training epochs"),
    ("finetune_epochs", "target epochs of fine-tune (default: max_epoch)"),
    ("batch_src", "source mini-batch size"),
    ("batch_tgt", "target mini-batch size"),
    ("m", "padded sentence length"),
    ("filters", "sentence convolution feature maps"),
    ("embedding_dim", "word vector dimension"),
    ("classes", "number of labels"),
    ("seed", "root random seed"),
    ("patience", "epochs without dev improvement before stopping"),
    ("freeze_embeddings", "keep word vectors fixed"),
    ("shared_filters", "one filter bank for both sentences"),
    ("private_encoders", "request domain-specific encoders (true/false)"),
    ("omega_updates", "recompute the covariance during training"),
    ("ridge", "ridge added before inverting the covariance"),
    ("bcnn", "enable the sentence-encoding branch"),
    ("pyramid", "enable the interaction branch"),
];

/// Training settings plus the word-vector dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub train: TrainConfig,
    pub embedding_dim: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings { train: TrainConfig::default(), embedding_dim: 300 }
    }
}

impl TrainSettings {
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        for key in kv.keys() {
            let v = kv.get(key).expect("listed key");
            let c = &mut self.train;
            match key {
                "variant" => c.variant = kv.parsed::<Variant>(key, v)?,
                "lambda0" => c.weights.lambda0 = kv.parsed(key, v)?,
                "lambda1" => c.weights.lambda1 = kv.parsed(key, v)?,
                "lambda2" => c.weights.lambda2 = kv.parsed(key, v)?,
                "lambda3" => c.weights.lambda3 = kv.parsed(key, v)?,
                "lambda4" => c.weights.lambda4 = kv.parsed(key, v)?,
                "lambda5" => c.weights.lambda5 = kv.parsed(key, v)?,
                "learning_rate" => c.learning_rate = kv.parsed(key, v)?,
                "epsilon" => c.epsilon = kv.parsed(key, v)?,
                "max_epoch" => c.max_epoch = kv.parsed(key, v)?,
                "finetune_epochs" => c.finetune_epochs = Some(kv.parsed(key, v)?),
                "batch_src" => c.batch_src = kv.parsed(key, v)?,
                "batch_tgt" => c.batch_tgt = kv.parsed(key, v)?,
                "m" => c.m = kv.parsed(key, v)?,
                "filters" => c.filters = kv.parsed(key, v)?,
                "embedding_dim" => self.embedding_dim = kv.parsed(key, v)?,
                "classes" => c.classes = kv.parsed(key, v)?,
                "seed" => c.seed = kv.parsed(key, v)?,
                "patience" => c.patience = kv.parsed(key, v)?,
                "freeze_embeddings" => c.freeze_embeddings = kv.flag(key, v)?,
                "shared_filters" => c.shared_filters = kv.flag(key, v)?,
                "private_encoders" => c.private_encoders = Some(kv.flag(key, v)?),
                "omega_updates" => c.omega_updates = kv.flag(key, v)?,
                "ridge" => c.ridge = kv.parsed(key, v)?,
                "bcnn" => c.bcnn = kv.flag(key, v)?,
                "pyramid" => c.pyramid = kv.flag(key, v)?,
                other => return Err(kv.error(other, "unknown key".into())),
            }
        }
        self.train.validate().map_err(|e| DrssError::Usage(format!("{}: {e}", kv.origin)))?;
        if self.embedding_dim == 0 {
            return Err(kv.error("embedding_dim", "must be >= 1".into()));
        }
        Ok(())
    }
}

/// Documented keys of a synthetic-data spec file.
pub const SYNTH_KEYS: &[(&str, &str)] = &[
    ("shared_size", "shared alphabet size"),
    ("shared_prefix", "shared token prefix"),
    ("source_size", "source alphabet size"),
    ("source_prefix", "source token prefix"),
    ("target_size", "target alphabet size"),
    ("target_prefix", "target token prefix"),
    ("tau", "Jaccard threshold of the shared rule"),
    ("rho", "probability of the label-flipping trigger"),
    ("min_len", "minimum sentence length"),
    ("max_len", "maximum sentence length"),
    ("copy_positive", "token copy probability for positives"),
    ("copy_negative", "token copy probability for negatives"),
    ("seed", "generator seed"),
    ("n_src", "source training pairs"),
    ("n_tgt", "target training pairs"),
    ("n_dev", "target dev pairs"),
    ("n_test", "target test pairs"),
];

pub fn apply_synth(spec: &mut SynthSpec, kv: &KeyValues) -> Result<()> {
    for key in kv.keys() {
        let v = kv.get(key).expect("listed key");
        match key {
            "shared_size" => spec.shared_size = kv.parsed(key, v)?,
            "shared_prefix" => spec.shared_prefix = v.to_string(),
            "source_size" => spec.source_size = kv.parsed(key, v)?,
            "source_prefix" => spec.source_prefix = v.to_string(),
            "target_size" => spec.target_size = kv.parsed(key, v)?,
            "target_prefix" => spec.target_prefix = v.to_string(),
            "tau" => spec.tau = kv.parsed(key, v)?,
            "rho" => spec.rho = kv.parsed(key, v)?,
            "min_len" => spec.min_len = kv.parsed(key, v)?,
            "max_len" => spec.max_len = kv.parsed(key, v)?,
            "copy_positive" => spec.copy_positive = kv.parsed(key, v)?,
            "copy_negative" => spec.copy_negative = kv.parsed(key, v)?,
            "seed" => spec.seed = kv.parsed(key, v)?,
            "n_src" => spec.n_src = kv.parsed(key, v)?,
            "n_tgt" => spec.n_tgt = kv.parsed(key, v)?,
            "n_dev" => spec.n_dev = kv.parsed(key, v)?,
            "n_test" => spec.n_test = kv.parsed(key, v)?,
            other => return Err(kv.error(other, "unknown key".into())),
        }
    }
    spec.validate().map_err(|e| DrssError::Usage(format!("{}: {e}", kv.origin)))
}
