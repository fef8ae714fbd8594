//! Seeded generator of a two-domain sentence-pair task.
//!
//! Sentences mix tokens from a shared alphabet with a few tokens from their
//! domain's own alphabet. The shared rule labels a pair positive when the
//! Jaccard overlap of the shared-alphabet tokens of the two sentences is at
//! least `tau`. With probability `rho` a pair also carries its domain's
//! trigger pair (the first domain token in `s1`, the second in `s2`), and
//! then the label is flipped.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{tokenize, Domain, TextPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub shared_size: usize,
    pub shared_prefix: String,
    pub source_size: usize,
    pub source_prefix: String,
    pub target_size: usize,
    pub target_prefix: String,
    /// Jaccard threshold of the shared rule.
    pub tau: f64,
    /// Probability of the label-flipping trigger pair.
    pub rho: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Chance that `s2` copies each shared token of `s1` for a positive and
    /// a negative draw.
    pub copy_positive: f64,
    pub copy_negative: f64,
    pub seed: u64,
    pub n_src: usize,
    pub n_tgt: usize,
    pub n_dev: usize,
    pub n_test: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            shared_size: 300,
            shared_prefix: String::from("w"),
            source_size: 40,
            source_prefix: String::from("s"),
            target_size: 40,
            target_prefix: String::from("t"),
            tau: 0.5,
            rho: 0.1,
            min_len: 6,
            max_len: 12,
            copy_positive: 0.95,
            copy_negative: 0.15,
            seed: 7,
            n_src: 20_000,
            n_tgt: 500,
            n_dev: 500,
            n_test: 2_000,
        }
    }
}

/// The four generated splits. Dev and test come from the target domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub source: Vec<TextPair>,
    pub target: Vec<TextPair>,
    pub dev: Vec<TextPair>,
    pub test: Vec<TextPair>,
}

/// Extra domain tokens per sentence besides the trigger.
const NOISE_TOKENS: (usize, usize) = (1, 2);
const MAX_REJECTIONS: usize = 10_000;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("tau ({}) and rho ({}) must lie in [0, 1]", self.tau, self.rho)));
        }
        for (name, p) in [("copy_positive", self.copy_positive), ("copy_negative", self.copy_negative)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} must lie in [0, 1]")));
            }
        }
        let domain_min = NOISE_TOKENS.1 + 2;
        if self.source_size < domain_min || self.target_size < domain_min {
            return Err(Error::Config(format!("domain alphabets need at least {domain_min} tokens")));
        }
        if self.min_len < NOISE_TOKENS.1 + 2 || self.max_len < self.min_len {
            return Err(Error::Config(format!(
                "sentence lengths {}..={} are invalid (min_len must be at least {})",
                self.min_len,
                self.max_len,
                NOISE_TOKENS.1 + 2
            )));
        }
        if self.shared_size < 2 * self.max_len {
            return Err(Error::Config(format!("shared alphabet needs at least {} tokens", 2 * self.max_len)));
        }
        let prefixes = [&self.shared_prefix, &self.source_prefix, &self.target_prefix];
        for (i, a) in prefixes.iter().enumerate() {
            if a.is_empty() || a.chars().any(char::is_whitespace) || a.to_lowercase() != **a {
                return Err(Error::Config(format!("alphabet prefix `{a}` must be non-empty, lowercase and without spaces")));
            }
            for b in &prefixes[i + 1..] {
                if a.starts_with(b.as_str()) || b.starts_with(a.as_str()) {
                    return Err(Error::Config(format!("alphabets overlap: prefixes `{a}` and `{b}`")));
                }
            }
        }
        Ok(())
    }

    fn alphabet(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    pub fn shared_alphabet(&self) -> Vec<String> {
        Self::alphabet(&self.shared_prefix, self.shared_size)
    }

    pub fn domain_alphabet(&self, domain: Domain) -> Vec<String> {
        match domain {
            Domain::Source => Self::alphabet(&self.source_prefix, self.source_size),
            Domain::Target => Self::alphabet(&self.target_prefix, self.target_size),
        }
    }

    /// The shared-rule label of a pair.
    pub fn shared_label(&self, s1: &str, s2: &str) -> bool {
        let set = |s: &str| -> BTreeSet<String> {
            tokenize(s).into_iter().filter(|t| self.is_shared_token(t)).collect()
        };
        jaccard(&set(s1), &set(s2)) >= self.tau
    }

    fn is_shared_token(&self, t: &str) -> bool {
        t.strip_prefix(self.shared_prefix.as_str())
            .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
    }

    /// Whether the pair carries `domain`'s trigger pair.
    pub fn has_trigger(&self, s1: &str, s2: &str, domain: Domain) -> bool {
        let alpha = self.domain_alphabet(domain);
        tokenize(s1).contains(&alpha[0]) && tokenize(s2).contains(&alpha[1])
    }
}

/// `|a ∩ b| / |a ∪ b|`, defined as 1 for two empty sets.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    shared: Vec<String>,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn sentence_shared(&mut self, n: usize) -> Vec<String> {
        self.shared.choose_multiple(&mut self.rng, n).cloned().collect()
    }

    /// Shared tokens of `s2`: each token of `s1` is kept with probability
    /// `copy`, the rest are fresh draws.
    fn derive_shared(&mut self, s1: &[String], n: usize, copy: f64) -> Vec<String> {
        let mut out: Vec<String> = s1.iter().filter(|_| self.rng.gen_bool(copy)).take(n).cloned().collect();
        while out.len() < n {
            let t = self.shared.choose(&mut self.rng).expect("non-empty alphabet").clone();
            if !out.contains(&t) {
                out.push(t);
            }
        }
        out
    }

    fn pair(&mut self, domain: Domain, query_id: Option<String>) -> Result<TextPair> {
        let spec = self.spec;
        let alpha = spec.domain_alphabet(domain);
        let (trigger, noise) = alpha.split_at(2);
        let triggered = self.rng.gen_bool(spec.rho);
        let positive = self.rng.gen_bool(0.5);
        let copy = if positive { spec.copy_positive } else { spec.copy_negative };
        for _ in 0..MAX_REJECTIONS {
            let len1 = self.rng.gen_range(spec.min_len..=spec.max_len);
            let len2 = self.rng.gen_range(spec.min_len..=spec.max_len);
            let n1 = self.rng.gen_range(NOISE_TOKENS.0..=NOISE_TOKENS.1);
            let n2 = self.rng.gen_range(NOISE_TOKENS.0..=NOISE_TOKENS.1);
            let t = usize::from(triggered);
            let shared1 = self.sentence_shared(len1 - n1 - t);
            let shared2 = self.derive_shared(&shared1, len2 - n2 - t, copy);
            let sa: BTreeSet<String> = shared1.iter().cloned().collect();
            let sb: BTreeSet<String> = shared2.iter().cloned().collect();
            if (jaccard(&sa, &sb) >= spec.tau) != positive {
                continue;
            }
            let mut w1 = shared1;
            let mut w2 = shared2;
            w1.extend(noise.choose_multiple(&mut self.rng, n1).cloned());
            w2.extend(noise.choose_multiple(&mut self.rng, n2).cloned());
            if triggered {
                w1.push(trigger[0].clone());
                w2.push(trigger[1].clone());
            }
            w1.shuffle(&mut self.rng);
            w2.shuffle(&mut self.rng);
            let label = usize::from(positive != triggered);
            return Ok(TextPair { query_id, s1: w1.join(" "), s2: w2.join(" "), label, domain });
        }
        Err(Error::Config(format!(
            "could not draw a {} pair with tau = {} after {MAX_REJECTIONS} attempts; adjust the copy probabilities",
            if positive { "positive" } else { "negative" },
            spec.tau
        )))
    }

    fn split(&mut self, n: usize, domain: Domain) -> Result<Vec<TextPair>> {
        (0..n).map(|_| self.pair(domain, None)).collect()
    }
}

/// Generates the source training set and the target train/dev/test splits.
/// The output is a function of `spec` alone.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut g = Generator { spec, shared: spec.shared_alphabet(), rng: ChaCha8Rng::seed_from_u64(spec.seed) };
    Ok(SynthData {
        source: g.split(spec.n_src, Domain::Source)?,
        target: g.split(spec.n_tgt, Domain::Target)?,
        dev: g.split(spec.n_dev, Domain::Target)?,
        test: g.split(spec.n_test, Domain::Target)?,
    })
}
