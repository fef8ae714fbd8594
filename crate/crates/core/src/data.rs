//! Vocabulary, embedding tables, labeled sentence pairs and mini-batching.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Range of the seeded random vectors given to tokens without a pre-trained
/// embedding.
pub const OOV_RANGE: f64 = 0.25;

/// Lowercased whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    index: BTreeMap<String, u32>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary { index: BTreeMap::new(), tokens: Vec::new() };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        v
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Data("vocabulary must start with <pad>, <unk>".to_string()));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { index, tokens })
    }

    /// Returns the id of `token`, adding it if absent.
    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.index.insert(token.to_string(), id);
        self.tokens.push(token.to_string());
        id
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Tokens of `ids`, stopping at the first padding id.
    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter()
            .take_while(|&&i| i != PAD)
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN))
            .collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic vector for `token` in `±OOV_RANGE`, a function of the token
/// text and `seed` only.
pub fn hash_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ seed.rotate_left(17));
    (0..dim).map(|_| rng.gen_range(-OOV_RANGE..=OOV_RANGE)).collect()
}

/// Vocabulary plus a `|V| x l` lookup matrix (one row per token). Row
/// [`PAD`] is all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub vocab: Vocabulary,
    pub matrix: Tensor<f64>,
    pub trainable: bool,
    seed: u64,
}

impl EmbeddingTable {
    /// Table holding only `<pad>` and `<unk>`.
    pub fn empty(dim: usize, seed: u64) -> Self {
        let mut data = vec![0.0; dim];
        data.extend(hash_vector(UNK_TOKEN, dim, seed));
        EmbeddingTable {
            vocab: Vocabulary::new(),
            matrix: Tensor::from_vec(&[2, dim], data).expect("consistent shape"),
            trainable: true,
            seed,
        }
    }

    /// Builds a table from pre-trained `(token, vector)` entries. Later
    /// duplicates of a token are ignored.
    pub fn from_pretrained(entries: impl IntoIterator<Item = (String, Vec<f64>)>, dim: usize, seed: u64) -> Result<Self> {
        let mut table = Self::empty(dim, seed);
        let mut data = table.matrix.clone().into_data();
        for (n, (token, vec)) in entries.into_iter().enumerate() {
            if vec.len() != dim {
                return Err(Error::Data(format!("entry {} (`{token}`): expected {dim} values, got {}", n + 1, vec.len())));
            }
            if table.vocab.get(&token).is_some() {
                continue;
            }
            table.vocab.insert(&token);
            data.extend(vec);
        }
        let rows = table.vocab.len();
        table.matrix = Tensor::from_vec(&[rows, dim], data)?;
        Ok(table)
    }

    /// Adds every token not yet present, with a seeded hash-random vector.
    pub fn extend<'a>(&mut self, tokens: impl IntoIterator<Item = &'a str>) {
        let dim = self.dim();
        let mut data = core::mem::replace(&mut self.matrix, Tensor::zeros(&[0])).into_data();
        for t in tokens {
            if self.vocab.get(t).is_none() {
                self.vocab.insert(t);
                data.extend(hash_vector(t, dim, self.seed));
            }
        }
        let rows = self.vocab.len();
        self.matrix = Tensor::from_vec(&[rows, dim], data).expect("consistent shape");
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn vector(&self, id: u32) -> &[f64] {
        let l = self.dim();
        &self.matrix.data()[id as usize * l..(id as usize + 1) * l]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "source" | "src" | "s" => Ok(Domain::Source),
            "target" | "tgt" | "t" => Ok(Domain::Target),
            other => Err(Error::invalid("domain", format!("unknown domain tag `{other}`"))),
        }
    }
}

/// A labeled sentence pair in text form (one dataset row).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub query_id: Option<String>,
    pub s1: String,
    pub s2: String,
    pub label: usize,
    pub domain: Domain,
}

/// A labeled sentence pair in token-id form, unpadded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub s1: Vec<u32>,
    pub s2: Vec<u32>,
    pub label: usize,
    pub domain: Domain,
    pub query_id: Option<String>,
}

impl Example {
    pub fn from_text(pair: &TextPair, vocab: &Vocabulary, num_classes: usize) -> Result<Self> {
        let s1 = vocab.encode(&pair.s1);
        let s2 = vocab.encode(&pair.s2);
        if s1.is_empty() || s2.is_empty() {
            return Err(Error::Data(format!("empty sentence in pair `{}` / `{}`", pair.s1, pair.s2)));
        }
        if pair.label >= num_classes {
            return Err(Error::Data(format!("label {} outside 0..{num_classes}", pair.label)));
        }
        Ok(Example { s1, s2, label: pair.label, domain: pair.domain, query_id: pair.query_id.clone() })
    }
}

/// Right-pads with [`PAD`] or truncates to exactly `m` ids.
pub fn pad_to(ids: &[u32], m: usize) -> Vec<u32> {
    let mut v: Vec<u32> = ids.iter().copied().take(m).collect();
    v.resize(m, PAD);
    v
}

/// Tokenizes, maps out-of-vocabulary tokens to [`UNK`] and pads/truncates
/// both sentences to length `m`.
pub fn encode_pair(vocab: &Vocabulary, s1: &str, s2: &str, m: usize) -> Result<(Vec<u32>, Vec<u32>)> {
    if m == 0 {
        return Err(Error::invalid("encode_pair", "sequence length m must be >= 1"));
    }
    Ok((pad_to(&vocab.encode(s1), m), pad_to(&vocab.encode(s2), m)))
}

/// Padded id sequences for one mini-batch of a single domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x1: Vec<Vec<u32>>,
    pub x2: Vec<Vec<u32>>,
    pub labels: Vec<usize>,
    pub domain: Domain,
}

impl Batch {
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a Example>, domain: Domain, m: usize) -> Self {
        let mut b = Batch { x1: Vec::new(), x2: Vec::new(), labels: Vec::new(), domain };
        for e in examples {
            b.x1.push(pad_to(&e.s1, m));
            b.x2.push(pad_to(&e.s2, m));
            b.labels.push(e.label);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Number of mini-batches of size `b` covering `n` examples (last one short).
pub fn batch_count(n: usize, b: usize) -> usize {
    n.div_ceil(b.max(1))
}

/// Splits `examples` into batches of `b` (the final batch may be shorter),
/// optionally in a seeded shuffled order. Every example lands in exactly one
/// batch.
pub fn batch_iter(examples: &[Example], b: usize, shuffle: bool, seed: u64, domain: Domain, m: usize) -> Result<Vec<Batch>> {
    if b == 0 {
        return Err(Error::invalid("batch_iter", "batch size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order
        .chunks(b)
        .map(|chunk| Batch::from_examples(chunk.iter().map(|&i| &examples[i]), domain, m))
        .collect())
}
