//! Turning text datasets into an embedding table and encoded examples.

use std::path::Path;

use drss_core::data::{tokenize, EmbeddingTable, Example, TextPair, Vocabulary};

use crate::error::{DrssError, Result};
use crate::io::load_embeddings;

/// Pre-trained vectors from `embeddings` (if any) plus a seeded random vector
/// for every other token of the training pairs.
pub fn build_table(training: &[&[TextPair]], embeddings: Option<&Path>, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut table = match embeddings {
        Some(p) => load_embeddings(p, dim, seed)?,
        None => EmbeddingTable::empty(dim, seed),
    };
    let tokens: Vec<String> = training
        .iter()
        .flat_map(|split| split.iter())
        .flat_map(|p| tokenize(&p.s1).into_iter().chain(tokenize(&p.s2)))
        .collect();
    table.extend(tokens.iter().map(String::as_str));
    Ok(table)
}

pub fn encode_examples(pairs: &[TextPair], vocab: &Vocabulary, classes: usize, what: &str) -> Result<Vec<Example>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| Example::from_text(p, vocab, classes).map_err(|e| DrssError::Data(format!("{what} row {}: {e}", i + 1))))
        .collect()
}
