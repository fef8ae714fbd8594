//! Classification accuracy, ROC AUC, and top-1 ranking precision/recall/F1
//! over query groups.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of positions where `predictions` equals `golds`.
pub fn accuracy(predictions: &[usize], golds: &[usize]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::invalid("accuracy", format!("{} predictions vs {} golds", predictions.len(), golds.len())));
    }
    if golds.is_empty() {
        return Err(Error::Empty("accuracy"));
    }
    let hits = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half. Computed from mid-ranks
/// in exact integer arithmetic.
pub fn auc(scores: &[f64], golds: &[bool]) -> Result<f64> {
    if scores.len() != golds.len() {
        return Err(Error::invalid("auc", format!("{} scores vs {} golds", scores.len(), golds.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::non_finite("auc scores"));
    }
    let n_pos = golds.iter().filter(|&&g| g).count() as u64;
    let n_neg = golds.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("auc", "undefined without both a positive and a negative example"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // twice the mid-rank sum of positives, so everything stays integral
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, mid-rank (i + j + 2) / 2
        let twice_mid = (i + j + 2) as u64;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| golds[k]).count() as u64;
        twice_rank_sum += twice_mid * pos_in_tie;
        i = j + 1;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// One scored candidate of a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub query_id: String,
    pub candidate_id: String,
    /// Probability of the positive class.
    pub score: f64,
    pub gold: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankAt1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub queries: usize,
    pub answered: usize,
    pub correct: usize,
    pub answerable: usize,
}

/// Precision@1, Recall@1 and F1@1.
///
/// A query is answered when its top candidate (highest score, ties to the
/// smallest candidate id) scores at least `threshold`; it is answered
/// correctly when that candidate is gold. Precision divides by answered
/// queries, recall by queries with at least one gold candidate.
pub fn rank_at_1(pairs: &[ScoredPair], threshold: f64) -> Result<RankAt1> {
    let mut groups: BTreeMap<&str, Vec<&ScoredPair>> = BTreeMap::new();
    for p in pairs {
        groups.entry(p.query_id.as_str()).or_default().push(p);
    }
    if groups.is_empty() {
        return Err(Error::Empty("rank_at_1: no query groups"));
    }
    let (mut answered, mut correct, mut answerable) = (0usize, 0usize, 0usize);
    for cands in groups.values() {
        if cands.iter().any(|c| c.gold) {
            answerable += 1;
        }
        let top = cands
            .iter()
            .copied()
            .max_by(|a, b| {
                a.score
                    .partial_cmp(&b.score)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| b.candidate_id.cmp(&a.candidate_id))
            })
            .expect("non-empty group");
        if top.score >= threshold {
            answered += 1;
            if top.gold {
                correct += 1;
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(correct, answered);
    let recall = ratio(correct, answerable);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(RankAt1 { precision, recall, f1, queries: groups.len(), answered, correct, answerable })
}
