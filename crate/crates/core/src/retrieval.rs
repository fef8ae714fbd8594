//! Two-stage question retrieval: TF-IDF recall of the top-K knowledge-base
//! questions, then a rerank that blends the matcher's paraphrase probability
//! with embedding-cosine and token-overlap features.
//!
//! Weighting: `tf = 1 + ln(count)`, `idf = ln((N + 1) / (df + 1)) + 1`,
//! document and query vectors are L2-normalized and scored by dot product.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::tokenize;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbEntry {
    pub id: String,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: usize,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    pub entries: Vec<KbEntry>,
    /// Postings sorted by document index.
    pub postings: BTreeMap<String, Vec<Posting>>,
    pub doc_norms: Vec<f64>,
}

pub fn tf_weight(count: u32) -> f64 {
    1.0 + Float::ln(count as f64)
}

pub fn idf_weight(n_docs: usize, df: usize) -> f64 {
    Float::ln((n_docs as f64 + 1.0) / (df as f64 + 1.0)) + 1.0
}

fn term_counts(text: &str) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for t in tokenize(text) {
        *counts.entry(t).or_insert(0) += 1;
    }
    counts
}

pub fn build_index(kb: Vec<KbEntry>) -> Result<InvertedIndex> {
    let mut ids = BTreeSet::new();
    for e in &kb {
        if !ids.insert(e.id.as_str()) {
            return Err(Error::Data(format!("duplicate knowledge-base id `{}`", e.id)));
        }
        if tokenize(&e.question).is_empty() {
            return Err(Error::Data(format!("knowledge-base entry `{}` has an empty question", e.id)));
        }
    }
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    for (doc, e) in kb.iter().enumerate() {
        for (term, tf) in term_counts(&e.question) {
            postings.entry(term).or_default().push(Posting { doc, tf });
        }
    }
    let n = kb.len();
    let mut sq = alloc::vec![0.0f64; n];
    for plist in postings.values() {
        let idf = idf_weight(n, plist.len());
        for p in plist {
            let w = tf_weight(p.tf) * idf;
            sq[p.doc] += w * w;
        }
    }
    let doc_norms = sq.into_iter().map(Float::sqrt).collect();
    Ok(InvertedIndex { entries: kb, postings, doc_norms })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub doc: usize,
    pub id: String,
    pub score: f64,
}

impl InvertedIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.postings.get(term).map(|p| idf_weight(self.len(), p.len()))
    }

    /// Cosine similarity of the query against every document sharing a term,
    /// best first, ties by document index, at most `k` results.
    pub fn tfidf_topk(&self, query: &str, k: usize) -> Result<Vec<Candidate>> {
        if k == 0 {
            return Err(Error::invalid("tfidf_topk", "k must be >= 1"));
        }
        let mut qw: Vec<(&Vec<Posting>, f64)> = Vec::new();
        for (term, count) in term_counts(query) {
            if let Some(plist) = self.postings.get(&term) {
                qw.push((plist, tf_weight(count) * idf_weight(self.len(), plist.len())));
            }
        }
        let qnorm = qw.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if qw.is_empty() || qnorm == 0.0 {
            return Ok(Vec::new());
        }
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (plist, wq) in &qw {
            let idf = idf_weight(self.len(), plist.len());
            for p in plist.iter() {
                *acc.entry(p.doc).or_insert(0.0) += wq * tf_weight(p.tf) * idf;
            }
        }
        let mut out: Vec<Candidate> = acc
            .into_iter()
            .map(|(doc, dot)| Candidate {
                doc,
                id: self.entries[doc].id.clone(),
                score: (dot / (qnorm * self.doc_norms[doc])).clamp(0.0, 1.0),
            })
            .collect();
        out.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then(a.doc.cmp(&b.doc)));
        out.truncate(k);
        Ok(out)
    }
}

/// The trained sentence-pair model as seen by the reranker.
pub trait Matcher {
    /// Positive-class probability of `(query, candidate)` for every candidate,
    /// computed as one batch.
    fn paraphrase_probs(&self, query: &str, candidates: &[&str]) -> Result<Vec<f64>>;

    /// Mean word embedding of `text`.
    fn sentence_embedding(&self, text: &str) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendWeights {
    pub model_prob: f64,
    pub emb_cosine: f64,
    pub token_overlap: f64,
}

impl Default for BlendWeights {
    fn default() -> Self {
        BlendWeights { model_prob: 0.8, emb_cosine: 0.1, token_overlap: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    pub weights: BlendWeights,
    /// Minimum blended score for an answer.
    pub answer_threshold: f64,
    pub stopwords: BTreeSet<String>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { k: 30, weights: BlendWeights::default(), answer_threshold: 0.5, stopwords: BTreeSet::new() }
    }
}

/// Per-candidate rerank trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankFeatures {
    pub candidate_id: String,
    pub doc: usize,
    pub tfidf: f64,
    pub model_prob: f64,
    pub emb_cosine: f64,
    pub token_overlap: f64,
    pub blend: f64,
}

impl RerankFeatures {
    /// `candidate_id, tfidf, model_prob, emb_cosine, token_overlap, blend`.
    pub fn trace_line(&self) -> String {
        format!(
            "{}, {:.6}, {:.6}, {:.6}, {:.6}, {:.6}",
            self.candidate_id, self.tfidf, self.model_prob, self.emb_cosine, self.token_overlap, self.blend
        )
    }
}

/// Cosine of two vectors, clamped into `[0, 1]`; zero vectors give 0.
pub fn clamped_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// Jaccard overlap of the non-stopword token sets; 0 when both are empty.
pub fn token_overlap(a: &str, b: &str, stopwords: &BTreeSet<String>) -> f64 {
    let set = |s: &str| tokenize(s).into_iter().filter(|t| !stopwords.contains(t)).collect::<BTreeSet<_>>();
    let (sa, sb) = (set(a), set(b));
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reranked {
    /// Winning candidate, or `None` when there was nothing to rank.
    pub best: Option<RerankFeatures>,
    /// Every candidate, in input order.
    pub trace: Vec<RerankFeatures>,
}

/// Scores every candidate with `Σ w_f · feature_f` and picks the maximum
/// (ties to the smallest candidate id).
pub fn rerank<M: Matcher + ?Sized>(
    query: &str,
    candidates: &[Candidate],
    index: &InvertedIndex,
    matcher: &M,
    cfg: &RetrievalConfig,
) -> Result<Reranked> {
    if candidates.is_empty() {
        return Ok(Reranked { best: None, trace: Vec::new() });
    }
    let texts: Vec<&str> = candidates.iter().map(|c| index.entries[c.doc].question.as_str()).collect();
    let probs = matcher.paraphrase_probs(query, &texts)?;
    if probs.len() != candidates.len() {
        return Err(Error::invalid("rerank", format!("matcher returned {} scores for {} candidates", probs.len(), candidates.len())));
    }
    let q_emb = matcher.sentence_embedding(query);
    let w = cfg.weights;
    let mut trace = Vec::with_capacity(candidates.len());
    for ((c, text), p) in candidates.iter().zip(&texts).zip(probs) {
        let model_prob = if p.is_finite() { p.clamp(0.0, 1.0) } else { return Err(Error::non_finite("matcher probability")) };
        let emb_cosine = clamped_cosine(&q_emb, &matcher.sentence_embedding(text));
        let overlap = token_overlap(query, text, &cfg.stopwords);
        let blend = w.model_prob * model_prob + w.emb_cosine * emb_cosine + w.token_overlap * overlap;
        trace.push(RerankFeatures {
            candidate_id: c.id.clone(),
            doc: c.doc,
            tfidf: c.score,
            model_prob,
            emb_cosine,
            token_overlap: overlap,
            blend,
        });
    }
    let best = trace
        .iter()
        .max_by(|a, b| {
            a.blend
                .partial_cmp(&b.blend)
                .unwrap_or(Ordering::Equal)
                .then_with(|| b.candidate_id.cmp(&a.candidate_id))
        })
        .cloned();
    Ok(Reranked { best, trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    /// `None` means "no answer".
    pub answer: Option<String>,
    pub entry_id: Option<String>,
    pub trace: Vec<RerankFeatures>,
}

/// Recall, rerank, and return the answer of the winning knowledge-base entry
/// when its blended score reaches the answer threshold.
pub fn answer<M: Matcher + ?Sized>(query: &str, index: &InvertedIndex, matcher: &M, cfg: &RetrievalConfig) -> Result<Answer> {
    let cands = index.tfidf_topk(query, cfg.k)?;
    let ranked = rerank(query, &cands, index, matcher, cfg)?;
    let chosen = ranked.best.filter(|b| b.blend >= cfg.answer_threshold);
    Ok(Answer {
        answer: chosen.as_ref().map(|b| index.entries[b.doc].answer.clone()),
        entry_id: chosen.map(|b| b.candidate_id),
        trace: ranked.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn kb(rows: &[(&str, &str)]) -> Vec<KbEntry> {
        rows.iter()
            .map(|(id, q)| KbEntry { id: id.to_string(), question: q.to_string(), answer: format!("answer {id}") })
            .collect()
    }

    #[test]
    fn single_document_is_recalled() {
        let idx = build_index(kb(&[("1", "a b")])).unwrap();
        let r = idx.tfidf_topk("a", 5).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].score > 0.0);
        assert!(!idx.postings.contains_key("zzz"));
        assert!(idx.tfidf_topk("zzz", 5).unwrap().is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(build_index(kb(&[("1", "a"), ("1", "b")])).is_err());
    }

    #[test]
    fn identical_query_scores_one() {
        let idx = build_index(kb(&[("1", "how do I return shoes"), ("2", "where is my order"), ("3", "return policy")])).unwrap();
        let r = idx.tfidf_topk("where is my order", 30).unwrap();
        assert_eq!(r[0].id, "2");
        assert!((r[0].score - 1.0).abs() < 1e-12);
        assert!(r.len() <= 3);
    }

    #[test]
    fn overlap_and_cosine_features() {
        assert_eq!(token_overlap("a b c", "c b a", &BTreeSet::new()), 1.0);
        assert_eq!(token_overlap("", "", &BTreeSet::new()), 0.0);
        let stop: BTreeSet<String> = ["the".to_string()].into_iter().collect();
        assert_eq!(token_overlap("the cat", "the dog", &stop), 0.0);
        assert_eq!(clamped_cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((clamped_cosine(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-15);
        assert_eq!(clamped_cosine(&[1.0, 0.0], &[-1.0, 0.0]), 0.0);
    }
}
