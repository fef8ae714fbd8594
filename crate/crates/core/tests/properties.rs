use std::collections::BTreeSet;

use drss_core::data::{batch_iter, tokenize, Domain, Example, Vocabulary};
use drss_core::heads::StackedW;
use drss_core::metrics::{accuracy, auc, rank_at_1, ScoredPair};
use drss_core::omega::{correlation_report, matmul, max_abs_diff, psd_sqrt, sym_eig, trace, update_omega, Mat4};
use drss_core::retrieval::{build_index, rerank, token_overlap, KbEntry, Matcher, RetrievalConfig};
use drss_core::synth::{synth_generate, SynthSpec};
use drss_core::Result;
use proptest::prelude::*;

fn mat4() -> impl Strategy<Value = Mat4> {
    prop::array::uniform4(prop::array::uniform4(-2.0f64..2.0))
}

fn stacked(rows: usize) -> impl Strategy<Value = StackedW> {
    prop::collection::vec(-3.0f64..3.0, rows * 4).prop_map(move |v| {
        let cols: Vec<Vec<f64>> = (0..4).map(|k| (0..rows).map(|r| v[r * 4 + k]).collect()).collect();
        StackedW::from_columns([&cols[0], &cols[1], &cols[2], &cols[3]]).unwrap()
    })
}

fn gram(g: &Mat4) -> Mat4 {
    let mut a = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            a[i][j] = (0..4).map(|k| g[i][k] * g[j][k]).sum();
        }
    }
    a
}

const WORDS: &[&str] = &["how", "do", "i", "return", "shoes", "order", "where", "is", "my", "cancel", "ship", "price"];

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 1..6).prop_map(|w| w.join(" "))
}

struct LengthMatcher;

impl Matcher for LengthMatcher {
    fn paraphrase_probs(&self, query: &str, candidates: &[&str]) -> Result<Vec<f64>> {
        let q = tokenize(query).len() as f64;
        Ok(candidates.iter().map(|c| 1.0 / (1.0 + (tokenize(c).len() as f64 - q).abs())).collect())
    }

    fn sentence_embedding(&self, text: &str) -> Vec<f64> {
        let toks = tokenize(text);
        WORDS.iter().map(|w| toks.iter().filter(|t| t == w).count() as f64).collect()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn omega_update_is_feasible(w in (1usize..10).prop_flat_map(stacked)) {
        let o = update_omega(&w).unwrap();
        prop_assert!(o.validate().is_ok(), "{:?}", o);
        prop_assert!((trace(&o.matrix) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigendecomposition_reconstructs(a in mat4()) {
        let mut s = a;
        for i in 0..4 {
            for j in 0..4 {
                s[i][j] = 0.5 * (a[i][j] + a[j][i]);
            }
        }
        let (vals, v) = sym_eig(&s).unwrap();
        prop_assert!(vals.windows(2).all(|p| p[0] >= p[1]));
        let mut r = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                r[i][j] = (0..4).map(|k| v[i][k] * vals[k] * v[j][k]).sum();
            }
        }
        prop_assert!(max_abs_diff(&r, &s) < 1e-12);
    }

    #[test]
    fn sqrt_squares_back(g in mat4()) {
        let a = gram(&g);
        let r = psd_sqrt(&a).unwrap();
        prop_assert!(max_abs_diff(&matmul(&r, &r), &a) < 1e-10);
        let (vals, _) = sym_eig(&r).unwrap();
        prop_assert!(vals[3] >= -1e-10);
    }

    #[test]
    fn correlation_diagonal_is_one(g in mat4()) {
        let mut a = gram(&g);
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += 1e-3;
        }
        let tr = trace(&a);
        a.iter_mut().flatten().for_each(|v| *v /= tr);
        let rep = correlation_report(&drss_core::omega::Omega { matrix: a });
        for i in 0..4 {
            prop_assert!((rep.rho[i][i].unwrap() - 1.0).abs() < 1e-12);
            for j in 0..4 {
                let r = rep.rho[i][j].unwrap();
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            }
        }
    }

    #[test]
    fn auc_bounds_and_reversal(data in prop::collection::vec((0u8..10, any::<bool>()), 2..200)) {
        let scores: Vec<f64> = data.iter().map(|(s, _)| f64::from(*s)).collect();
        let golds: Vec<bool> = data.iter().map(|(_, g)| *g).collect();
        match auc(&scores, &golds) {
            Ok(a) => {
                prop_assert!((0.0..=1.0).contains(&a));
                let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
                prop_assert!((a + auc(&neg, &golds).unwrap() - 1.0).abs() < 1e-12);
            }
            Err(_) => prop_assert!(golds.iter().all(|&g| g) || golds.iter().all(|&g| !g)),
        }
    }

    #[test]
    fn accuracy_in_unit_interval(v in prop::collection::vec((0usize..3, 0usize..3), 1..100)) {
        let (p, g): (Vec<usize>, Vec<usize>) = v.into_iter().unzip();
        let a = accuracy(&p, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn rank_at_1_laws(data in prop::collection::vec((0u8..6, 0u8..4, 0u8..10, any::<bool>()), 1..80), tau in 0.0f64..1.0) {
        let pairs: Vec<ScoredPair> = data
            .iter()
            .map(|(q, c, s, g)| ScoredPair { query_id: format!("q{q}"), candidate_id: format!("c{c}"), score: f64::from(*s) / 10.0, gold: *g })
            .collect();
        let r = rank_at_1(&pairs, tau).unwrap();
        prop_assert_eq!(r.f1 == 0.0, r.correct == 0);
        for v in [r.precision, r.recall, r.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let all = rank_at_1(&pairs, 0.0).unwrap();
        prop_assert_eq!(all.answered, all.queries);
    }

    #[test]
    fn tfidf_scores_sorted_and_bounded(docs in prop::collection::vec(sentence(), 1..12), query in sentence(), k in 1usize..15) {
        let kb: Vec<KbEntry> = docs
            .iter()
            .enumerate()
            .map(|(i, q)| KbEntry { id: format!("d{i:02}"), question: q.clone(), answer: format!("a{i}") })
            .collect();
        let index = build_index(kb).unwrap();
        let hits = index.tfidf_topk(&query, k).unwrap();
        prop_assert!(hits.len() <= k);
        prop_assert!(hits.iter().all(|h| (0.0..=1.0).contains(&h.score)));
        prop_assert!(hits.windows(2).all(|p| p[0].score >= p[1].score));
        let own = index.tfidf_topk(&docs[0], docs.len()).unwrap();
        prop_assert!((own[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rerank_ignores_candidate_order(docs in prop::collection::vec(sentence(), 2..10), query in sentence(), rot in 0usize..10) {
        let kb: Vec<KbEntry> = docs
            .iter()
            .enumerate()
            .map(|(i, q)| KbEntry { id: format!("d{i:02}"), question: q.clone(), answer: format!("a{i}") })
            .collect();
        let index = build_index(kb).unwrap();
        let cfg = RetrievalConfig::default();
        let mut cands = index.tfidf_topk(&query, 30).unwrap();
        let a = rerank(&query, &cands, &index, &LengthMatcher, &cfg).unwrap();
        if !cands.is_empty() {
            let n = cands.len();
            cands.rotate_left(rot % n);
            cands.reverse();
        }
        let b = rerank(&query, &cands, &index, &LengthMatcher, &cfg).unwrap();
        prop_assert_eq!(a.best, b.best);
    }

    #[test]
    fn overlap_of_identical_text_is_one(s in sentence()) {
        prop_assert_eq!(token_overlap(&s, &s, &BTreeSet::new()), 1.0);
    }

    #[test]
    fn vocabulary_round_trip(s in sentence()) {
        let mut v = Vocabulary::new();
        for t in tokenize(&s) {
            v.insert(&t);
        }
        let ids = v.encode(&s);
        prop_assert_eq!(v.decode(&ids).join(" "), tokenize(&s).join(" "));
    }

    #[test]
    fn batches_partition_examples(n in 1usize..60, b in 1usize..9, seed in any::<u64>(), shuffle in any::<bool>()) {
        let examples: Vec<Example> = (0..n)
            .map(|i| Example { s1: vec![2 + i as u32], s2: vec![2], label: i % 2, domain: Domain::Source, query_id: None })
            .collect();
        let batches = batch_iter(&examples, b, shuffle, seed, Domain::Source, 3).unwrap();
        prop_assert_eq!(batches.len(), n.div_ceil(b));
        let mut seen: Vec<u32> = batches.iter().flat_map(|x| x.x1.iter().map(|s| s[0])).collect();
        prop_assert!(batches.iter().all(|x| x.len() <= b && x.x1.iter().all(|s| s.len() == 3)));
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n as u32).map(|i| i + 2).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn synthetic_labels_follow_rule(seed in any::<u64>(), rho in 0.0f64..1.0) {
        let spec = SynthSpec { seed, rho, n_src: 60, n_tgt: 30, n_dev: 10, n_test: 10, ..SynthSpec::default() };
        let data = synth_generate(&spec).unwrap();
        prop_assert_eq!(&data, &synth_generate(&spec).unwrap());
        for p in data.source.iter().chain(&data.target) {
            let flipped = spec.has_trigger(&p.s1, &p.s2, p.domain);
            prop_assert_eq!(p.label == 1, spec.shared_label(&p.s1, &p.s2) != flipped);
        }
    }
}
