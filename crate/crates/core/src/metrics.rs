//! Token-level answer quality metrics: BLEU-1, E-F1 and token EM.
//!
//! All metrics operate on [`TokenSeq`] values produced by [`normalize`], and
//! count overlap as a clipped multiset intersection so that repeating a token
//! never earns more credit than the other side contains.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("reference answer has no tokens")]
    EmptyReference,
}

/// Normalized tokens. Only constructed by [`normalize`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn joined(&self) -> String {
        self.0.join(" ")
    }
}

/// Lowercases, turns punctuation into separators and splits on whitespace.
///
/// `.` and `_` survive when both neighbours are alphanumeric, so names like
/// `aeromapcompare.m` or `lap_video_to_speed` stay single tokens.
pub fn normalize(text: &str) -> TokenSeq {
    let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let keep = if c.is_alphanumeric() {
            true
        } else if c == '.' || c == '_' {
            let before = i > 0 && chars[i - 1].is_alphanumeric();
            let after = chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
            before && after
        } else {
            false
        };
        if keep {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(core::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenSeq(tokens)
}

fn counts(seq: &TokenSeq) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for t in &seq.0 {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Size of the multiset intersection of the two sequences.
pub fn clipped_overlap(a: &TokenSeq, b: &TokenSeq) -> usize {
    let cb = counts(b);
    counts(a)
        .iter()
        .map(|(t, n)| (*n).min(cb.get(t).copied().unwrap_or(0)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bleu1Breakdown {
    /// Clipped unigram precision.
    pub p1: f64,
    /// Candidate length.
    pub c: usize,
    /// Reference length.
    pub r: usize,
    /// Brevity penalty.
    pub bp: f64,
    pub score: f64,
}

/// Single-reference BLEU with unigram weight 1: `BP * p1`.
///
/// `BP = 1` when the candidate is longer than the reference and
/// `exp(1 - r/c)` otherwise. An empty candidate scores 0 with `BP = 0`
/// (the limit of `exp(1 - r/c)` as `c -> 0`).
pub fn bleu1(candidate: &TokenSeq, reference: &TokenSeq) -> Result<Bleu1Breakdown, MetricError> {
    let r = reference.len();
    if r == 0 {
        return Err(MetricError::EmptyReference);
    }
    let c = candidate.len();
    if c == 0 {
        return Ok(Bleu1Breakdown {
            p1: 0.0,
            c,
            r,
            bp: 0.0,
            score: 0.0,
        });
    }
    let p1 = clipped_overlap(candidate, reference) as f64 / c as f64;
    let bp = if c > r {
        1.0
    } else {
        libm::exp(1.0 - r as f64 / c as f64)
    };
    // exp(w1 * log p1) with w1 = 1 is p1 itself
    let score = if p1 > 0.0 { bp * p1 } else { 0.0 };
    Ok(Bleu1Breakdown {
        p1,
        c,
        r,
        bp,
        score: score.min(1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EF1Breakdown {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub overlap: usize,
}

pub fn ef1(prediction: &TokenSeq, reference: &TokenSeq) -> EF1Breakdown {
    let overlap = clipped_overlap(prediction, reference);
    let ratio = |n: usize| {
        if n == 0 {
            0.0
        } else {
            overlap as f64 / n as f64
        }
    };
    let precision = ratio(prediction.len());
    let recall = ratio(reference.len());
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    EF1Breakdown {
        precision,
        recall,
        f1,
        overlap,
    }
}

/// Fraction of reference tokens found in the prediction (clipped).
pub fn em_token(prediction: &TokenSeq, reference: &TokenSeq) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(clipped_overlap(prediction, reference) as f64 / reference.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn seq(s: &str) -> TokenSeq {
        normalize(s)
    }

    fn toks(t: &TokenSeq) -> Vec<&str> {
        t.tokens().iter().map(String::as_str).collect()
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(toks(&seq("The cat, sat.")), vec!["the", "cat", "sat"]);
        assert_eq!(
            toks(&seq("AeroMapCompare.m plots")),
            vec!["aeromapcompare.m", "plots"]
        );
        assert!(seq("").is_empty());
        assert_eq!(
            toks(&seq("Lap_Video_to_Speed!")),
            vec!["lap_video_to_speed"]
        );
        assert_eq!(toks(&seq("__init__ ..x")), vec!["init", "x"]);
        assert_eq!(toks(&seq("v1.2.3")), vec!["v1.2.3"]);
    }

    #[test]
    fn bleu_identity() {
        let b = bleu1(&seq("the cat sat"), &seq("the cat sat")).unwrap();
        assert_eq!((b.p1, b.c, b.r, b.bp, b.score), (1.0, 3, 3, 1.0, 1.0));
    }

    #[test]
    fn bleu_clipping() {
        let b = bleu1(&seq("the the the"), &seq("the cat")).unwrap();
        assert_eq!(b.p1, 1.0 / 3.0);
        assert_eq!(b.bp, 1.0);
        assert_eq!(b.score, 1.0 / 3.0);
    }

    #[test]
    fn bleu_brevity() {
        let b = bleu1(&seq("the"), &seq("the cat sat")).unwrap();
        assert_eq!(b.p1, 1.0);
        let e2 = (-2.0f64).exp();
        assert!((b.bp - e2).abs() < 1e-15);
        assert!((b.score - 0.1353352832366127).abs() < 1e-12);
    }

    #[test]
    fn bleu_edge_cases() {
        assert_eq!(bleu1(&seq("x"), &seq("")), Err(MetricError::EmptyReference));
        assert_eq!(bleu1(&seq(""), &seq("a")).unwrap().score, 0.0);
        assert_eq!(bleu1(&seq("b c"), &seq("a")).unwrap().score, 0.0);
    }

    #[test]
    fn ef1_cases() {
        let e = ef1(&seq("a b c"), &seq("a b c"));
        assert_eq!((e.precision, e.recall, e.f1), (1.0, 1.0, 1.0));
        let e = ef1(&seq("a b c"), &seq("b c d"));
        assert_eq!(e.overlap, 2);
        assert_eq!((e.precision, e.recall), (2.0 / 3.0, 2.0 / 3.0));
        assert!((e.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(ef1(&seq(""), &seq("x")).f1, 0.0);
        assert_eq!(ef1(&seq(""), &seq("")).f1, 0.0);
    }

    #[test]
    fn em_cases() {
        assert_eq!(em_token(&seq("a b c"), &seq("a b c")).unwrap(), 1.0);
        assert_eq!(em_token(&seq("a b c"), &seq("b c d")).unwrap(), 2.0 / 3.0);
        assert_eq!(em_token(&seq("x"), &seq("x x")).unwrap(), 0.5);
        assert_eq!(
            em_token(&seq("x"), &seq("")),
            Err(MetricError::EmptyReference)
        );
    }

    fn word_list() -> impl Strategy<Value = String> {
        prop::collection::vec(
            prop::sample::select(vec!["a", "b", "c", "d", "the", "x.m"]),
            0..15,
        )
        .prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn normalize_idempotent(s in "\\PC{0,60}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once.joined()), once);
        }

        #[test]
        fn scores_in_unit_range(a in "\\PC{0,80}", b in "\\PC{1,80}") {
            let (pa, pb) = (normalize(&a), normalize(&b));
            let e = ef1(&pa, &pb);
            for v in [e.precision, e.recall, e.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if !pb.is_empty() {
                let bl = bleu1(&pa, &pb).unwrap();
                prop_assert!((0.0..=1.0).contains(&bl.score));
                prop_assert!((0.0..=1.0).contains(&em_token(&pa, &pb).unwrap()));
            }
        }

        #[test]
        fn ef1_symmetric(a in word_list(), b in word_list()) {
            let (pa, pb) = (normalize(&a), normalize(&b));
            prop_assert!((ef1(&pa, &pb).f1 - ef1(&pb, &pa).f1).abs() < 1e-12);
        }

        #[test]
        fn bleu_identity_is_one(a in word_list()) {
            let pa = normalize(&a);
            prop_assume!(!pa.is_empty());
            prop_assert!((bleu1(&pa, &pa).unwrap().score - 1.0).abs() < 1e-12);
        }

        #[test]
        fn metrics_stable_under_renormalization(a in "\\PC{0,60}", b in "\\PC{1,60}") {
            let (pa, pb) = (normalize(&a), normalize(&b));
            let (qa, qb) = (normalize(&pa.joined()), normalize(&pb.joined()));
            prop_assert_eq!(ef1(&pa, &pb), ef1(&qa, &qb));
            prop_assert_eq!(bleu1(&pa, &pb), bleu1(&qa, &qb));
        }

        #[test]
        fn shortening_perfect_candidate_lowers_bleu(n in 2usize..30, cut in 1usize..29) {
            prop_assume!(cut < n);
            let words: Vec<String> = (0..n).map(|i| alloc::format!("w{i}")).collect();
            let reference = normalize(&words.join(" "));
            let full = bleu1(&reference, &reference).unwrap().score;
            let short = normalize(&words[..n - cut].join(" "));
            let shorter = normalize(&words[..n - cut - 1].join(" "));
            let s1 = bleu1(&short, &reference).unwrap().score;
            prop_assert!(s1 < full);
            if !shorter.is_empty() {
                prop_assert!(bleu1(&shorter, &reference).unwrap().score < s1);
            }
        }
    }
}
