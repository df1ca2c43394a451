//! Corpus BLEU and learning-curve summaries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricLog;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("no sentences to score")]
    Empty,
}

/// Corpus-level BLEU with its ingredients. `score` is on the 0-100 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// BLEU-4 over lowercased, whitespace-tokenized text with clipped n-gram
/// counts pooled over the corpus and no smoothing.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<BleuReport, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::LengthMismatch { hyps: hyps.len(), refs: refs.len() });
    }
    if hyps.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0u64, 0u64);
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = (tokenize(h.as_ref()), tokenize(r.as_ref()));
        hyp_len += h.len() as u64;
        ref_len += r.len() as u64;
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            for (g, &c) in &hc {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1) as u64;
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if totals[n] == 0 { 0.0 } else { matches[n] as f64 / totals[n] as f64 };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport { score, precisions, matches, totals, brevity_penalty, hyp_len, ref_len })
}

/// Hours of elapsed training until the dev curve first reaches `threshold`.
pub fn time_to_threshold(log: &MetricLog, threshold: f64) -> Option<f64> {
    log.records().iter().find(|r| r.dev_bleu >= threshold).map(|r| r.wall_clock_seconds / 3600.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_text_scores_100() {
        let s = ["the cat sat on the mat today"];
        let r = corpus_bleu(&s, &s).unwrap();
        assert!((r.score - 100.0).abs() < 1e-9);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn case_is_ignored() {
        let r = corpus_bleu(&["The Cat sat on the MAT"], &["the cat sat on the mat"]).unwrap();
        assert!((r.score - 100.0).abs() < 1e-9);
    }

    #[test]
    fn no_four_gram_match_scores_zero() {
        let r = corpus_bleu(&["a b c d"], &["a b c e"]).unwrap();
        assert_eq!(r.score, 0.0);
    }

    #[test]
    fn mismatched_lengths_are_an_error() {
        assert_eq!(corpus_bleu(&["a"], &["a", "b"]).unwrap_err(), EvalError::LengthMismatch { hyps: 1, refs: 2 });
        assert_eq!(corpus_bleu::<&str, &str>(&[], &[]).unwrap_err(), EvalError::Empty);
    }
}
