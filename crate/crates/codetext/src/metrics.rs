//! Evaluation metrics: smoothed BLEU-4, corpus BLEU-4, ROUGE-L, exact match.
//!
//! All metrics consume whitespace-tokenized text (the normalized,
//! space-joined form produced by [`crate::normalize`]). BLEU and ROUGE
//! scores use the percentage convention (0–100); exact match is a
//! fraction in [0, 1].

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("exact match is undefined on an empty pair set")]
    EmptyPairSet,
}

/// One hypothesis with 1–3 references, all whitespace-tokenized.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub hypothesis: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    /// Tokenize a hypothesis/reference pair by whitespace splitting.
    pub fn from_text(hypothesis: &str, references: &[&str]) -> Self {
        EvalPair {
            hypothesis: split_tokens(hypothesis),
            references: references.iter().map(|r| split_tokens(r)).collect(),
        }
    }
}

fn split_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_string()).collect()
}

/// Per-metric result with corpus score and per-sentence scores where defined.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub score: f64,
    pub per_sentence: Vec<f64>,
    pub n: usize,
}

impl MetricReport {
    /// Compact one-line JSON of the corpus score keyed by metric name.
    pub fn summary_json(&self) -> String {
        serde_json::json!({ &self.metric: self.score, "n": self.n }).to_string()
    }
}

const MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped match count and total hypothesis n-gram count for one order.
fn clipped_matches(pair: &EvalPair, n: usize) -> (usize, usize) {
    let hyp_counts = ngram_counts(&pair.hypothesis, n);
    let total: usize = hyp_counts.values().sum();
    let mut matched = 0usize;
    for (gram, &count) in &hyp_counts {
        let best_ref = pair
            .references
            .iter()
            .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
            .max()
            .unwrap_or(0);
        matched += count.min(best_ref);
    }
    (matched, total)
}

/// Reference length closest to the hypothesis length; ties prefer the shorter.
fn closest_ref_len(pair: &EvalPair) -> usize {
    let c = pair.hypothesis.len() as i64;
    pair.references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&r| ((r as i64 - c).abs(), r))
        .unwrap_or(0)
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        return 0.0;
    }
    (1.0 - r as f64 / c as f64).min(0.0).exp()
}

/// Sentence-level smoothed BLEU-4 in [0, 1].
///
/// Modified n-gram precisions with add-one smoothing applied to both
/// matched and total counts for n >= 2 (raw counts for n = 1); an empty
/// n-gram set smooths to (0+1)/(0+1) = 1. Geometric mean of the four
/// precisions times the brevity penalty against the closest reference
/// length.
fn sentence_smoothed_bleu(pair: &EvalPair) -> f64 {
    let c = pair.hypothesis.len();
    if c == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0f64;
    for n in 1..=MAX_ORDER {
        let (matched, total) = clipped_matches(pair, n);
        let p = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    brevity_penalty(c, closest_ref_len(pair)) * (log_sum / MAX_ORDER as f64).exp()
}

/// Sentence-averaged smoothed BLEU-4, scored 0–100.
pub fn smoothed_bleu4(pairs: &[EvalPair]) -> MetricReport {
    let per_sentence: Vec<f64> = pairs
        .iter()
        .map(|p| 100.0 * sentence_smoothed_bleu(p))
        .collect();
    let score = if per_sentence.is_empty() {
        0.0
    } else {
        per_sentence.iter().sum::<f64>() / per_sentence.len() as f64
    };
    MetricReport {
        metric: "smoothed_bleu4".to_string(),
        score,
        per_sentence,
        n: pairs.len(),
    }
}

/// Corpus-level BLEU-4, scored 0–100.
///
/// Clipped matches and totals are summed over all pairs per order, with
/// the corpus brevity penalty computed from summed hypothesis lengths and
/// summed closest-reference lengths. Zero precision at any order gives 0;
/// orders with no hypothesis n-grams anywhere in the corpus are excluded
/// from the geometric mean.
pub fn corpus_bleu4(pairs: &[EvalPair]) -> MetricReport {
    let mut matched = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for pair in pairs {
        for n in 1..=MAX_ORDER {
            let (m, t) = clipped_matches(pair, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
        hyp_len += pair.hypothesis.len();
        ref_len += closest_ref_len(pair);
    }
    let active: Vec<usize> = (0..MAX_ORDER).filter(|&i| total[i] > 0).collect();
    let mut score = 0.0;
    if hyp_len > 0 && !active.is_empty() && active.iter().all(|&i| matched[i] > 0) {
        let log_sum: f64 = active
            .iter()
            .map(|&i| (matched[i] as f64 / total[i] as f64).ln())
            .sum();
        score = 100.0
            * brevity_penalty(hyp_len, ref_len)
            * (log_sum / active.len() as f64).exp();
    }
    MetricReport {
        metric: "bleu4".to_string(),
        score,
        per_sentence: Vec::new(),
        n: pairs.len(),
    }
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn sentence_rouge_l(pair: &EvalPair) -> f64 {
    pair.references
        .iter()
        .map(|r| {
            let l = lcs_len(&pair.hypothesis, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / pair.hypothesis.len() as f64;
            let rec = l / r.len() as f64;
            2.0 * p * rec / (p + rec)
        })
        .fold(0.0, f64::max)
}

/// ROUGE-L F-measure (beta = 1) against the best reference, scored 0–100.
pub fn rouge_l(pairs: &[EvalPair]) -> MetricReport {
    let per_sentence: Vec<f64> = pairs
        .iter()
        .map(|p| {
            if p.hypothesis.is_empty() {
                0.0
            } else {
                100.0 * sentence_rouge_l(p)
            }
        })
        .collect();
    let score = if per_sentence.is_empty() {
        0.0
    } else {
        per_sentence.iter().sum::<f64>() / per_sentence.len() as f64
    };
    MetricReport {
        metric: "rouge_l".to_string(),
        score,
        per_sentence,
        n: pairs.len(),
    }
}

/// Fraction of pairs whose hypothesis equals one of its references
/// token-for-token, in [0, 1].
pub fn exact_match(pairs: &[EvalPair]) -> Result<MetricReport, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyPairSet);
    }
    let per_sentence: Vec<f64> = pairs
        .iter()
        .map(|p| {
            if p.references.iter().any(|r| *r == p.hypothesis) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let score = per_sentence.iter().sum::<f64>() / per_sentence.len() as f64;
    Ok(MetricReport {
        metric: "exact_match".to_string(),
        score,
        per_sentence,
        n: pairs.len(),
    })
}
