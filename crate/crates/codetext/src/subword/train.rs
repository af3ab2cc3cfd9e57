//! Unigram-language-model vocabulary training.
//!
//! Pipeline: shuffle and cap the sentence stream, fix the covered
//! character set, seed candidate pieces from frequent substrings, then
//! alternate EM (lattice forward-backward expected counts, log-probability
//! re-estimation) with likelihood-loss pruning until the piece budget is
//! reached. Single covered characters are never pruned, so every covered
//! word stays representable.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Piece, VocabError, Vocabulary, NUM_SPECIALS, WORD_MARKER};

#[derive(Debug, Clone)]
pub struct VocabTrainConfig {
    /// Final vocabulary size including specials and sentinels.
    pub target_size: usize,
    /// Fraction of training characters that must stay representable.
    pub character_coverage: f64,
    /// Cap on the number of sentences used for training.
    pub max_sentences: usize,
    /// Seed for the pre-training sentence shuffle.
    pub shuffle_seed: u64,
    /// EM iterations per prune round.
    pub em_rounds: usize,
    /// Fraction of pieces removed per prune round.
    pub prune_fraction: f64,
    /// Sentinel mask tokens reserved at the top of the ID range.
    pub sentinel_count: u32,
    /// Longest candidate piece, in characters.
    pub max_piece_chars: usize,
    /// Seed candidate cap, as a multiple of `target_size`.
    pub seed_cap_factor: usize,
    /// Minimum occurrences for a multi-character seed candidate.
    pub min_piece_freq: u64,
}

impl Default for VocabTrainConfig {
    fn default() -> Self {
        VocabTrainConfig {
            target_size: 4096,
            character_coverage: 0.9999,
            max_sentences: 40_000_000,
            shuffle_seed: 0,
            em_rounds: 2,
            prune_fraction: 0.25,
            sentinel_count: 100,
            max_piece_chars: 8,
            seed_cap_factor: 20,
            min_piece_freq: 2,
        }
    }
}

impl VocabTrainConfig {
    /// The documented full-scale preset: 32,000 pieces, 0.9999 coverage,
    /// 40M-sentence cap.
    pub fn full_scale() -> Self {
        VocabTrainConfig {
            target_size: 32_000,
            ..VocabTrainConfig::default()
        }
    }
}

struct PieceState {
    surface: String,
    chars: Vec<char>,
    log_prob: f64,
    expected: f64,
    required: bool,
}

/// Floor log probability for pieces whose expected count underflows.
const FLOOR_LOG_PROB: f64 = -1.0e2;

const CHUNK_WORDS: usize = 256;

/// Train a vocabulary on a sentence stream.
pub fn train_vocab<I>(sentences: I, cfg: &VocabTrainConfig) -> Result<Vocabulary, VocabError>
where
    I: IntoIterator<Item = String>,
{
    let reserved = NUM_SPECIALS as usize + cfg.sentinel_count as usize;
    if cfg.target_size <= reserved {
        return Err(VocabError::TargetTooSmall {
            target: cfg.target_size,
            reserved,
        });
    }
    let budget = cfg.target_size - reserved;

    let mut sentences: Vec<String> = sentences.into_iter().collect();
    if sentences.is_empty() {
        return Err(VocabError::EmptyStream);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    sentences.shuffle(&mut rng);
    sentences.truncate(cfg.max_sentences);

    // Character coverage: the most frequent characters whose cumulative
    // count reaches the threshold stay representable; the rest map to unk.
    let mut char_freq: HashMap<char, u64> = HashMap::new();
    let mut total_chars = 0u64;
    for sentence in &sentences {
        for word in sentence.split_whitespace() {
            for c in word.chars() {
                *char_freq.entry(c).or_insert(0) += 1;
                total_chars += 1;
            }
        }
    }
    let mut by_freq: Vec<(char, u64)> = char_freq.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let threshold = (cfg.character_coverage * total_chars as f64).ceil() as u64;
    let mut covered: Vec<char> = vec![WORD_MARKER];
    let mut cum = 0u64;
    for (c, freq) in by_freq {
        if cum >= threshold {
            break;
        }
        covered.push(c);
        cum += freq;
    }
    let covered_set: std::collections::HashSet<char> = covered.iter().copied().collect();

    // Marked word counts, dropping words with uncovered characters.
    let mut word_counts: HashMap<String, u64> = HashMap::new();
    for sentence in &sentences {
        for word in sentence.split_whitespace() {
            if word.chars().all(|c| covered_set.contains(&c)) {
                let mut marked = String::with_capacity(word.len() + 3);
                marked.push(WORD_MARKER);
                marked.push_str(word);
                *word_counts.entry(marked).or_insert(0) += 1;
            }
        }
    }
    drop(sentences);
    let mut words: Vec<(Vec<char>, u64)> = word_counts
        .iter()
        .map(|(w, &c)| (w.chars().collect(), c))
        .collect();
    words.sort_by(|a, b| a.0.cmp(&b.0));

    // Seed candidates: all substrings up to the length cap, counted over
    // word occurrences.
    let mut sub_freq: HashMap<String, u64> = HashMap::new();
    for (chars, count) in &words {
        for i in 0..chars.len() {
            let top = cfg.max_piece_chars.min(chars.len() - i);
            let mut buf = String::new();
            for len in 1..=top {
                buf.push(chars[i + len - 1]);
                *sub_freq.entry(buf.clone()).or_insert(0) += count;
            }
        }
    }
    let mut singles: Vec<(String, u64)> = covered
        .iter()
        .map(|&c| {
            let s = c.to_string();
            let freq = sub_freq.get(&s).copied().unwrap_or(1);
            (s, freq)
        })
        .collect();
    singles.sort_by(|a, b| a.0.cmp(&b.0));
    if singles.len() > budget {
        return Err(VocabError::TargetTooSmall {
            target: cfg.target_size,
            reserved: reserved + singles.len(),
        });
    }
    let mut multis: Vec<(String, u64)> = sub_freq
        .into_iter()
        .filter(|(s, freq)| s.chars().count() >= 2 && *freq >= cfg.min_piece_freq)
        .collect();
    multis.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let cap = (cfg.seed_cap_factor * cfg.target_size).saturating_sub(singles.len());
    multis.truncate(cap);
    if singles.len() + multis.len() < budget {
        return Err(VocabError::TargetUnreachable {
            target: cfg.target_size,
            available: singles.len() + multis.len() + reserved,
        });
    }

    let total_freq: u64 = singles.iter().chain(multis.iter()).map(|(_, f)| f).sum();
    let log_total = (total_freq.max(1) as f64).ln();
    let mut pieces: Vec<PieceState> = singles
        .iter()
        .map(|(s, f)| (s, f, true))
        .chain(multis.iter().map(|(s, f)| (s, f, false)))
        .map(|(s, &f, required)| PieceState {
            surface: s.clone(),
            chars: s.chars().collect(),
            log_prob: (f.max(1) as f64).ln() - log_total,
            expected: f as f64,
            required,
        })
        .collect();

    // Alternate EM with pruning until the piece budget is reached.
    loop {
        for _ in 0..cfg.em_rounds.max(1) {
            em_step(&mut pieces, &words, cfg.max_piece_chars);
        }
        if pieces.len() <= budget {
            break;
        }
        let removable = pieces.len() - budget;
        let k = ((pieces.len() as f64 * cfg.prune_fraction) as usize)
            .clamp(1, removable);
        prune(&mut pieces, k, cfg.max_piece_chars);
    }
    for _ in 0..cfg.em_rounds.max(1) {
        em_step(&mut pieces, &words, cfg.max_piece_chars);
    }

    let mut learned: Vec<Piece> = pieces
        .into_iter()
        .map(|p| Piece {
            surface: p.surface,
            log_prob: p.log_prob.min(0.0),
        })
        .collect();
    learned.sort_by(|a, b| {
        b.log_prob
            .partial_cmp(&a.log_prob)
            .expect("finite log probabilities")
            .then_with(|| a.surface.cmp(&b.surface))
    });
    Vocabulary::from_learned_pieces(learned, cfg.sentinel_count)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// One EM iteration: expected piece counts via per-word lattice
/// forward-backward, then log-probability re-estimation.
fn em_step(pieces: &mut Vec<PieceState>, words: &[(Vec<char>, u64)], max_len: usize) {
    let index: HashMap<&str, usize> = pieces
        .iter()
        .enumerate()
        .map(|(i, p)| (p.surface.as_str(), i))
        .collect();
    let log_probs: Vec<f64> = pieces.iter().map(|p| p.log_prob).collect();

    // Fixed-size chunks keep the floating-point reduction order
    // independent of the thread count.
    let partials: Vec<Vec<f64>> = words
        .par_chunks(CHUNK_WORDS)
        .map(|chunk| {
            let mut expected = vec![0.0f64; pieces.len()];
            for (chars, count) in chunk {
                accumulate_word(chars, *count, &index, &log_probs, max_len, &mut expected);
            }
            expected
        })
        .collect();
    let mut expected = vec![0.0f64; pieces.len()];
    for partial in partials {
        for (e, p) in expected.iter_mut().zip(partial) {
            *e += p;
        }
    }

    let total: f64 = expected.iter().sum();
    let log_total = total.max(f64::MIN_POSITIVE).ln();
    for (piece, &count) in pieces.iter_mut().zip(&expected) {
        piece.expected = count;
        piece.log_prob = if count > 1e-12 {
            (count.ln() - log_total).min(0.0)
        } else {
            FLOOR_LOG_PROB
        };
    }
}

fn accumulate_word(
    chars: &[char],
    count: u64,
    index: &HashMap<&str, usize>,
    log_probs: &[f64],
    max_len: usize,
    expected: &mut [f64],
) {
    let n = chars.len();
    // Edge list: (start, len, piece index).
    let mut edges: Vec<(usize, usize, usize)> = Vec::new();
    let mut buf = String::new();
    for i in 0..n {
        buf.clear();
        for len in 1..=max_len.min(n - i) {
            buf.push(chars[i + len - 1]);
            if let Some(&p) = index.get(buf.as_str()) {
                edges.push((i, len, p));
            }
        }
    }
    let mut alpha = vec![f64::NEG_INFINITY; n + 1];
    alpha[0] = 0.0;
    for &(i, len, p) in &edges {
        if alpha[i] != f64::NEG_INFINITY {
            alpha[i + len] = log_sum_exp(alpha[i + len], alpha[i] + log_probs[p]);
        }
    }
    let z = alpha[n];
    if z == f64::NEG_INFINITY {
        return;
    }
    let mut beta = vec![f64::NEG_INFINITY; n + 1];
    beta[n] = 0.0;
    for &(i, len, p) in edges.iter().rev() {
        if beta[i + len] != f64::NEG_INFINITY {
            beta[i] = log_sum_exp(beta[i], log_probs[p] + beta[i + len]);
        }
    }
    let weight = count as f64;
    for &(i, len, p) in &edges {
        if alpha[i] == f64::NEG_INFINITY || beta[i + len] == f64::NEG_INFINITY {
            continue;
        }
        let posterior = (alpha[i] + log_probs[p] + beta[i + len] - z).exp();
        expected[p] += weight * posterior;
    }
}

/// Remove the `k` pieces with the lowest likelihood loss. The loss of a
/// piece is its expected count times the log-probability gap to its best
/// alternative segmentation; pieces with no alternative are kept.
fn prune(pieces: &mut Vec<PieceState>, k: usize, max_len: usize) {
    let index: HashMap<&str, usize> = pieces
        .iter()
        .enumerate()
        .map(|(i, p)| (p.surface.as_str(), i))
        .collect();
    let mut losses: Vec<(f64, usize)> = Vec::new();
    for (idx, piece) in pieces.iter().enumerate() {
        if piece.required {
            continue;
        }
        match alt_segmentation_score(&piece.chars, idx, &index, pieces, max_len) {
            Some(alt) => losses.push((piece.expected * (piece.log_prob - alt), idx)),
            None => {}
        }
    }
    losses.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite losses")
            .then_with(|| pieces[a.1].surface.cmp(&pieces[b.1].surface))
    });
    let doomed: std::collections::HashSet<usize> =
        losses.iter().take(k).map(|&(_, idx)| idx).collect();
    let mut idx = 0;
    pieces.retain(|_| {
        let keep = !doomed.contains(&idx);
        idx += 1;
        keep
    });
}

/// Best segmentation score of `chars` that does not use piece `skip`.
fn alt_segmentation_score(
    chars: &[char],
    skip: usize,
    index: &HashMap<&str, usize>,
    pieces: &[PieceState],
    max_len: usize,
) -> Option<f64> {
    let n = chars.len();
    let mut best = vec![f64::NEG_INFINITY; n + 1];
    best[n] = 0.0;
    let mut buf = String::new();
    for i in (0..n).rev() {
        buf.clear();
        for len in 1..=max_len.min(n - i) {
            buf.push(chars[i + len - 1]);
            if let Some(&p) = index.get(buf.as_str()) {
                if p == skip || best[i + len] == f64::NEG_INFINITY {
                    continue;
                }
                let score = pieces[p].log_prob + best[i + len];
                if score > best[i] {
                    best[i] = score;
                }
            }
        }
    }
    (best[0] != f64::NEG_INFINITY).then_some(best[0])
}
