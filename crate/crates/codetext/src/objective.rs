//! Model-ready training examples: supervised prefix→target pairs and
//! span-corruption self-supervision.
//!
//! Span corruption replaces contiguous token spans with sentinel IDs and
//! asks the model to emit the removed spans. Corrupted examples are
//! materialized once per epoch seed; every stochastic operation takes an
//! explicit seed, and per-sample seeds are derived from the master seed
//! and the sample id so parallel generation is order-independent.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Sample, TaskSpec};
use crate::normalize::apply_prefix;
use crate::subword::{Vocabulary, EOS_ID};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("sample {id}: {message}")]
    DegenerateSample { id: String, message: String },
    #[error("sequence too short to corrupt (length {0}, need >= 2)")]
    TooShort(usize),
    #[error("sequence contains reserved id {0}")]
    ReservedId(u32),
    #[error("{needed} spans need {needed} + 1 sentinels but only {available} exist")]
    TooManySpans { needed: usize, available: u32 },
    #[error("corrupted target length {len} exceeds max_len {max_len}")]
    TargetTooLong { len: usize, max_len: usize },
    #[error("sentinel structure mismatch: {0}")]
    SentinelMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid shard: {message}")]
    BadShard { path: PathBuf, message: String },
}

/// One encoded (input, target) pair ready for batching. Targets always
/// end with eos; neither sequence contains pad.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub task: String,
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy)]
pub struct CorruptionConfig {
    /// Fraction of tokens to corrupt.
    pub rate: f64,
    /// Mean corrupted-span length in tokens.
    pub mean_span: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            rate: 0.15,
            mean_span: 3.0,
            seed: 0,
        }
    }
}

/// Stable per-sample seed: hash of the master seed and the sample id.
pub fn derive_seed(master: u64, id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 8+ bytes"))
}

/// Build a supervised example: encoded prefixed source (truncated to
/// `max_len`) and encoded target (truncated to `max_len - 1`, then eos).
/// Sources and targets are expected in normalized form.
pub fn make_supervised(
    sample: &Sample,
    spec: &TaskSpec,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TrainingExample, ObjectiveError> {
    if sample.target.is_empty() {
        return Err(ObjectiveError::DegenerateSample {
            id: sample.id.clone(),
            message: "supervised sample with empty target".to_string(),
        });
    }
    let mut input_ids = vocab.encode(&apply_prefix(spec, &sample.source));
    input_ids.truncate(max_len);
    let mut target_ids = vocab.encode(&sample.target);
    target_ids.truncate(max_len - 1);
    if input_ids.is_empty() || target_ids.is_empty() {
        return Err(ObjectiveError::DegenerateSample {
            id: sample.id.clone(),
            message: "empty encoding after truncation".to_string(),
        });
    }
    target_ids.push(EOS_ID);
    Ok(TrainingExample {
        task: spec.name.clone(),
        input_ids,
        target_ids,
    })
}

/// Number of corrupted tokens and spans for a sequence of length `len`.
pub fn corruption_plan(len: usize, cfg: &CorruptionConfig) -> (usize, usize) {
    let n_noise = ((cfg.rate * len as f64).round() as usize).clamp(1, len - 1);
    let mut n_spans = ((n_noise as f64 / cfg.mean_span).round() as usize).max(1);
    // Feasibility: each of the n_spans non-noise segments needs >= 1 token.
    n_spans = n_spans.min(len - n_noise);
    (n_noise, n_spans)
}

/// Split `total` into `parts` segments, each >= 1, uniformly over
/// compositions.
fn random_composition(total: usize, parts: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    debug_assert!(parts >= 1 && total >= parts);
    let cuts = rand::seq::index::sample(rng, total - 1, parts - 1);
    let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    cuts.push(total);
    let mut lengths = Vec::with_capacity(parts);
    let mut prev = 0;
    for cut in cuts {
        lengths.push(cut - prev);
        prev = cut;
    }
    lengths
}

/// Corrupt a token sequence: noise spans are replaced by ascending
/// sentinels in the input; the target lists each sentinel with its
/// removed span, a closing sentinel, and eos.
pub fn span_corrupt(
    ids: &[u32],
    cfg: &CorruptionConfig,
    vocab: &Vocabulary,
) -> Result<(Vec<u32>, Vec<u32>), ObjectiveError> {
    let len = ids.len();
    if len < 2 {
        return Err(ObjectiveError::TooShort(len));
    }
    if let Some(&bad) = ids.iter().find(|&&id| !vocab.is_text_id(id)) {
        return Err(ObjectiveError::ReservedId(bad));
    }
    let (n_noise, n_spans) = corruption_plan(len, cfg);
    if n_spans as u32 + 1 > vocab.sentinel_count() {
        return Err(ObjectiveError::TooManySpans {
            needed: n_spans,
            available: vocab.sentinel_count(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise_lengths = random_composition(n_noise, n_spans, &mut rng);
    let keep_lengths = random_composition(len - n_noise, n_spans, &mut rng);

    let mut input = Vec::with_capacity(len - n_noise + n_spans);
    let mut target = Vec::with_capacity(n_noise + n_spans + 2);
    let mut cursor = 0;
    for k in 0..n_spans {
        input.extend_from_slice(&ids[cursor..cursor + keep_lengths[k]]);
        cursor += keep_lengths[k];
        let sentinel = vocab
            .sentinel_id(k as u32)
            .expect("span count checked against sentinel budget");
        input.push(sentinel);
        target.push(sentinel);
        target.extend_from_slice(&ids[cursor..cursor + noise_lengths[k]]);
        cursor += noise_lengths[k];
    }
    debug_assert_eq!(cursor, len);
    target.push(
        vocab
            .sentinel_id(n_spans as u32)
            .expect("closing sentinel within budget"),
    );
    target.push(EOS_ID);
    Ok((input, target))
}

/// Inverse of [`span_corrupt`]: splice each target span back in place of
/// its sentinel, dropping the closing sentinel and eos.
pub fn reconstruct(
    input_ids: &[u32],
    target_ids: &[u32],
    vocab: &Vocabulary,
) -> Result<Vec<u32>, ObjectiveError> {
    let sentinel_k = |id: u32| -> Option<u32> {
        (id >= vocab.first_sentinel_id() && id < vocab.size()).then(|| vocab.size() - 1 - id)
    };
    // Parse the target into per-sentinel spans.
    let mut spans: Vec<Vec<u32>> = Vec::new();
    let mut expected_k = 0u32;
    let mut iter = target_ids.iter().peekable();
    while let Some(&id) = iter.next() {
        if id == EOS_ID && iter.peek().is_none() {
            break;
        }
        let k = sentinel_k(id).ok_or_else(|| {
            ObjectiveError::SentinelMismatch(format!("target: expected sentinel, found id {id}"))
        })?;
        if k != expected_k {
            return Err(ObjectiveError::SentinelMismatch(format!(
                "target sentinel out of order: expected k={expected_k}, found k={k}"
            )));
        }
        expected_k += 1;
        let mut span = Vec::new();
        while let Some(&&next) = iter.peek() {
            if sentinel_k(next).is_some() || next == EOS_ID {
                break;
            }
            span.push(next);
            iter.next();
        }
        spans.push(span);
    }
    let closing = spans.pop().ok_or_else(|| {
        ObjectiveError::SentinelMismatch("target carries no sentinels".to_string())
    })?;
    if !closing.is_empty() {
        return Err(ObjectiveError::SentinelMismatch(
            "closing sentinel must end the spans".to_string(),
        ));
    }

    let mut out = Vec::new();
    let mut next_k = 0u32;
    for &id in input_ids {
        match sentinel_k(id) {
            Some(k) => {
                if k != next_k {
                    return Err(ObjectiveError::SentinelMismatch(format!(
                        "input sentinel out of order: expected k={next_k}, found k={k}"
                    )));
                }
                let span = spans.get(k as usize).ok_or_else(|| {
                    ObjectiveError::SentinelMismatch(format!(
                        "input sentinel k={k} missing from target"
                    ))
                })?;
                out.extend_from_slice(span);
                next_k += 1;
            }
            None => out.push(id),
        }
    }
    if (next_k as usize) != spans.len() {
        return Err(ObjectiveError::SentinelMismatch(format!(
            "target carries {} spans but input has {} sentinels",
            spans.len(),
            next_k
        )));
    }
    Ok(out)
}

/// Build one self-supervised example from one unlabeled sample: encode,
/// truncate to `max_len`, then corrupt. One sample yields exactly one
/// example; samples are never packed together.
pub fn make_self_supervised(
    sample: &Sample,
    vocab: &Vocabulary,
    cfg: &CorruptionConfig,
    max_len: usize,
) -> Result<TrainingExample, ObjectiveError> {
    if !sample.target.is_empty() {
        return Err(ObjectiveError::DegenerateSample {
            id: sample.id.clone(),
            message: "self-supervised sample with non-empty target".to_string(),
        });
    }
    let mut ids = vocab.encode(&sample.source);
    ids.truncate(max_len);
    if ids.len() < 2 {
        return Err(ObjectiveError::DegenerateSample {
            id: sample.id.clone(),
            message: format!("encoding too short to corrupt (length {})", ids.len()),
        });
    }
    let per_sample = CorruptionConfig {
        seed: derive_seed(cfg.seed, &sample.id),
        ..*cfg
    };
    let (input_ids, target_ids) = span_corrupt(&ids, &per_sample, vocab)?;
    if target_ids.len() > max_len {
        return Err(ObjectiveError::TargetTooLong {
            len: target_ids.len(),
            max_len,
        });
    }
    Ok(TrainingExample {
        task: sample.task.clone(),
        input_ids,
        target_ids,
    })
}

pub const SHARD_MAGIC: &[u8; 8] = b"CTEX0001";

/// Write examples as a binary shard.
pub fn write_shard(path: &Path, examples: &[TrainingExample]) -> Result<(), ObjectiveError> {
    let io_err = |source| ObjectiveError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    out.extend_from_slice(SHARD_MAGIC);
    for example in examples {
        let name = example.task.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(example.input_ids.len() as u32).to_le_bytes());
        for &id in &example.input_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out.extend_from_slice(&(example.target_ids.len() as u32).to_le_bytes());
        for &id in &example.target_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)?;
    Ok(())
}

pub fn read_shard(path: &Path) -> Result<Vec<TrainingExample>, ObjectiveError> {
    let bytes = fs::read(path).map_err(|source| ObjectiveError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < SHARD_MAGIC.len() || &bytes[..SHARD_MAGIC.len()] != SHARD_MAGIC {
        return Err(ObjectiveError::BadShard {
            path: path.to_path_buf(),
            message: "missing CTEX0001 magic".to_string(),
        });
    }
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], ObjectiveError> {
        if *pos + n > bytes.len() {
            return Err(ObjectiveError::BadShard {
                path: path.to_path_buf(),
                message: format!("truncated at byte {pos}"),
            });
        }
        let slice = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(slice)
    };
    let mut pos = SHARD_MAGIC.len();
    let mut examples = Vec::new();
    while pos < bytes.len() {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let task = String::from_utf8(take(&mut pos, name_len)?.to_vec()).map_err(|_| {
            ObjectiveError::BadShard {
                path: path.to_path_buf(),
                message: "task name is not UTF-8".to_string(),
            }
        })?;
        let read_ids = |pos: &mut usize| -> Result<Vec<u32>, ObjectiveError> {
            let n = u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()) as usize;
            let raw = take(pos, n * 4)?;
            Ok(raw
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let input_ids = read_ids(&mut pos)?;
        let target_ids = read_ids(&mut pos)?;
        examples.push(TrainingExample {
            task,
            input_ids,
            target_ids,
        });
    }
    Ok(examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Language, Split, TaskKind, TaskMetric};
    use crate::subword::{Piece, PAD_ID};
    use rand::Rng;

    /// Vocabulary with `n_learned` dummy pieces and `sentinels` sentinels.
    fn id_vocab(n_learned: usize, sentinels: u32) -> Vocabulary {
        let learned = (0..n_learned)
            .map(|i| Piece {
                surface: format!("x{i}"),
                log_prob: -1.0,
            })
            .collect();
        Vocabulary::from_learned_pieces(learned, sentinels).unwrap()
    }

    fn text_ids(vocab: &Vocabulary, len: usize, rng: &mut impl Rng) -> Vec<u32> {
        (0..len)
            .map(|_| rng.random_range(4..vocab.first_sentinel_id()))
            .collect()
    }

    #[test]
    fn corruption_plan_matches_formulas() {
        let cfg = CorruptionConfig::default();
        // L=20: n_noise = round(3.0) = 3, n_spans = max(1, round(1)) = 1.
        assert_eq!(corruption_plan(20, &cfg), (3, 1));
        // L=100: n_noise = 15, n_spans = 5.
        assert_eq!(corruption_plan(100, &cfg), (15, 5));
        // L=512: n_noise = 77, n_spans = 26.
        assert_eq!(corruption_plan(512, &cfg), (77, 26));
    }

    #[test]
    fn corrupt_lengths_match_plan() {
        let vocab = id_vocab(64, 40);
        let cfg = CorruptionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ids = text_ids(&vocab, 20, &mut rng);
        let (input, target) = span_corrupt(&ids, &cfg, &vocab).unwrap();
        assert_eq!(input.len(), 17 + 1);
        assert_eq!(target.len(), 1 + 3 + 1 + 1);
        assert_eq!(*target.last().unwrap(), EOS_ID);

        let ids = text_ids(&vocab, 100, &mut rng);
        let (input, _) = span_corrupt(&ids, &cfg, &vocab).unwrap();
        assert_eq!(input.len(), 85 + 5);
    }

    #[test]
    fn reconstruct_inverts_corruption() {
        // rate 0.3 / mean 1.5 at length 300 needs up to 61 sentinels.
        let vocab = id_vocab(64, 80);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..500u64 {
            let len = rng.random_range(2..300);
            let ids = text_ids(&vocab, len, &mut rng);
            let cfg = CorruptionConfig {
                rate: if trial % 2 == 0 { 0.15 } else { 0.3 },
                mean_span: if trial % 3 == 0 { 1.5 } else { 3.0 },
                seed: trial,
            };
            let (input, target) = span_corrupt(&ids, &cfg, &vocab).unwrap();
            assert_eq!(reconstruct(&input, &target, &vocab).unwrap(), ids);
        }
    }

    #[test]
    fn sentinels_ascend_in_input_and_target_counts_match() {
        let vocab = id_vocab(64, 40);
        let cfg = CorruptionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ids = text_ids(&vocab, 256, &mut rng);
        let (input, target) = span_corrupt(&ids, &cfg, &vocab).unwrap();
        let ks: Vec<u32> = input
            .iter()
            .filter(|&&id| id >= vocab.first_sentinel_id())
            .map(|&id| vocab.size() - 1 - id)
            .collect();
        let ascending: Vec<u32> = (0..ks.len() as u32).collect();
        assert_eq!(ks, ascending);
        let target_sentinels = target
            .iter()
            .filter(|&&id| id >= vocab.first_sentinel_id())
            .count();
        assert_eq!(target_sentinels, ks.len() + 1);
    }

    #[test]
    fn short_sequences_and_reserved_ids_error() {
        let vocab = id_vocab(64, 40);
        let cfg = CorruptionConfig::default();
        assert!(matches!(
            span_corrupt(&[5], &cfg, &vocab),
            Err(ObjectiveError::TooShort(1))
        ));
        assert!(matches!(
            span_corrupt(&[5, PAD_ID], &cfg, &vocab),
            Err(ObjectiveError::ReservedId(PAD_ID))
        ));
        let sentinel = vocab.sentinel_id(0).unwrap();
        assert!(matches!(
            span_corrupt(&[5, sentinel], &cfg, &vocab),
            Err(ObjectiveError::ReservedId(_))
        ));
    }

    #[test]
    fn too_many_spans_for_sentinel_budget_errors() {
        let vocab = id_vocab(64, 3);
        let cfg = CorruptionConfig {
            rate: 0.15,
            mean_span: 1.0,
            seed: 0,
        };
        // L=100 gives n_noise=15, n_spans=15 > 3-1 sentinels.
        let ids: Vec<u32> = (0..100).map(|i| 4 + (i % 64)).collect();
        assert!(matches!(
            span_corrupt(&ids, &cfg, &vocab),
            Err(ObjectiveError::TooManySpans { .. })
        ));
    }

    #[test]
    fn reconstruct_with_no_sentinels_returns_input() {
        let vocab = id_vocab(64, 40);
        let input = vec![4u32, 5, 6];
        let target = vec![vocab.sentinel_id(0).unwrap(), EOS_ID];
        assert_eq!(reconstruct(&input, &target, &vocab).unwrap(), input);
    }

    #[test]
    fn reconstruct_rejects_mismatched_sentinels() {
        let vocab = id_vocab(64, 40);
        let s0 = vocab.sentinel_id(0).unwrap();
        let s1 = vocab.sentinel_id(1).unwrap();
        // Input expects spans 0 and 1; target only closes after span 0.
        let input = vec![4u32, s0, 5, s1];
        let target = vec![s0, 6, s1, EOS_ID];
        assert!(reconstruct(&input, &target, &vocab).is_err());
        // Out-of-order input sentinels.
        let input = vec![4u32, s1, 5, s0];
        let target = vec![s0, 6, s1, 7, vocab.sentinel_id(2).unwrap(), EOS_ID];
        assert!(reconstruct(&input, &target, &vocab).is_err());
    }

    fn unlabeled(id: &str, source: &str) -> Sample {
        Sample {
            id: id.to_string(),
            task: "pretrain".to_string(),
            language: Language::English,
            source: source.to_string(),
            target: String::new(),
            split: Split::Train,
        }
    }

    #[test]
    fn self_supervised_examples_never_share_samples() {
        let vocab = crate::subword::tests::toy_vocab();
        let cfg = CorruptionConfig::default();
        let a = make_self_supervised(&unlabeled("a", "select time ab select"), &vocab, &cfg, 512)
            .unwrap();
        let b =
            make_self_supervised(&unlabeled("b", "ab ab select time"), &vocab, &cfg, 512).unwrap();
        let restored_a = reconstruct(&a.input_ids, &a.target_ids, &vocab).unwrap();
        let restored_b = reconstruct(&b.input_ids, &b.target_ids, &vocab).unwrap();
        assert_eq!(restored_a, vocab.encode("select time ab select"));
        assert_eq!(restored_b, vocab.encode("ab ab select time"));
    }

    #[test]
    fn self_supervised_length_one_errors() {
        let vocab = crate::subword::tests::toy_vocab();
        let cfg = CorruptionConfig::default();
        let err = make_self_supervised(&unlabeled("x", "ab"), &vocab, &cfg, 512).unwrap_err();
        assert!(matches!(err, ObjectiveError::DegenerateSample { .. }));
    }

    fn sql_spec() -> TaskSpec {
        TaskSpec {
            name: "source code summarization sql".to_string(),
            kind: TaskKind::Supervised,
            language: Language::Sql,
            prefix: "source code summarization sql: ".to_string(),
            metric: TaskMetric::SmoothedBleu4,
            dataset_path: PathBuf::new(),
        }
    }

    #[test]
    fn supervised_example_is_prefixed_encoded_and_eos_terminated() {
        let vocab = crate::subword::tests::toy_vocab();
        let sample = Sample {
            id: "s".to_string(),
            task: "source code summarization sql".to_string(),
            language: Language::Sql,
            source: "select time".to_string(),
            target: "ab select".to_string(),
            split: Split::Train,
        };
        let ex = make_supervised(&sample, &sql_spec(), &vocab, 512).unwrap();
        assert_eq!(
            ex.input_ids,
            vocab.encode("source code summarization sql: select time")
        );
        let mut want_target = vocab.encode("ab select");
        want_target.push(EOS_ID);
        assert_eq!(ex.target_ids, want_target);
    }

    #[test]
    fn truncation_boundaries() {
        let vocab = crate::subword::tests::toy_vocab();
        let mut sample = Sample {
            id: "s".to_string(),
            task: "source code summarization sql".to_string(),
            language: Language::Sql,
            source: "ab ab ab ab".to_string(),
            target: "ab".to_string(),
            split: Split::Train,
        };
        let full = vocab.encode(&apply_prefix(&sql_spec(), &sample.source));
        // Exactly max_len: unchanged.
        let ex = make_supervised(&sample, &sql_spec(), &vocab, full.len()).unwrap();
        assert_eq!(ex.input_ids, full);
        // max_len smaller: first max_len ids kept.
        let ex = make_supervised(&sample, &sql_spec(), &vocab, full.len() - 2).unwrap();
        assert_eq!(ex.input_ids, full[..full.len() - 2]);
        // Empty target is degenerate.
        sample.target = String::new();
        assert!(make_supervised(&sample, &sql_spec(), &vocab, 8).is_err());
    }

    #[test]
    fn shard_round_trip() {
        let examples = vec![
            TrainingExample {
                task: "alpha".to_string(),
                input_ids: vec![4, 5, 6],
                target_ids: vec![7, EOS_ID],
            },
            TrainingExample {
                task: "beta".to_string(),
                input_ids: vec![9],
                target_ids: vec![10, 11, EOS_ID],
            },
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_shard(f.path(), &examples).unwrap();
        let loaded = read_shard(f.path()).unwrap();
        assert_eq!(loaded, examples);
        let bytes = fs::read(f.path()).unwrap();
        assert_eq!(&bytes[..8], SHARD_MAGIC);
    }

    #[test]
    fn shard_rejects_bad_magic() {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), b"NOTAMAGIC").unwrap();
        assert!(matches!(
            read_shard(f.path()),
            Err(ObjectiveError::BadShard { .. })
        ));
    }

    #[test]
    fn corruption_statistics_in_band() {
        let vocab = id_vocab(64, 40);
        let mut fraction_sum = 0.0;
        let mut span_count = 0usize;
        let mut noise_total = 0usize;
        let trials = 1000;
        for seed in 0..trials {
            let cfg = CorruptionConfig {
                seed,
                ..CorruptionConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let ids = text_ids(&vocab, 512, &mut rng);
            let (input, target) = span_corrupt(&ids, &cfg, &vocab).unwrap();
            assert_eq!(reconstruct(&input, &target, &vocab).unwrap(), ids);
            let (n_noise, n_spans) = corruption_plan(512, &cfg);
            fraction_sum += n_noise as f64 / 512.0;
            noise_total += n_noise;
            span_count += n_spans;
        }
        let mean_fraction = fraction_sum / trials as f64;
        let mean_span = noise_total as f64 / span_count as f64;
        assert!((0.14..=0.16).contains(&mean_fraction), "{mean_fraction}");
        assert!((2.5..=3.5).contains(&mean_span), "{mean_span}");
    }
}
