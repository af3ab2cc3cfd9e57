//! Acceptance suite: one test (and one printed pass/fail line) per
//! criterion. Run with `cargo test --test acceptance -- --nocapture`.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use codetext::corpus::{
    build_registry_with_sizes, Language, Sample, TaskKind, TaskMetric, TaskSpec,
};
use codetext::metrics::{corpus_bleu4, exact_match, rouge_l, smoothed_bleu4, EvalPair};
use codetext::mixture::{build_mixture, MixtureSampler};
use codetext::model::{
    backward, init_params, load_checkpoint, param_count, ModelConfig, Parameters, TensorMut,
    TensorRef,
};
use codetext::objective::{
    make_supervised, reconstruct, span_corrupt, CorruptionConfig, TrainingExample,
};
use codetext::subword::{train_vocab, Piece, VocabTrainConfig, Vocabulary, UNK_ID};
use codetext::synth::{
    copy_task_examples, lexicon_sentences, program_synthesis_samples, program_synthesis_unlabeled,
};
use codetext::trainer::{
    batch_token_accuracy, strategy_driver, Adam, AdamConfig, LrSchedule, RunLog, Strategy,
    TaskData, TrainConfig,
};

fn pass(criterion: u32, message: &str) {
    println!("ACCEPTANCE {criterion} PASS - {message}");
}

// --- Criterion 1: parameter-count fidelity -------------------------------

#[test]
fn criterion_1_parameter_count_fidelity() {
    let cases = [
        ("small", ModelConfig::small(32_000), 60e6),
        ("base", ModelConfig::base(32_000), 220e6),
        ("large", ModelConfig::large(32_000), 770e6),
    ];
    for (name, cfg, target) in &cases {
        let count = param_count(cfg) as f64;
        let rel = (count - target).abs() / target;
        assert!(
            rel < 0.05,
            "{name}: {count} vs {target} (relative error {rel:.4})"
        );
    }
    pass(
        1,
        "small/base/large parameter counts within 5% of 60M/220M/770M",
    );
}

// --- Criterion 2: gradient correctness ------------------------------------

#[test]
fn criterion_2_gradient_correctness() {
    let cfg = ModelConfig {
        num_blocks: 1,
        d_model: 8,
        d_ff: 16,
        d_kv: 4,
        num_heads: 2,
        vocab_size: 16,
        dropout: 0.0,
        max_len: 32,
        rel_pos_buckets: 4,
        rel_pos_max_distance: 8,
    };
    let params = init_params::<f64>(&cfg, 17).unwrap();
    let examples = vec![
        TrainingExample {
            task: "t".to_string(),
            input_ids: vec![4, 5, 6, 7, 8],
            target_ids: vec![9, 10, 1],
        },
        TrainingExample {
            task: "t".to_string(),
            input_ids: vec![11, 12],
            target_ids: vec![13, 1],
        },
    ];
    let rows: Vec<(usize, &TrainingExample)> = examples.iter().map(|e| (0, e)).collect();
    let batch = codetext::mixture::Batch::from_examples(&rows, &["t".to_string()]);
    let (_, grads) = backward(&params, &cfg, &batch, false, 0).unwrap();

    let mut flat: Vec<(String, Vec<f64>)> = Vec::new();
    grads.for_each(|name, t| {
        let values = match t {
            TensorRef::Vector(v) => v.to_vec(),
            TensorRef::Matrix(m) => m.iter().cloned().collect(),
        };
        flat.push((name, values));
    });

    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut checked = 0usize;
    for (tensor_idx, (name, grad_values)) in flat.iter().enumerate() {
        for i in 0..grad_values.len() {
            let eval = |delta: f64| -> f64 {
                let mut q = params.clone();
                let mut which = 0usize;
                q.for_each_mut(|_, t| {
                    if which == tensor_idx {
                        match t {
                            TensorMut::Vector(v) => v[i] += delta,
                            TensorMut::Matrix(m) => {
                                let cols = m.ncols();
                                m[[i / cols, i % cols]] += delta;
                            }
                        }
                    }
                    which += 1;
                });
                let (l, _) = backward(&q, &cfg, &batch, false, 0).unwrap();
                l
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = grad_values[i];
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
            checked += 1;
            if rel > worst {
                worst = rel;
                worst_at = format!("{name}[{i}]");
            }
        }
    }
    assert!(
        worst < 1e-5,
        "worst relative error {worst:.3e} at {worst_at}"
    );
    pass(
        2,
        &format!(
            "finite differences agree on all {checked} parameters (worst {worst:.2e} at {worst_at})"
        ),
    );
}

// --- Criterion 3: span-corruption statistics ------------------------------

#[test]
fn criterion_3_span_corruption_statistics() {
    let learned = (0..120)
        .map(|i| Piece {
            surface: format!("x{i}"),
            log_prob: -1.0,
        })
        .collect();
    let vocab = Vocabulary::from_learned_pieces(learned, 60).unwrap();
    let cfg_base = CorruptionConfig {
        rate: 0.15,
        mean_span: 3.0,
        seed: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut fraction_sum = 0.0f64;
    let mut noise_total = 0usize;
    let mut span_total = 0usize;
    let trials = 10_000u64;
    let first_sentinel = vocab.first_sentinel_id();
    for trial in 0..trials {
        let ids: Vec<u32> = (0..512).map(|_| rng.random_range(4..first_sentinel)).collect();
        let cfg = CorruptionConfig {
            seed: trial,
            ..cfg_base
        };
        let (input, target) = span_corrupt(&ids, &cfg, &vocab).unwrap();
        assert_eq!(
            reconstruct(&input, &target, &vocab).unwrap(),
            ids,
            "round trip failed at trial {trial}"
        );
        // Measure from the outputs, not from the planner.
        let n_spans = input.iter().filter(|&&id| id >= first_sentinel).count();
        let n_noise = target.len() - 2 - n_spans;
        fraction_sum += n_noise as f64 / 512.0;
        noise_total += n_noise;
        span_total += n_spans;
    }
    let mean_fraction = fraction_sum / trials as f64;
    let mean_span = noise_total as f64 / span_total as f64;
    assert!(
        (0.14..=0.16).contains(&mean_fraction),
        "mean corrupted fraction {mean_fraction}"
    );
    assert!(
        (2.5..=3.5).contains(&mean_span),
        "mean span length {mean_span}"
    );
    pass(
        3,
        &format!(
            "10000 sequences: corrupted fraction {mean_fraction:.4}, span length {mean_span:.2}, reconstruct inverts all"
        ),
    );
}

// --- Criterion 4: mixture proportionality ---------------------------------

#[test]
fn criterion_4_mixture_proportionality() {
    // Train-set sizes of the thirteen supervised sub-tasks.
    let sizes: [usize; 13] = [
        251_820, 164_923, 167_288, 241_241, 24_927, 58_023, 12_004, 52_943, 25_671, 470_451,
        26_208, 7_475_850, 79_214,
    ];
    let specs: Vec<(TaskSpec, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(i, &size)| {
            (
                TaskSpec {
                    name: format!("task{i}"),
                    kind: TaskKind::Supervised,
                    language: Language::Java,
                    prefix: format!("task{i}: "),
                    metric: TaskMetric::SmoothedBleu4,
                    dataset_path: PathBuf::new(),
                },
                size,
            )
        })
        .collect();
    let registry = build_registry_with_sizes(specs).unwrap();
    let mixture = build_mixture(&registry).unwrap();
    assert!((mixture.rates.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let examples: Vec<Vec<TrainingExample>> = (0..13)
        .map(|t| {
            (0..4)
                .map(|i| TrainingExample {
                    task: format!("task{t}"),
                    input_ids: vec![4 + i],
                    target_ids: vec![4 + i, 1],
                })
                .collect()
        })
        .collect();
    let batch_size = 1000usize;
    let mut sampler =
        MixtureSampler::new(mixture.clone(), examples, batch_size, 424_242).unwrap();
    let draws = 100_000usize;
    let mut counts = vec![0usize; 13];
    for _ in 0..draws / batch_size {
        let batch = sampler.next_batch();
        for &t in &batch.task_indices {
            counts[t] += 1;
        }
    }
    for (t, &count) in counts.iter().enumerate() {
        let p = mixture.rates[t];
        let expected = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        let dev = (count as f64 - expected).abs();
        assert!(
            dev <= 3.0 * sigma,
            "task{t}: {count} vs {expected:.1} (3 sigma = {:.1})",
            3.0 * sigma
        );
    }
    pass(
        4,
        "13 task frequencies within 3-sigma binomial bounds over 100000 draws",
    );
}

// --- Criterion 5: vocabulary contract -------------------------------------

#[test]
fn criterion_5_vocabulary_contract() {
    // >= 100k characters with a ~0.005% sprinkle of rare glyphs.
    let sentences = lexicon_sentences(4000, 0.00005, 7);
    let char_count: usize = sentences.iter().map(|s| s.chars().count()).sum();
    assert!(char_count >= 100_000, "corpus has {char_count} chars");
    let cfg = VocabTrainConfig {
        target_size: 512,
        character_coverage: 0.9999,
        sentinel_count: 100,
        shuffle_seed: 11,
        ..VocabTrainConfig::default()
    };
    let vocab = train_vocab(sentences.clone(), &cfg).unwrap();
    assert_eq!(vocab.size(), 512);
    assert_eq!(vocab.pieces()[0].surface, "<pad>");
    assert_eq!(vocab.pieces()[1].surface, "</s>");
    assert_eq!(vocab.pieces()[2].surface, "<unk>");
    assert_eq!(vocab.pieces()[3].surface, "<s>");

    // Held-out sentences over the same lexicon, no rare glyphs.
    let held_out = lexicon_sentences(1000, 0.0, 99);
    for sentence in &held_out {
        let ids = vocab.encode(sentence);
        assert!(!ids.contains(&UNK_ID), "unk in held-out {sentence:?}");
        assert_eq!(vocab.decode(&ids).unwrap(), *sentence);
    }

    // Representable fraction of training characters.
    let mut total = 0usize;
    let mut covered = 0usize;
    for sentence in &sentences {
        for word in sentence.split_whitespace() {
            for c in word.chars() {
                total += 1;
                if vocab.piece_id(&c.to_string()).is_some() {
                    covered += 1;
                }
            }
        }
    }
    let fraction = covered as f64 / total as f64;
    assert!(
        fraction >= 0.9999,
        "representable fraction {fraction} below coverage"
    );
    pass(
        5,
        &format!(
            "512-piece vocabulary: specials pinned, 1000 held-out round trips, coverage {fraction:.6}"
        ),
    );
}

// --- Criterion 6: metric oracles -------------------------------------------

mod oracle {
    //! Brute-force metric oracles, independent of the library path.

    fn ngrams(tokens: &[&str], n: usize) -> Vec<Vec<String>> {
        if tokens.len() < n {
            return Vec::new();
        }
        (0..=tokens.len() - n)
            .map(|i| tokens[i..i + n].iter().map(|t| t.to_string()).collect())
            .collect()
    }

    fn clipped(hyp: &[&str], refs: &[Vec<&str>], n: usize) -> (usize, usize) {
        let hyp_grams = ngrams(hyp, n);
        let total = hyp_grams.len();
        let mut matched = 0usize;
        let mut remaining: Vec<Vec<String>> = hyp_grams.clone();
        // For each distinct hypothesis n-gram, count occurrences and clip
        // by the best reference count.
        while let Some(gram) = remaining.first().cloned() {
            let count = remaining.iter().filter(|g| **g == gram).count();
            remaining.retain(|g| *g != gram);
            let best_ref = refs
                .iter()
                .map(|r| ngrams(r, n).iter().filter(|g| **g == gram).count())
                .max()
                .unwrap_or(0);
            matched += count.min(best_ref);
        }
        (matched, total)
    }

    fn closest_ref_len(hyp_len: usize, refs: &[Vec<&str>]) -> usize {
        let mut best = usize::MAX;
        let mut best_dist = i64::MAX;
        for r in refs {
            let dist = (r.len() as i64 - hyp_len as i64).abs();
            if dist < best_dist || (dist == best_dist && r.len() < best) {
                best_dist = dist;
                best = r.len();
            }
        }
        best
    }

    pub fn sentence_smoothed_bleu(hyp: &[&str], refs: &[Vec<&str>]) -> f64 {
        if hyp.is_empty() {
            return 0.0;
        }
        let mut product = 1.0f64;
        for n in 1..=4 {
            let (m, t) = clipped(hyp, refs, n);
            let p = if n == 1 {
                if m == 0 {
                    return 0.0;
                }
                m as f64 / t as f64
            } else {
                (m as f64 + 1.0) / (t as f64 + 1.0)
            };
            product *= p;
        }
        let r = closest_ref_len(hyp.len(), refs);
        let bp = if hyp.len() >= r {
            1.0
        } else {
            (1.0 - r as f64 / hyp.len() as f64).exp()
        };
        100.0 * bp * product.powf(0.25)
    }

    pub fn corpus_bleu(pairs: &[(Vec<&str>, Vec<Vec<&str>>)]) -> f64 {
        let mut matched = [0usize; 4];
        let mut total = [0usize; 4];
        let mut hyp_len = 0usize;
        let mut ref_len = 0usize;
        for (hyp, refs) in pairs {
            for n in 1..=4 {
                let (m, t) = clipped(hyp, refs, n);
                matched[n - 1] += m;
                total[n - 1] += t;
            }
            hyp_len += hyp.len();
            ref_len += closest_ref_len(hyp.len(), refs);
        }
        let mut log_sum = 0.0f64;
        let mut orders = 0usize;
        for n in 0..4 {
            if total[n] == 0 {
                continue;
            }
            if matched[n] == 0 {
                return 0.0;
            }
            log_sum += (matched[n] as f64 / total[n] as f64).ln();
            orders += 1;
        }
        if orders == 0 || hyp_len == 0 {
            return 0.0;
        }
        let bp = if hyp_len >= ref_len {
            1.0
        } else {
            (1.0 - ref_len as f64 / hyp_len as f64).exp()
        };
        100.0 * bp * (log_sum / orders as f64).exp()
    }

    /// Recursive LCS with memoization, written against the definition.
    fn lcs(a: &[&str], b: &[&str]) -> usize {
        fn go<'x>(
            a: &[&'x str],
            b: &[&'x str],
            i: usize,
            j: usize,
            memo: &mut std::collections::HashMap<(usize, usize), usize>,
        ) -> usize {
            if i == a.len() || j == b.len() {
                return 0;
            }
            if let Some(&v) = memo.get(&(i, j)) {
                return v;
            }
            let v = if a[i] == b[j] {
                1 + go(a, b, i + 1, j + 1, memo)
            } else {
                go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
            };
            memo.insert((i, j), v);
            v
        }
        go(a, b, 0, 0, &mut std::collections::HashMap::new())
    }

    pub fn sentence_rouge_l(hyp: &[&str], refs: &[Vec<&str>]) -> f64 {
        if hyp.is_empty() {
            return 0.0;
        }
        let mut best = 0.0f64;
        for r in refs {
            let l = lcs(hyp, r) as f64;
            if l == 0.0 {
                continue;
            }
            let p = l / hyp.len() as f64;
            let rec = l / r.len() as f64;
            best = best.max(2.0 * p * rec / (p + rec));
        }
        100.0 * best
    }
}

fn fixture_pairs() -> Vec<(String, Vec<String>)> {
    // A fixed 20-pair set: identical pairs, near misses, multi-reference
    // pairs, repeats, short and empty hypotheses.
    vec![
        ("the cat sat on the mat", vec!["the cat sat on the mat"]),
        ("the cat sat on mat", vec!["the cat sat on the mat"]),
        ("a b c d e f g", vec!["a b c d x f g", "a b c d e f g h"]),
        ("select time from table", vec!["select time ( col0 ) from tab0"]),
        ("print the answer", vec!["print answer now", "print the answer"]),
        ("x y", vec!["x y z w"]),
        ("one two three four five six", vec!["one two three four"]),
        ("repeat repeat repeat", vec!["repeat repeat"]),
        ("wholly disjoint tokens", vec!["nothing shared here"]),
        ("", vec!["empty hypothesis case"]),
        ("a", vec!["a"]),
        ("a b", vec!["a b c"]),
        ("function returns the value", vec!["function returns a value"]),
        (
            "how to get the time in mysql",
            vec!["how to convert datetime to time in mysql", "select time from mysql table"],
        ),
        ("add joscar jar", vec!["added joscar jar"]),
        ("q w e r t y u i o p", vec!["q w e r t y u i o p"]),
        ("loop over items and sum", vec!["loop over all items and sum them"]),
        ("z z z z z", vec!["z y z y z"]),
        ("parse the input string", vec!["parse input strings quickly", "parse the input string"]),
        ("compute the difference of a and b", vec!["compute the difference of elements in a and b"]),
    ]
    .into_iter()
    .map(|(h, rs)| {
        (
            h.to_string(),
            rs.into_iter().map(str::to_string).collect(),
        )
    })
    .collect()
}

#[test]
fn criterion_6_metric_oracles() {
    let fixture = fixture_pairs();
    let pairs: Vec<EvalPair> = fixture
        .iter()
        .map(|(h, rs)| {
            let refs: Vec<&str> = rs.iter().map(String::as_str).collect();
            EvalPair::from_text(h, &refs)
        })
        .collect();

    // Sentence-level smoothed BLEU and ROUGE-L against the oracle.
    let smoothed = smoothed_bleu4(&pairs);
    let rouge = rouge_l(&pairs);
    for (i, (h, rs)) in fixture.iter().enumerate() {
        let hyp: Vec<&str> = h.split_whitespace().collect();
        let refs: Vec<Vec<&str>> = rs
            .iter()
            .map(|r| r.split_whitespace().collect())
            .collect();
        let want_bleu = oracle::sentence_smoothed_bleu(&hyp, &refs);
        assert!(
            (smoothed.per_sentence[i] - want_bleu).abs() < 1e-9,
            "pair {i}: smoothed {} vs oracle {want_bleu}",
            smoothed.per_sentence[i]
        );
        let want_rouge = oracle::sentence_rouge_l(&hyp, &refs);
        assert!(
            (rouge.per_sentence[i] - want_rouge).abs() < 1e-9,
            "pair {i}: rouge {} vs oracle {want_rouge}",
            rouge.per_sentence[i]
        );
    }
    let oracle_mean: f64 = fixture
        .iter()
        .map(|(h, rs)| {
            let hyp: Vec<&str> = h.split_whitespace().collect();
            let refs: Vec<Vec<&str>> =
                rs.iter().map(|r| r.split_whitespace().collect()).collect();
            oracle::sentence_smoothed_bleu(&hyp, &refs)
        })
        .sum::<f64>()
        / fixture.len() as f64;
    assert!((smoothed.score - oracle_mean).abs() < 1e-9);

    // Corpus BLEU against the oracle.
    let oracle_pairs: Vec<(Vec<&str>, Vec<Vec<&str>>)> = fixture
        .iter()
        .map(|(h, rs)| {
            (
                h.split_whitespace().collect(),
                rs.iter().map(|r| r.split_whitespace().collect()).collect(),
            )
        })
        .collect();
    let want_corpus = oracle::corpus_bleu(&oracle_pairs);
    let got_corpus = corpus_bleu4(&pairs).score;
    assert!(
        (got_corpus - want_corpus).abs() < 1e-9,
        "corpus {got_corpus} vs oracle {want_corpus}"
    );

    // Identical pairs score 100 on every metric.
    let identical: Vec<EvalPair> = (0..5)
        .map(|i| {
            let text = format!("exact match number {i} with several tokens");
            EvalPair::from_text(&text, &[text.as_str()])
        })
        .collect();
    assert!((smoothed_bleu4(&identical).score - 100.0).abs() < 1e-9);
    assert!((corpus_bleu4(&identical).score - 100.0).abs() < 1e-9);
    assert!((rouge_l(&identical).score - 100.0).abs() < 1e-9);

    // Program-synthesis style fixture: identical outputs score 1.0.
    let synthesis: Vec<EvalPair> = (0..11)
        .map(|_| EvalPair::from_text("[map a [partial1 b -]]", &["[map a [partial1 b -]]"]))
        .collect();
    let em = exact_match(&synthesis).unwrap();
    assert_eq!(em.score, 1.0);
    pass(
        6,
        "smoothed/corpus BLEU and ROUGE-L match brute-force oracles to 1e-9; exact match 1.0 on the synthesis fixture",
    );
}

// --- Criterion 7: learnability ---------------------------------------------

#[test]
fn criterion_7_copy_task_learnability() {
    let vocab_size = 64usize;
    let cfg = ModelConfig {
        num_blocks: 2,
        d_model: 64,
        d_ff: 256,
        d_kv: 16,
        num_heads: 4,
        vocab_size,
        dropout: 0.0,
        max_len: 32,
        rel_pos_buckets: 16,
        rel_pos_max_distance: 32,
    };
    let spec = TaskSpec {
        name: "copy".to_string(),
        kind: TaskKind::Supervised,
        language: Language::Dsl,
        prefix: "copy: ".to_string(),
        metric: TaskMetric::ExactMatch,
        dataset_path: PathBuf::new(),
    };
    let train = copy_task_examples("copy", 100_000, 8, 4, vocab_size as u32, 21);
    let held_out = copy_task_examples("copy", 64, 8, 4, vocab_size as u32, 22);
    let registry = build_registry_with_sizes([(spec, train.len())]).unwrap();
    let mixture = build_mixture(&registry).unwrap();
    let mut sampler = MixtureSampler::new(mixture, vec![train], 32, 23).unwrap();

    let mut params: Parameters<f32> = init_params(&cfg, 23).unwrap();
    let mut adam = Adam::new(&cfg, AdamConfig::default());
    let lr = LrSchedule::Constant { value: 3e-3 };
    let mut reached_at = None;
    for step in 1..=2000u64 {
        let batch = sampler.next_batch();
        let (loss, grads) = backward(&params, &cfg, &batch, true, step).unwrap();
        assert!(loss.is_finite(), "loss diverged at step {step}");
        adam.step(&mut params, &grads, lr.at(step));
        if step % 50 == 0 {
            let acc = batch_token_accuracy(&params, &cfg, &held_out).unwrap();
            if acc >= 0.99 {
                reached_at = Some((step, acc));
                break;
            }
        }
    }
    let (step, acc) = reached_at.expect("never reached 99% token accuracy within 2000 steps");
    pass(
        7,
        &format!("copy task reached {:.2}% token accuracy at step {step}", acc * 100.0),
    );
}

// --- Criterion 8: strategy drivers -----------------------------------------

/// Variable letters mentioned in a question, deduplicated in order.
fn vars_of(question: &str) -> String {
    let mut seen = Vec::new();
    for token in question.split_whitespace() {
        if token.len() == 1 && "abcd".contains(token) && !seen.contains(&token) {
            seen.push(token);
        }
    }
    seen.join(" ")
}

struct DeskPipeline {
    vocab: Vocabulary,
    model_cfg: ModelConfig,
    supervised: Vec<TaskData>,
    self_supervised: Vec<TaskData>,
}

fn build_desk_pipeline() -> DeskPipeline {
    let synth_samples = program_synthesis_samples("synthesis", 400, 31);
    let unlabeled = program_synthesis_unlabeled("pretext", 800, 32);

    // Second supervised task over the same questions: emit the variable
    // letters, a different difficulty profile.
    let vars_samples: Vec<Sample> = synth_samples
        .iter()
        .map(|s| Sample {
            id: format!("vars-{}", s.id),
            task: "vars".to_string(),
            language: Language::English,
            source: s.source.clone(),
            target: vars_of(&s.source),
            split: s.split,
        })
        .collect();

    let mut sentences: Vec<String> = Vec::new();
    for s in synth_samples.iter().chain(vars_samples.iter()) {
        sentences.push(s.source.clone());
        sentences.push(s.target.clone());
    }
    let vocab_cfg = VocabTrainConfig {
        target_size: 256,
        sentinel_count: 24,
        shuffle_seed: 33,
        ..VocabTrainConfig::default()
    };
    let vocab = train_vocab(sentences, &vocab_cfg).unwrap();

    let model_cfg = ModelConfig {
        num_blocks: 1,
        d_model: 48,
        d_ff: 128,
        d_kv: 12,
        num_heads: 4,
        vocab_size: vocab.size() as usize,
        dropout: 0.0,
        max_len: 80,
        rel_pos_buckets: 8,
        rel_pos_max_distance: 16,
    };

    let spec = |name: &str, metric: TaskMetric, kind: TaskKind| TaskSpec {
        name: name.to_string(),
        kind,
        language: Language::Dsl,
        prefix: match kind {
            TaskKind::Supervised => format!("{name}: "),
            TaskKind::SelfSupervised => String::new(),
        },
        metric,
        dataset_path: PathBuf::new(),
    };
    let encode_split =
        |samples: &[Sample], spec: &TaskSpec, split: codetext::corpus::Split| -> Vec<TrainingExample> {
            samples
                .iter()
                .filter(|s| s.split == split)
                .map(|s| make_supervised(s, spec, &vocab, model_cfg.max_len).unwrap())
                .collect()
        };

    let synthesis_spec = spec("synthesis", TaskMetric::ExactMatch, TaskKind::Supervised);
    let vars_spec = spec("vars", TaskMetric::ExactMatch, TaskKind::Supervised);
    let supervised = vec![
        TaskData {
            train: encode_split(&synth_samples, &synthesis_spec, codetext::corpus::Split::Train),
            valid: encode_split(&synth_samples, &synthesis_spec, codetext::corpus::Split::Valid),
            spec: synthesis_spec,
        },
        TaskData {
            train: encode_split(&vars_samples, &vars_spec, codetext::corpus::Split::Train),
            valid: encode_split(&vars_samples, &vars_spec, codetext::corpus::Split::Valid),
            spec: vars_spec,
        },
    ];

    let pretext_spec = spec("pretext", TaskMetric::SmoothedBleu4, TaskKind::SelfSupervised);
    let corrupt = CorruptionConfig {
        rate: 0.15,
        mean_span: 3.0,
        seed: 34,
    };
    let pretext_train: Vec<TrainingExample> = unlabeled
        .iter()
        .map(|s| {
            codetext::objective::make_self_supervised(s, &vocab, &corrupt, model_cfg.max_len)
                .unwrap()
        })
        .collect();
    let self_supervised = vec![TaskData {
        spec: pretext_spec,
        train: pretext_train,
        valid: Vec::new(),
    }];

    DeskPipeline {
        vocab,
        model_cfg,
        supervised,
        self_supervised,
    }
}

/// First eval step at which the synthesis task reaches the threshold.
fn steps_to_threshold(log: &RunLog, task: &str, threshold: f64) -> Option<u64> {
    log.evals
        .iter()
        .find(|e| e.scores.get(task).copied().unwrap_or(0.0) >= threshold)
        .map(|e| e.step)
}

#[test]
fn criterion_8_strategy_drivers() {
    let desk = build_desk_pipeline();
    let out = tempfile::tempdir().unwrap();
    let threshold = 0.80f64;

    let task_cfg = TrainConfig {
        batch_size: 16,
        micro_batch: 16,
        total_steps: 900,
        checkpoint_every: 225,
        eval_every: 25,
        early_stop_patience: 0,
        lr: LrSchedule::Constant { value: 1e-3 },
        adam: AdamConfig::default(),
        label_smoothing: 0.0,
        seed: 40,
        max_decode_len: 24,
    };
    let pretrain_cfg = TrainConfig {
        total_steps: 600,
        checkpoint_every: 200,
        eval_every: 200,
        lr: LrSchedule::InverseSqrt {
            peak: 3e-3,
            warmup_steps: 60,
        },
        ..task_cfg.clone()
    };

    // ST: independent runs per task.
    let st = strategy_driver(
        Strategy::St,
        &desk.supervised,
        &desk.self_supervised,
        &task_cfg,
        &pretrain_cfg,
        &desk.model_cfg,
        &desk.vocab,
        out.path(),
    )
    .unwrap();
    assert_eq!(st.per_task.len(), 2);
    let st_steps = steps_to_threshold(&st.per_task["synthesis"], "synthesis", threshold);

    // TF: pretrain then fine-tune each task.
    let tf = strategy_driver(
        Strategy::Tf,
        &desk.supervised,
        &desk.self_supervised,
        &task_cfg,
        &pretrain_cfg,
        &desk.model_cfg,
        &desk.vocab,
        out.path(),
    )
    .unwrap();
    let pre_log = tf.pretrain.as_ref().expect("pretrain log");
    assert!(
        pre_log.losses.last().unwrap().loss < pre_log.losses.first().unwrap().loss,
        "pretraining loss did not improve"
    );
    // Checkpoints land on the schedule.
    for (step, _) in &pre_log.checkpoints {
        assert!(step % pretrain_cfg.checkpoint_every == 0 || *step == pretrain_cfg.total_steps);
    }
    let tf_steps = steps_to_threshold(&tf.per_task["synthesis"], "synthesis", threshold);

    // MT: joint training with per-task argmax checkpoint selection.
    let mt = strategy_driver(
        Strategy::Mt,
        &desk.supervised,
        &desk.self_supervised,
        &task_cfg,
        &pretrain_cfg,
        &desk.model_cfg,
        &desk.vocab,
        out.path(),
    )
    .unwrap();
    let mt_log = mt.multi_task.as_ref().expect("multi-task log");
    assert!(!mt_log.best.is_empty(), "per-task selection missing");
    for task in ["synthesis", "vars"] {
        let best = &mt_log.best[task];
        // The selected checkpoint dominates every recorded checkpoint.
        let mut scores = Vec::new();
        for (step, path) in &mt_log.checkpoints {
            let (_, params) = load_checkpoint(path).unwrap();
            let data = desk
                .supervised
                .iter()
                .find(|t| t.spec.name == task)
                .unwrap();
            let pairs: Vec<EvalPair> = data
                .valid
                .iter()
                .map(|ex| {
                    let hyp_ids = codetext::model::greedy_decode(
                        &params,
                        &desk.model_cfg,
                        &ex.input_ids,
                        task_cfg.max_decode_len,
                    )
                    .unwrap();
                    let hyp = desk.vocab.decode(&hyp_ids).unwrap();
                    let refs: Vec<u32> = ex
                        .target_ids
                        .iter()
                        .copied()
                        .filter(|&id| id != codetext::subword::EOS_ID)
                        .collect();
                    let reference = desk.vocab.decode(&refs).unwrap();
                    EvalPair::from_text(&hyp, &[reference.as_str()])
                })
                .collect();
            scores.push((*step, exact_match(&pairs).unwrap().score));
        }
        for (step, score) in &scores {
            assert!(
                *score <= best.score + 1e-12,
                "{task}: checkpoint at {step} scores {score} above selected {}",
                best.score
            );
        }
    }

    // MT-FT: fine-tune from the final multi-task checkpoint.
    let mtft = strategy_driver(
        Strategy::MtFt,
        &desk.supervised,
        &desk.self_supervised,
        &task_cfg,
        &pretrain_cfg,
        &desk.model_cfg,
        &desk.vocab,
        out.path(),
    )
    .unwrap();
    let mtft_steps = steps_to_threshold(&mtft.per_task["synthesis"], "synthesis", threshold);

    // Ordering observation (non-gating): fine-tuned starts should reach
    // the threshold no slower than from scratch, within a 10% margin.
    let margin = |st: u64| (st as f64 * 1.1).ceil() as u64;
    match (st_steps, tf_steps, mtft_steps) {
        (Some(st), Some(tf), Some(mtft)) => {
            let mut ordering_ok = true;
            if tf > margin(st) {
                eprintln!(
                    "WARNING (non-gating): transfer fine-tune took {tf} steps vs {st} from scratch"
                );
                ordering_ok = false;
            }
            if mtft > margin(st) {
                eprintln!(
                    "WARNING (non-gating): mt fine-tune took {mtft} steps vs {st} from scratch"
                );
                ordering_ok = false;
            }
            if ordering_ok {
                pass(
                    8,
                    &format!(
                        "all four strategies ran; thresholds: st {st}, tf {tf}, mt-ft {mtft} steps; per-task argmax selection verified"
                    ),
                );
            } else {
                pass(8, "all four strategies ran; per-task argmax selection verified (ordering warned above)");
            }
        }
        _ => {
            eprintln!(
                "WARNING (non-gating): threshold 0.80 not reached in budget (st {st_steps:?}, tf {tf_steps:?}, mt-ft {mtft_steps:?})"
            );
            pass(8, "all four strategies ran; per-task argmax selection verified (threshold warned above)");
        }
    }
}

// --- Criterion 9: manifest replay determinism -------------------------------

#[test]
fn criterion_9_manifest_replay_determinism() {
    use codetext::cli;
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    // Stage 0: raw synthetic corpus on disk.
    let samples = program_synthesis_samples("synthesis", 120, 55);
    let corpus_path = path("corpus.jsonl");
    codetext::corpus::write_corpus(corpus_path.as_ref(), &samples).unwrap();
    let unlabeled = program_synthesis_unlabeled("pretext", 80, 56);
    let unlabeled_path = path("unlabeled.jsonl");
    codetext::corpus::write_corpus(unlabeled_path.as_ref(), &unlabeled).unwrap();

    let run = |args: &[&str]| {
        let argv: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        cli::run(&argv).unwrap();
    };

    // normalize (passthrough on both sides: DSL questions/answers).
    run(&[
        "normalize", "--lang", "dsl", "--target-lang", "dsl",
        "--in", &corpus_path, "--out", &path("normalized.jsonl"),
        "--threads", "1",
    ]);
    // vocab train
    run(&[
        "vocab", "train", "--in", &path("normalized.jsonl"),
        "--out", &path("vocab.txt"), "--size", "256", "--sentinels", "24",
        "--seed", "5", "--threads", "1",
    ]);
    // examples build (supervised train + valid, corrupted pretext)
    run(&[
        "examples", "build", "--task", "synthesis", "--in", &path("normalized.jsonl"),
        "--vocab", &path("vocab.txt"), "--out", &path("train.ctex"),
        "--prefix", "synthesis: ", "--max-len", "64", "--threads", "1",
    ]);
    run(&[
        "examples", "build", "--task", "synthesis", "--in", &path("normalized.jsonl"),
        "--vocab", &path("vocab.txt"), "--out", &path("valid.ctex"),
        "--split", "valid", "--prefix", "synthesis: ", "--max-len", "64",
        "--threads", "1",
    ]);
    run(&[
        "examples", "build", "--task", "pretext", "--in", &unlabeled_path,
        "--vocab", &path("vocab.txt"), "--out", &path("pretext.ctex"),
        "--corrupt", "--rate", "0.15", "--mean-span", "3", "--seed", "6",
        "--max-len", "64", "--threads", "1",
    ]);
    // mixture config + train (tiny, a handful of steps)
    std::fs::write(
        dir.path().join("mix.cfg"),
        format!(
            "synthesis = {}\nsynthesis.valid = {}\nsynthesis.metric = exact_match\n",
            path("train.ctex"),
            path("valid.ctex"),
        ),
    )
    .unwrap();
    std::fs::create_dir_all(dir.path().join("run")).unwrap();
    run(&[
        "train", "--strategy", "st", "--mixture", &path("mix.cfg"),
        "--model", "tiny", "--vocab", &path("vocab.txt"),
        "--out", &path("run"), "--batch", "8", "--steps", "6",
        "--checkpoint-every", "3", "--eval-every", "6", "--seed", "7",
        "--max-decode", "12", "--threads", "1",
    ]);
    // generate + eval + stats
    run(&[
        "generate", "--checkpoint", &path("run/st.synthesis.final.ctckpt"),
        "--vocab", &path("vocab.txt"), "--in", &path("normalized.jsonl"),
        "--out", &path("hyps.txt"), "--split", "test",
        "--prefix", "synthesis: ", "--max-out", "12", "--threads", "1",
    ]);
    let refs: Vec<String> = samples
        .iter()
        .filter(|s| s.split == codetext::corpus::Split::Test)
        .map(|s| s.target.clone())
        .collect();
    std::fs::write(dir.path().join("refs.txt"), refs.join("\n") + "\n").unwrap();
    run(&[
        "eval", "--metric", "exact", "--hyp", &path("hyps.txt"),
        "--ref", &path("refs.txt"), "--out", &path("eval.json"),
        "--threads", "1",
    ]);
    run(&[
        "stats", "--in", &path("normalized.jsonl"), "--out", &path("stats.json"),
        "--threads", "1",
    ]);

    // Replay every stage from its manifest; outputs must be
    // byte-identical (replay verifies recorded digests after re-running).
    let manifests = [
        path("normalized.jsonl.manifest.json"),
        path("vocab.txt.manifest.json"),
        path("train.ctex.manifest.json"),
        path("valid.ctex.manifest.json"),
        path("pretext.ctex.manifest.json"),
        path("run/run.manifest.json"),
        path("hyps.txt.manifest.json"),
        path("eval.json.manifest.json"),
        path("stats.json.manifest.json"),
    ];
    for manifest in &manifests {
        cli::replay(manifest.as_ref()).unwrap_or_else(|e| {
            panic!("replay of {manifest} failed: {e}");
        });
    }
    pass(
        9,
        &format!("{} pipeline stages replayed byte-identically", manifests.len()),
    );
}
