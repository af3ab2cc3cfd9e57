//! Bundled synthetic datasets: a desk-scale program-synthesis task
//! (templated English questions paired with LISP-like DSL answers), a
//! copy task for learnability checks, and sentence generators for
//! vocabulary training.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Language, Sample, Split};
use crate::objective::TrainingExample;
use crate::subword::EOS_ID;

const OPS: [(&str, &str); 3] = [("difference", "-"), ("sum", "+"), ("product", "*")];
const AGGS: [(&str, &str); 2] = [("sum", "+"), ("product", "*")];
const VARS: [&str; 4] = ["a", "b", "c", "d"];

/// One synthetic question/answer pair.
fn dsl_pair(rng: &mut ChaCha8Rng) -> (String, String) {
    let x = *VARS.choose(rng).expect("non-empty");
    let mut y = *VARS.choose(rng).expect("non-empty");
    while y == x {
        y = *VARS.choose(rng).expect("non-empty");
    }
    match rng.random_range(0..5u32) {
        0 => {
            let (name, sym) = OPS[rng.random_range(0..OPS.len())];
            (
                format!(
                    "you are given an array of numbers {x} and a number {y} , \
                     compute the {name} of elements in {x} and {y}"
                ),
                format!("[map {x} [partial1 {y} {sym}]]"),
            )
        }
        1 => {
            let (name, sym) = OPS[rng.random_range(0..OPS.len())];
            (
                format!("you are given numbers {x} and {y} , compute the {name} of {x} and {y}"),
                format!("[{sym} {x} {y}]"),
            )
        }
        2 => {
            let (name, sym) = AGGS[rng.random_range(0..AGGS.len())];
            (
                format!(
                    "you are given an array of numbers {x} , compute the {name} of elements in {x}"
                ),
                format!("[reduce {x} 0 {sym}]"),
            )
        }
        3 => (
            format!(
                "you are given an array of numbers {x} , keep the elements of {x} \
                 greater than a number {y}"
            ),
            format!("[filter {x} [partial1 {y} <]]"),
        ),
        _ => (
            format!("you are given an array of numbers {x} , compute the largest element of {x}"),
            format!("[reduce {x} [head {x}] max]"),
        ),
    }
}

/// Generate the bundled program-synthesis dataset. Questions come
/// pre-tokenized (single spaces); answers are bracketed DSL text that
/// survives passthrough normalization verbatim.
pub fn program_synthesis_samples(task: &str, count: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let (question, answer) = dsl_pair(&mut rng);
            let split = match i % 10 {
                8 => Split::Valid,
                9 => Split::Test,
                _ => Split::Train,
            };
            Sample {
                id: format!("dsl-{i}"),
                task: task.to_string(),
                language: Language::Dsl,
                source: question,
                target: answer,
                split,
            }
        })
        .collect()
}

/// Unlabeled view of the same generator: question and answer joined as
/// one sentence, empty target.
pub fn program_synthesis_unlabeled(task: &str, count: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let (question, answer) = dsl_pair(&mut rng);
            Sample {
                id: format!("udsl-{i}"),
                task: task.to_string(),
                language: Language::Dsl,
                source: format!("{question} {answer}"),
                target: String::new(),
                split: Split::Train,
            }
        })
        .collect()
}

/// Random-identity examples: the target repeats the input and ends with
/// eos. Ids are drawn from `[low, high)` without repeats inside one
/// sequence, so content-based copying is unambiguous.
pub fn copy_task_examples(
    task: &str,
    count: usize,
    seq_len: usize,
    low: u32,
    high: u32,
    seed: u64,
) -> Vec<TrainingExample> {
    assert!(high - low >= seq_len as u32, "alphabet smaller than sequence");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut ids: Vec<u32> = Vec::with_capacity(seq_len);
            while ids.len() < seq_len {
                let id = rng.random_range(low..high);
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
            let mut target = ids.clone();
            target.push(EOS_ID);
            TrainingExample {
                task: task.to_string(),
                input_ids: ids,
                target_ids: target,
            }
        })
        .collect()
}

const LEXICON: [&str; 36] = [
    "select", "from", "table", "where", "index", "value", "count", "order", "group", "join",
    "function", "return", "import", "class", "static", "public", "string", "integer", "buffer",
    "socket", "thread", "parse", "token", "stream", "vector", "matrix", "kernel", "batch",
    "layer", "model", "train", "decode", "encode", "merge", "split", "cache",
];

/// Synthetic sentences over a fixed lexicon, suitable for vocabulary
/// training. `rare_glyph_rate` injects single rare non-ASCII characters
/// as standalone words at the given per-word probability.
pub fn lexicon_sentences(count: usize, rare_glyph_rate: f64, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rare = ["\u{03bb}", "\u{00f8}", "\u{2202}"];
    (0..count)
        .map(|_| {
            let len = rng.random_range(5..12);
            let mut words = Vec::with_capacity(len);
            for _ in 0..len {
                if rare_glyph_rate > 0.0 && rng.random::<f64>() < rare_glyph_rate {
                    words.push(rare[rng.random_range(0..rare.len())].to_string());
                } else {
                    let word = LEXICON[rng.random_range(0..LEXICON.len())];
                    // Occasional suffixed variants widen the form pool.
                    if rng.random::<f64>() < 0.3 {
                        words.push(format!("{word}{}", rng.random_range(0..10)));
                    } else {
                        words.push(word.to_string());
                    }
                }
            }
            words.join(" ")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dsl_generator_is_deterministic_and_split() {
        let a = program_synthesis_samples("synthesis", 100, 3);
        let b = program_synthesis_samples("synthesis", 100, 3);
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|s| s.split == Split::Valid).count(), 10);
        assert_eq!(a.iter().filter(|s| s.split == Split::Test).count(), 10);
        for s in &a {
            assert!(s.source.starts_with("you are given"));
            assert!(s.target.starts_with('['));
        }
    }

    #[test]
    fn dsl_family_includes_the_map_partial_shape() {
        let samples = program_synthesis_samples("synthesis", 500, 0);
        assert!(samples
            .iter()
            .any(|s| s.target.contains("[map") && s.target.contains("[partial1")));
    }

    #[test]
    fn copy_task_targets_mirror_inputs() {
        let examples = copy_task_examples("copy", 10, 6, 4, 20, 1);
        for e in &examples {
            assert_eq!(e.target_ids.len(), e.input_ids.len() + 1);
            assert_eq!(&e.target_ids[..6], &e.input_ids[..]);
            assert_eq!(*e.target_ids.last().unwrap(), EOS_ID);
        }
    }

    #[test]
    fn lexicon_sentences_rare_glyphs_stay_rare() {
        let sentences = lexicon_sentences(2000, 0.0005, 9);
        let total: usize = sentences.iter().map(|s| s.chars().count()).sum();
        let rare: usize = sentences
            .iter()
            .flat_map(|s| s.chars())
            .filter(|c| !c.is_ascii())
            .count();
        assert!(total > 50_000);
        assert!((rare as f64) / (total as f64) < 1e-4);
    }
}
