//! Examples-proportional task mixtures and batch assembly.
//!
//! Each batch row draws its task independently with probability
//! proportional to dataset size; within a task, examples follow a
//! per-task shuffled order that reshuffles on exhaustion, so no example
//! repeats before all are seen once per epoch. The batch sequence is a
//! pure function of (seed, step).

use std::collections::HashMap;
use std::path::PathBuf;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{TaskRegistry, TaskSpec};
use crate::objective::{read_shard, ObjectiveError, TrainingExample};

#[derive(Debug, Error)]
pub enum MixtureError {
    #[error("mixture requires a non-empty registry")]
    EmptyRegistry,
    #[error("task {0:?} has zero dataset size")]
    ZeroSizeTask(String),
    #[error("task {0:?} has no example shard attached")]
    MissingShard(String),
    #[error("task {0:?} has no examples")]
    NoExamples(String),
    #[error("examples for {given} tasks supplied, mixture has {expected}")]
    TaskCountMismatch { given: usize, expected: usize },
    #[error(transparent)]
    Shard(#[from] ObjectiveError),
}

#[derive(Debug, Clone)]
pub struct MixtureTask {
    pub spec: TaskSpec,
    pub size: usize,
    /// Example shard location, when materialized on disk.
    pub shard: Option<PathBuf>,
}

/// Tasks with size-proportional sampling rates.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub tasks: Vec<MixtureTask>,
    pub rates: Vec<f64>,
}

/// Compute exact size-proportional rates over a registry.
pub fn build_mixture(registry: &TaskRegistry) -> Result<Mixture, MixtureError> {
    if registry.is_empty() {
        return Err(MixtureError::EmptyRegistry);
    }
    let mut tasks = Vec::with_capacity(registry.len());
    for entry in registry.entries() {
        if entry.size == 0 {
            return Err(MixtureError::ZeroSizeTask(entry.spec.name.clone()));
        }
        tasks.push(MixtureTask {
            spec: entry.spec.clone(),
            size: entry.size,
            shard: None,
        });
    }
    let total: usize = tasks.iter().map(|t| t.size).sum();
    let rates = tasks
        .iter()
        .map(|t| t.size as f64 / total as f64)
        .collect();
    Ok(Mixture { tasks, rates })
}

impl Mixture {
    /// Attach example shard paths by task name.
    pub fn with_shards(mut self, shards: &HashMap<String, PathBuf>) -> Mixture {
        for task in &mut self.tasks {
            if let Some(path) = shards.get(&task.spec.name) {
                task.shard = Some(path.clone());
            }
        }
        self
    }

    /// Read every task's example shard.
    pub fn load_examples(&self) -> Result<Vec<Vec<TrainingExample>>, MixtureError> {
        self.tasks
            .iter()
            .map(|task| {
                let path = task
                    .shard
                    .as_ref()
                    .ok_or_else(|| MixtureError::MissingShard(task.spec.name.clone()))?;
                let examples = read_shard(path)?;
                if examples.is_empty() {
                    return Err(MixtureError::NoExamples(task.spec.name.clone()));
                }
                Ok(examples)
            })
            .collect()
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.spec.name == name)
    }
}

/// Padded batch of encoded examples. Padding (id 0) appears only at row
/// tails; true lengths are recorded per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input: Array2<u32>,
    pub target: Array2<u32>,
    pub task_indices: Vec<usize>,
    pub tasks: Vec<String>,
    pub input_len: Vec<usize>,
    pub target_len: Vec<usize>,
}

impl Batch {
    /// Pad a set of examples into matrices.
    pub fn from_examples(rows: &[(usize, &TrainingExample)], task_names: &[String]) -> Batch {
        let max_in = rows.iter().map(|(_, e)| e.input_ids.len()).max().unwrap_or(0);
        let max_tgt = rows.iter().map(|(_, e)| e.target_ids.len()).max().unwrap_or(0);
        let mut input = Array2::zeros((rows.len(), max_in));
        let mut target = Array2::zeros((rows.len(), max_tgt));
        let mut task_indices = Vec::with_capacity(rows.len());
        let mut input_len = Vec::with_capacity(rows.len());
        let mut target_len = Vec::with_capacity(rows.len());
        for (r, (task, example)) in rows.iter().enumerate() {
            for (c, &id) in example.input_ids.iter().enumerate() {
                input[[r, c]] = id;
            }
            for (c, &id) in example.target_ids.iter().enumerate() {
                target[[r, c]] = id;
            }
            task_indices.push(*task);
            input_len.push(example.input_ids.len());
            target_len.push(example.target_ids.len());
        }
        let tasks = task_indices
            .iter()
            .map(|&t| task_names[t].clone())
            .collect();
        Batch {
            input,
            target,
            task_indices,
            tasks,
            input_len,
            target_len,
        }
    }

    pub fn len(&self) -> usize {
        self.task_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.task_indices.is_empty()
    }

    /// Copy of rows `start..end` (for gradient-accumulation chunks).
    pub fn narrow(&self, start: usize, end: usize) -> Batch {
        Batch {
            input: self.input.slice(ndarray::s![start..end, ..]).to_owned(),
            target: self.target.slice(ndarray::s![start..end, ..]).to_owned(),
            task_indices: self.task_indices[start..end].to_vec(),
            tasks: self.tasks[start..end].to_vec(),
            input_len: self.input_len[start..end].to_vec(),
            target_len: self.target_len[start..end].to_vec(),
        }
    }
}

use crate::seeds::stream_seed;

struct TaskCursor {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
}

/// Stateful batch sampler over a mixture. The sequence of batches is
/// deterministic for a given seed; [`sample_batch`] exposes the same
/// sequence as a pure function of (seed, step).
pub struct MixtureSampler {
    mixture: Mixture,
    examples: Vec<Vec<TrainingExample>>,
    task_names: Vec<String>,
    batch_size: usize,
    seed: u64,
    next_step: u64,
    cursors: Vec<TaskCursor>,
    cumulative: Vec<f64>,
}

impl MixtureSampler {
    pub fn new(
        mixture: Mixture,
        examples: Vec<Vec<TrainingExample>>,
        batch_size: usize,
        seed: u64,
    ) -> Result<MixtureSampler, MixtureError> {
        if examples.len() != mixture.tasks.len() {
            return Err(MixtureError::TaskCountMismatch {
                given: examples.len(),
                expected: mixture.tasks.len(),
            });
        }
        for (task, ex) in mixture.tasks.iter().zip(&examples) {
            if ex.is_empty() {
                return Err(MixtureError::NoExamples(task.spec.name.clone()));
            }
        }
        let mut cumulative = Vec::with_capacity(mixture.rates.len());
        let mut acc = 0.0;
        for &r in &mixture.rates {
            acc += r;
            cumulative.push(acc);
        }
        let cursors = examples
            .iter()
            .enumerate()
            .map(|(t, ex)| {
                let mut cursor = TaskCursor {
                    order: (0..ex.len()).collect(),
                    pos: 0,
                    epoch: 0,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, t as u64, 0));
                cursor.order.shuffle(&mut rng);
                cursor
            })
            .collect();
        let task_names = mixture.tasks.iter().map(|t| t.spec.name.clone()).collect();
        Ok(MixtureSampler {
            mixture,
            examples,
            task_names,
            batch_size,
            seed,
            next_step: 0,
            cursors,
            cumulative,
        })
    }

    pub fn mixture(&self) -> &Mixture {
        &self.mixture
    }

    fn draw_task(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1)
    }

    fn advance_cursor(&mut self, task: usize) -> usize {
        let n = self.examples[task].len();
        let cursor = &mut self.cursors[task];
        if cursor.pos == n {
            cursor.epoch += 1;
            cursor.pos = 0;
            let epoch = cursor.epoch;
            let mut rng =
                ChaCha8Rng::seed_from_u64(stream_seed(self.seed, task as u64, epoch));
            cursor.order.shuffle(&mut rng);
        }
        let cursor = &mut self.cursors[task];
        let idx = cursor.order[cursor.pos];
        cursor.pos += 1;
        idx
    }

    /// Task indices drawn for one step, in row order.
    fn step_tasks(&self, step: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, u64::MAX, step));
        (0..self.batch_size).map(|_| self.draw_task(&mut rng)).collect()
    }

    /// Produce the batch for the sampler's next step and advance.
    pub fn next_batch(&mut self) -> Batch {
        let step = self.next_step;
        self.next_step += 1;
        let tasks = self.step_tasks(step);
        let picks: Vec<(usize, usize)> = tasks
            .iter()
            .map(|&t| (t, self.advance_cursor(t)))
            .collect();
        let rows: Vec<(usize, &TrainingExample)> = picks
            .iter()
            .map(|&(t, i)| (t, &self.examples[t][i]))
            .collect();
        Batch::from_examples(&rows, &self.task_names)
    }

    /// Position the sampler so the next produced batch is `step`,
    /// replaying only the task draws of earlier steps.
    pub fn seek(&mut self, step: u64) {
        if step < self.next_step {
            self.reset();
        }
        while self.next_step < step {
            let s = self.next_step;
            self.next_step += 1;
            for t in self.step_tasks(s) {
                self.advance_cursor(t);
            }
        }
    }

    fn reset(&mut self) {
        self.next_step = 0;
        for t in 0..self.cursors.len() {
            let mut order: Vec<usize> = (0..self.examples[t].len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, t as u64, 0));
            order.shuffle(&mut rng);
            self.cursors[t] = TaskCursor {
                order,
                pos: 0,
                epoch: 0,
            };
        }
    }
}

/// The batch at `step` as a pure function of (seed, step).
pub fn sample_batch(
    mixture: &Mixture,
    examples: &[Vec<TrainingExample>],
    batch_size: usize,
    seed: u64,
    step: u64,
) -> Result<Batch, MixtureError> {
    let mut sampler = MixtureSampler::new(mixture.clone(), examples.to_vec(), batch_size, seed)?;
    sampler.seek(step);
    Ok(sampler.next_batch())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_registry_with_sizes, Language, TaskKind, TaskMetric};
    use crate::subword::EOS_ID;

    fn spec(name: &str) -> TaskSpec {
        TaskSpec {
            name: name.to_string(),
            kind: TaskKind::Supervised,
            language: Language::Sql,
            prefix: format!("{name}: "),
            metric: TaskMetric::SmoothedBleu4,
            dataset_path: PathBuf::new(),
        }
    }

    fn mixture_of(sizes: &[usize]) -> Mixture {
        let registry = build_registry_with_sizes(
            sizes
                .iter()
                .enumerate()
                .map(|(i, &s)| (spec(&format!("task{i}")), s)),
        )
        .unwrap();
        build_mixture(&registry).unwrap()
    }

    fn examples_for(mixture: &Mixture, per_task: usize) -> Vec<Vec<TrainingExample>> {
        mixture
            .tasks
            .iter()
            .enumerate()
            .map(|(t, task)| {
                (0..per_task)
                    .map(|i| TrainingExample {
                        task: task.spec.name.clone(),
                        input_ids: vec![100 * t as u32 + i as u32 + 4],
                        target_ids: vec![100 * t as u32 + i as u32 + 4, EOS_ID],
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn rates_are_size_proportional() {
        let m = mixture_of(&[100, 300]);
        assert!((m.rates[0] - 0.25).abs() < 1e-12);
        assert!((m.rates[1] - 0.75).abs() < 1e-12);
        assert!((m.rates.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_task_rate_is_one() {
        let m = mixture_of(&[42]);
        assert_eq!(m.rates, vec![1.0]);
    }

    #[test]
    fn zero_size_task_errors() {
        let registry =
            build_registry_with_sizes([(spec("a"), 10), (spec("b"), 0)]).unwrap();
        assert!(matches!(
            build_mixture(&registry),
            Err(MixtureError::ZeroSizeTask(_))
        ));
    }

    #[test]
    fn empty_registry_errors() {
        let registry = build_registry_with_sizes(std::iter::empty()).unwrap();
        assert!(matches!(
            build_mixture(&registry),
            Err(MixtureError::EmptyRegistry)
        ));
    }

    #[test]
    fn single_task_fills_every_row() {
        let m = mixture_of(&[10]);
        let examples = examples_for(&m, 10);
        let batch = sample_batch(&m, &examples, 8, 1, 0).unwrap();
        assert!(batch.task_indices.iter().all(|&t| t == 0));
        assert_eq!(batch.len(), 8);
    }

    #[test]
    fn same_seed_and_step_give_identical_batches() {
        let m = mixture_of(&[100, 300]);
        let examples = examples_for(&m, 20);
        let a = sample_batch(&m, &examples, 16, 7, 5).unwrap();
        let b = sample_batch(&m, &examples, 16, 7, 5).unwrap();
        assert_eq!(a, b);

        // The stateful sampler agrees with the pure function.
        let mut sampler =
            MixtureSampler::new(m.clone(), examples.clone(), 16, 7).unwrap();
        for _ in 0..5 {
            sampler.next_batch();
        }
        assert_eq!(sampler.next_batch(), a);
    }

    #[test]
    fn task_frequencies_within_binomial_bounds() {
        let m = mixture_of(&[100, 300]);
        let examples = examples_for(&m, 20);
        let mut sampler = MixtureSampler::new(m, examples, 1000, 99).unwrap();
        let mut count0 = 0usize;
        let draws = 100_000;
        for _ in 0..draws / 1000 {
            let batch = sampler.next_batch();
            count0 += batch.task_indices.iter().filter(|&&t| t == 0).count();
        }
        let expected = draws as f64 * 0.25;
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        assert!(
            (count0 as f64 - expected).abs() <= 3.0 * sigma,
            "count {count0} outside {expected} ± {}",
            3.0 * sigma
        );
    }

    #[test]
    fn no_example_repeats_within_an_epoch() {
        let m = mixture_of(&[16]);
        let examples = examples_for(&m, 16);
        let mut sampler = MixtureSampler::new(m, examples, 4, 3).unwrap();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..4 {
            let batch = sampler.next_batch();
            for r in 0..batch.len() {
                assert!(seen.insert(batch.input[[r, 0]]), "repeat before epoch end");
            }
        }
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn padding_only_at_row_tails() {
        let examples = vec![
            TrainingExample {
                task: "t".to_string(),
                input_ids: vec![5, 6, 7],
                target_ids: vec![8, EOS_ID],
            },
            TrainingExample {
                task: "t".to_string(),
                input_ids: vec![9],
                target_ids: vec![10, 11, 12, EOS_ID],
            },
        ];
        let rows: Vec<(usize, &TrainingExample)> =
            examples.iter().map(|e| (0, e)).collect();
        let batch = Batch::from_examples(&rows, &["t".to_string()]);
        assert_eq!(batch.input.row(1).to_vec(), vec![9, 0, 0]);
        assert_eq!(batch.target.row(0).to_vec(), vec![8, EOS_ID, 0, 0]);
        assert_eq!(batch.input_len, vec![3, 1]);
        assert_eq!(batch.target_len, vec![2, 4]);
    }
}
