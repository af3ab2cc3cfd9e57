//! Training regimes: single-task, pretraining, fine-tuning, and
//! multi-task with per-task checkpoint selection.
//!
//! All regimes share one engine: an Adam optimizer over the parameter
//! container, gradient accumulation in micro-batches, periodic
//! checkpointing, greedy-decode validation with a per-task gating metric
//! (ROUGE-L is logged alongside but never gates), and patience-based
//! early stopping that always retains the best evaluated checkpoint.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{build_registry_with_sizes, CorpusError, TaskKind, TaskMetric, TaskSpec};
use crate::metrics::{corpus_bleu4, exact_match, rouge_l, smoothed_bleu4, EvalPair, MetricError};
use crate::mixture::{build_mixture, Batch, MixtureError, MixtureSampler};
use crate::model::{
    backward, greedy_decode, init_params, load_checkpoint, save_checkpoint, token_accuracy,
    ModelConfig, ModelError, Parameters,
};
use crate::objective::TrainingExample;
use crate::seeds::stream_seed;
use crate::subword::{Vocabulary, VocabError, EOS_ID};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("training diverged at step {step}: {message}")]
    Diverged { step: u64, message: String },
    #[error("task {0:?} is not supervised")]
    NotSupervised(String),
    #[error("task {0:?} is not self-supervised")]
    NotSelfSupervised(String),
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant { value: f64 },
    InverseSqrt { peak: f64, warmup_steps: u64 },
}

impl LrSchedule {
    /// Learning rate at 1-based step.
    pub fn at(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant { value } => value,
            LrSchedule::InverseSqrt { peak, warmup_steps } => {
                let warmup = warmup_steps.max(1) as f64;
                let s = step.max(1) as f64 / warmup;
                peak * s.min(1.0 / s.sqrt())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state over the parameter container.
pub struct Adam {
    cfg: AdamConfig,
    m: Parameters<f32>,
    v: Parameters<f32>,
    t: u64,
}

impl Adam {
    pub fn new(model_cfg: &ModelConfig, cfg: AdamConfig) -> Adam {
        Adam {
            cfg,
            m: Parameters::zeros(model_cfg),
            v: Parameters::zeros(model_cfg),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Parameters<f32>, grads: &Parameters<f32>, lr: f64) {
        self.t += 1;
        let b1 = self.cfg.beta1 as f32;
        let b2 = self.cfg.beta2 as f32;
        self.m.zip_mut(grads, |m, g| b1 * m + (1.0 - b1) * g);
        self.v.zip_mut(grads, |v, g| b2 * v + (1.0 - b2) * g * g);
        let bc1 = 1.0 - (self.cfg.beta1 as f32).powi(self.t as i32);
        let bc2 = 1.0 - (self.cfg.beta2 as f32).powi(self.t as i32);
        let eps = self.cfg.eps as f32;
        let lr = lr as f32;
        let mut update = self.m.clone();
        update.zip_mut(&self.v, |m, v| (m / bc1) / ((v / bc2).sqrt() + eps));
        params.zip_mut(&update, |p, u| p - lr * u);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Rows per gradient-accumulation micro-batch (defaults to
    /// `batch_size`: no accumulation).
    pub micro_batch: usize,
    pub total_steps: u64,
    pub checkpoint_every: u64,
    pub eval_every: u64,
    /// Evaluations without improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub lr: LrSchedule,
    pub adam: AdamConfig,
    pub label_smoothing: f32,
    pub seed: u64,
    /// Greedy-decode budget during validation.
    pub max_decode_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            micro_batch: 32,
            total_steps: 200,
            checkpoint_every: 100,
            eval_every: 50,
            early_stop_patience: 0,
            lr: LrSchedule::Constant { value: 1e-3 },
            adam: AdamConfig::default(),
            label_smoothing: 0.0,
            seed: 0,
            max_decode_len: 32,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.micro_batch == 0 {
            return Err(TrainError::InvalidConfig(
                "batch sizes must be positive".to_string(),
            ));
        }
        if self.checkpoint_every == 0 {
            return Err(TrainError::InvalidConfig(
                "checkpoint_every must be positive".to_string(),
            ));
        }
        if self.total_steps > 0 && self.checkpoint_every > self.total_steps {
            return Err(TrainError::InvalidConfig(format!(
                "checkpoint_every {} exceeds total_steps {}",
                self.checkpoint_every, self.total_steps
            )));
        }
        Ok(())
    }
}

/// One task's encoded data ready for training.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub spec: TaskSpec,
    pub train: Vec<TrainingExample>,
    pub valid: Vec<TrainingExample>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepLoss {
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalRecord {
    pub step: u64,
    /// Per-task gating-metric scores, plus `<task>/rouge_l` companions.
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BestCheckpoint {
    pub step: u64,
    pub score: f64,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunLog {
    pub label: String,
    pub losses: Vec<StepLoss>,
    pub evals: Vec<EvalRecord>,
    /// Periodic checkpoints: (step, path). The final checkpoint is
    /// always present.
    pub checkpoints: Vec<(u64, PathBuf)>,
    pub final_checkpoint: PathBuf,
    /// Best evaluated checkpoint per task (argmax gating metric,
    /// earliest step on ties).
    pub best: BTreeMap<String, BestCheckpoint>,
    pub stopped_early: bool,
}

impl RunLog {
    /// Write `<label>.losses.jsonl` ({step, loss} per line) and
    /// `<label>.metrics.json`.
    pub fn write_files(&self, dir: &Path) -> Result<(), TrainError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| TrainError::Io {
                path: path.clone(),
                source,
            }
        };
        let losses_path = dir.join(format!("{}.losses.jsonl", self.label));
        let mut out = String::new();
        for l in &self.losses {
            out.push_str(&serde_json::to_string(l).expect("loss serializes"));
            out.push('\n');
        }
        let mut f = fs::File::create(&losses_path).map_err(io_err(&losses_path))?;
        f.write_all(out.as_bytes()).map_err(io_err(&losses_path))?;
        let metrics_path = dir.join(format!("{}.metrics.json", self.label));
        let json = serde_json::to_string_pretty(self).expect("runlog serializes");
        let mut f = fs::File::create(&metrics_path).map_err(io_err(&metrics_path))?;
        f.write_all(json.as_bytes()).map_err(io_err(&metrics_path))?;
        Ok(())
    }
}

/// Gating metric score for decoded hypotheses against references.
fn score_pairs(metric: TaskMetric, pairs: &[EvalPair]) -> Result<f64, TrainError> {
    Ok(match metric {
        TaskMetric::SmoothedBleu4 => smoothed_bleu4(pairs).score,
        TaskMetric::Bleu4 => corpus_bleu4(pairs).score,
        TaskMetric::ExactMatch => exact_match(pairs)?.score,
    })
}

/// Decode every validation example and score it with the task's gating
/// metric (plus ROUGE-L for the log).
fn evaluate_task(
    params: &Parameters<f32>,
    model_cfg: &ModelConfig,
    vocab: &Vocabulary,
    task: &TaskData,
    max_decode_len: usize,
) -> Result<(f64, f64), TrainError> {
    let pairs: Vec<EvalPair> = task
        .valid
        .par_iter()
        .map(|example| -> Result<EvalPair, TrainError> {
            let hyp_ids = greedy_decode(params, model_cfg, &example.input_ids, max_decode_len)?;
            let hyp = vocab.decode(&hyp_ids)?;
            let ref_ids: Vec<u32> = example
                .target_ids
                .iter()
                .copied()
                .filter(|&id| id != EOS_ID)
                .collect();
            let reference = vocab.decode(&ref_ids)?;
            Ok(EvalPair::from_text(&hyp, &[&reference]))
        })
        .collect::<Result<_, _>>()?;
    let gate = score_pairs(task.spec.metric, &pairs)?;
    let rouge = rouge_l(&pairs).score;
    Ok((gate, rouge))
}

struct Engine<'a> {
    model_cfg: &'a ModelConfig,
    cfg: &'a TrainConfig,
    vocab: &'a Vocabulary,
    out_dir: &'a Path,
    label: String,
}

impl Engine<'_> {
    fn checkpoint_path(&self, step: u64) -> PathBuf {
        self.out_dir
            .join(format!("{}.step{}.ctckpt", self.label, step))
    }

    fn run(
        &self,
        params: &mut Parameters<f32>,
        sampler: &mut MixtureSampler,
        eval_tasks: &[TaskData],
    ) -> Result<RunLog, TrainError> {
        self.cfg.validate()?;
        fs::create_dir_all(self.out_dir).map_err(|source| TrainError::Io {
            path: self.out_dir.to_path_buf(),
            source,
        })?;
        let mut adam = Adam::new(self.model_cfg, self.cfg.adam);
        let mut log = RunLog {
            label: self.label.clone(),
            losses: Vec::new(),
            evals: Vec::new(),
            checkpoints: Vec::new(),
            final_checkpoint: PathBuf::new(),
            best: BTreeMap::new(),
            stopped_early: false,
        };
        let mut best_gate = f64::NEG_INFINITY;
        let mut evals_since_improvement = 0usize;

        for step in 1..=self.cfg.total_steps {
            let batch = sampler.next_batch();
            let grads = self.accumulate(params, &batch, step)?;
            let lr = self.cfg.lr.at(step);
            let loss = grads.1;
            adam.step(params, &grads.0, lr);
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    step,
                    message: format!("loss {loss}"),
                });
            }
            log.losses.push(StepLoss { step, loss });

            if step % self.cfg.checkpoint_every == 0 {
                let path = self.checkpoint_path(step);
                save_checkpoint(&path, self.model_cfg, params)?;
                log.checkpoints.push((step, path));
            }
            if self.cfg.eval_every > 0 && step % self.cfg.eval_every == 0 && !eval_tasks.is_empty()
            {
                let record = self.evaluate_all(params, eval_tasks, step)?;
                let gate_mean = gate_mean(&record, eval_tasks);
                log.evals.push(record);
                if gate_mean > best_gate {
                    best_gate = gate_mean;
                    evals_since_improvement = 0;
                    let path = self.out_dir.join(format!("{}.best.ctckpt", self.label));
                    save_checkpoint(&path, self.model_cfg, params)?;
                    for task in eval_tasks {
                        let score = *log
                            .evals
                            .last()
                            .and_then(|e| e.scores.get(&task.spec.name))
                            .expect("score recorded");
                        update_best(&mut log.best, &task.spec.name, step, score, &path);
                    }
                } else {
                    evals_since_improvement += 1;
                    if self.cfg.early_stop_patience > 0
                        && evals_since_improvement >= self.cfg.early_stop_patience
                    {
                        log.stopped_early = true;
                        break;
                    }
                }
            }
        }

        let last_step = log.losses.last().map(|l| l.step).unwrap_or(0);
        let final_path = self.out_dir.join(format!("{}.final.ctckpt", self.label));
        save_checkpoint(&final_path, self.model_cfg, params)?;
        log.final_checkpoint = final_path.clone();
        if log.checkpoints.last().map(|(s, _)| *s) != Some(last_step) {
            log.checkpoints.push((last_step, final_path));
        }
        if !eval_tasks.is_empty() && log.evals.last().map(|e| e.step) != Some(last_step) {
            let record = self.evaluate_all(params, eval_tasks, last_step)?;
            let gate_mean = gate_mean(&record, eval_tasks);
            if gate_mean > best_gate {
                let path = self.out_dir.join(format!("{}.best.ctckpt", self.label));
                save_checkpoint(&path, self.model_cfg, params)?;
                for task in eval_tasks {
                    let score = *record.scores.get(&task.spec.name).expect("score recorded");
                    update_best(&mut log.best, &task.spec.name, last_step, score, &path);
                }
            }
            log.evals.push(record);
        }
        Ok(log)
    }

    /// Gradient accumulation over micro-batches, weighted by token
    /// counts so the result equals one full-batch gradient.
    fn accumulate(
        &self,
        params: &Parameters<f32>,
        batch: &Batch,
        step: u64,
    ) -> Result<(Parameters<f32>, f64), TrainError> {
        let dropout_seed = stream_seed(self.cfg.seed, 0xd07, step);
        if self.cfg.micro_batch >= batch.len() {
            let (loss, grads) = backward(params, self.model_cfg, batch, true, dropout_seed)?;
            return Ok((grads, loss as f64));
        }
        let mut total = Parameters::<f32>::zeros(self.model_cfg);
        let mut loss_sum = 0.0f64;
        let mut tokens_total = 0usize;
        let mut start = 0;
        while start < batch.len() {
            let end = (start + self.cfg.micro_batch).min(batch.len());
            let sub = batch.narrow(start, end);
            let tokens: usize = sub.target_len.iter().sum();
            let (loss, mut grads) =
                backward(params, self.model_cfg, &sub, true, stream_seed(dropout_seed, 7, start as u64))?;
            grads.scale(tokens as f32);
            total.add_assign(&grads);
            loss_sum += loss as f64 * tokens as f64;
            tokens_total += tokens;
            start = end;
        }
        total.scale(1.0 / tokens_total as f32);
        Ok((total, loss_sum / tokens_total as f64))
    }

    fn evaluate_all(
        &self,
        params: &Parameters<f32>,
        eval_tasks: &[TaskData],
        step: u64,
    ) -> Result<EvalRecord, TrainError> {
        let mut scores = BTreeMap::new();
        for task in eval_tasks {
            let (gate, rouge) = evaluate_task(
                params,
                self.model_cfg,
                self.vocab,
                task,
                self.cfg.max_decode_len,
            )?;
            scores.insert(task.spec.name.clone(), gate);
            scores.insert(format!("{}/rouge_l", task.spec.name), rouge);
        }
        Ok(EvalRecord { step, scores })
    }
}

fn gate_mean(record: &EvalRecord, tasks: &[TaskData]) -> f64 {
    let sum: f64 = tasks
        .iter()
        .map(|t| record.scores.get(&t.spec.name).copied().unwrap_or(0.0))
        .sum();
    sum / tasks.len() as f64
}

fn update_best(
    best: &mut BTreeMap<String, BestCheckpoint>,
    task: &str,
    step: u64,
    score: f64,
    path: &Path,
) {
    let entry = best.entry(task.to_string());
    match entry {
        std::collections::btree_map::Entry::Vacant(v) => {
            v.insert(BestCheckpoint {
                step,
                score,
                path: path.to_path_buf(),
            });
        }
        std::collections::btree_map::Entry::Occupied(mut o) => {
            if score > o.get().score {
                o.insert(BestCheckpoint {
                    step,
                    score,
                    path: path.to_path_buf(),
                });
            }
        }
    }
}

fn single_task_sampler(task: &TaskData, cfg: &TrainConfig) -> Result<MixtureSampler, TrainError> {
    let registry =
        build_registry_with_sizes([(task.spec.clone(), task.train.len())])?;
    let mixture = build_mixture(&registry)?;
    Ok(MixtureSampler::new(
        mixture,
        vec![task.train.clone()],
        cfg.batch_size,
        cfg.seed,
    )?)
}

fn mixture_sampler(tasks: &[TaskData], cfg: &TrainConfig) -> Result<MixtureSampler, TrainError> {
    let registry = build_registry_with_sizes(
        tasks.iter().map(|t| (t.spec.clone(), t.train.len())),
    )?;
    let mixture = build_mixture(&registry)?;
    Ok(MixtureSampler::new(
        mixture,
        tasks.iter().map(|t| t.train.clone()).collect(),
        cfg.batch_size,
        cfg.seed,
    )?)
}

/// Train one supervised task from a fresh initialization.
pub fn train_single_task(
    task: &TaskData,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    vocab: &Vocabulary,
    out_dir: &Path,
) -> Result<RunLog, TrainError> {
    if task.spec.kind != TaskKind::Supervised {
        return Err(TrainError::NotSupervised(task.spec.name.clone()));
    }
    let mut params = init_params::<f32>(model_cfg, cfg.seed)?;
    let mut sampler = single_task_sampler(task, cfg)?;
    let engine = Engine {
        model_cfg,
        cfg,
        vocab,
        out_dir,
        label: format!("st.{}", sanitize(&task.spec.name)),
    };
    engine.run(&mut params, &mut sampler, std::slice::from_ref(task))
}

/// Self-supervised pretraining over a mixture of unlabeled tasks.
/// Gating evaluation is skipped (loss is the only signal); the final
/// checkpoint is the product.
pub fn pretrain(
    tasks: &[TaskData],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    vocab: &Vocabulary,
    out_dir: &Path,
) -> Result<RunLog, TrainError> {
    for task in tasks {
        if task.spec.kind != TaskKind::SelfSupervised {
            return Err(TrainError::NotSelfSupervised(task.spec.name.clone()));
        }
    }
    let mut params = init_params::<f32>(model_cfg, cfg.seed)?;
    let mut sampler = mixture_sampler(tasks, cfg)?;
    let engine = Engine {
        model_cfg,
        cfg,
        vocab,
        out_dir,
        label: "pretrain".to_string(),
    };
    engine.run(&mut params, &mut sampler, &[])
}

/// Resume from a checkpoint and fine-tune one supervised task. The
/// checkpoint's stored config must match `model_cfg`.
pub fn fine_tune(
    checkpoint: &Path,
    task: &TaskData,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    vocab: &Vocabulary,
    out_dir: &Path,
) -> Result<RunLog, TrainError> {
    if task.spec.kind != TaskKind::Supervised {
        return Err(TrainError::NotSupervised(task.spec.name.clone()));
    }
    let (loaded_cfg, mut params) = load_checkpoint(checkpoint)?;
    if loaded_cfg != *model_cfg {
        return Err(TrainError::Model(ModelError::ConfigMismatch(format!(
            "checkpoint {loaded_cfg:?} vs requested {model_cfg:?}"
        ))));
    }
    let mut sampler = single_task_sampler(task, cfg)?;
    let engine = Engine {
        model_cfg,
        cfg,
        vocab,
        out_dir,
        label: format!("ft.{}", sanitize(&task.spec.name)),
    };
    engine.run(&mut params, &mut sampler, std::slice::from_ref(task))
}

/// Multi-task training over supervised and self-supervised tasks
/// together. Every recorded checkpoint is evaluated on every supervised
/// task's validation set; the per-task argmax checkpoint (earliest on
/// ties) is reported in the run log's `best` map.
pub fn train_multi_task(
    tasks: &[TaskData],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    vocab: &Vocabulary,
    out_dir: &Path,
) -> Result<RunLog, TrainError> {
    let mut params = init_params::<f32>(model_cfg, cfg.seed)?;
    let mut sampler = mixture_sampler(tasks, cfg)?;
    let supervised: Vec<TaskData> = tasks
        .iter()
        .filter(|t| t.spec.kind == TaskKind::Supervised)
        .cloned()
        .collect();
    let engine = Engine {
        model_cfg,
        cfg,
        vocab,
        out_dir,
        label: "mt".to_string(),
    };
    let mut log = engine.run(&mut params, &mut sampler, &supervised)?;

    // Per-task checkpoint selection over every recorded checkpoint.
    log.best.clear();
    for (step, path) in &log.checkpoints {
        let (_, ckpt_params) = load_checkpoint(path)?;
        for task in &supervised {
            let (gate, _) =
                evaluate_task(&ckpt_params, model_cfg, vocab, task, cfg.max_decode_len)?;
            update_best(&mut log.best, &task.spec.name, *step, gate, path);
        }
    }
    Ok(log)
}

/// The four training regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Single-task: each supervised task from scratch.
    St,
    /// Transfer: pretrain on unlabeled data, then fine-tune per task.
    Tf,
    /// Multi-task: one model over all tasks with per-task checkpoints.
    Mt,
    /// Multi-task then fine-tune each task from the final checkpoint.
    MtFt,
}

impl Strategy {
    pub fn parse(name: &str) -> Option<Strategy> {
        match name {
            "st" => Some(Strategy::St),
            "tf" => Some(Strategy::Tf),
            "mt" => Some(Strategy::Mt),
            "mt-ft" | "mt_ft" => Some(Strategy::MtFt),
            _ => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::St => "st",
            Strategy::Tf => "tf",
            Strategy::Mt => "mt",
            Strategy::MtFt => "mt-ft",
        })
    }
}

#[derive(Debug, Default)]
pub struct StrategyArtifacts {
    pub pretrain: Option<RunLog>,
    pub multi_task: Option<RunLog>,
    /// Per supervised task: the task-specific run (ST fresh runs, TF and
    /// MT-FT fine-tunes). Empty for plain MT.
    pub per_task: BTreeMap<String, RunLog>,
}

/// Compose the regimes. `pretrain_cfg` drives the shared stage of TF and
/// MT (and is ignored for ST); `task_cfg` drives per-task runs.
pub fn strategy_driver(
    strategy: Strategy,
    supervised: &[TaskData],
    self_supervised: &[TaskData],
    task_cfg: &TrainConfig,
    pretrain_cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    vocab: &Vocabulary,
    out_dir: &Path,
) -> Result<StrategyArtifacts, TrainError> {
    let mut artifacts = StrategyArtifacts::default();
    match strategy {
        Strategy::St => {
            for task in supervised {
                let log = train_single_task(task, task_cfg, model_cfg, vocab, out_dir)?;
                artifacts.per_task.insert(task.spec.name.clone(), log);
            }
        }
        Strategy::Tf => {
            let pre = pretrain(self_supervised, pretrain_cfg, model_cfg, vocab, out_dir)?;
            let start = pre.final_checkpoint.clone();
            artifacts.pretrain = Some(pre);
            for task in supervised {
                let log = fine_tune(&start, task, task_cfg, model_cfg, vocab, out_dir)?;
                artifacts.per_task.insert(task.spec.name.clone(), log);
            }
        }
        Strategy::Mt => {
            let all: Vec<TaskData> = supervised
                .iter()
                .chain(self_supervised.iter())
                .cloned()
                .collect();
            artifacts.multi_task =
                Some(train_multi_task(&all, pretrain_cfg, model_cfg, vocab, out_dir)?);
        }
        Strategy::MtFt => {
            let all: Vec<TaskData> = supervised
                .iter()
                .chain(self_supervised.iter())
                .cloned()
                .collect();
            let mt = train_multi_task(&all, pretrain_cfg, model_cfg, vocab, out_dir)?;
            // Fine-tuning starts from the final multi-task checkpoint,
            // not from any per-task best.
            let start = mt.final_checkpoint.clone();
            artifacts.multi_task = Some(mt);
            for task in supervised {
                let log = fine_tune(&start, task, task_cfg, model_cfg, vocab, out_dir)?;
                artifacts.per_task.insert(task.spec.name.clone(), log);
            }
        }
    }
    Ok(artifacts)
}

/// Token accuracy of a parameter set on a batch of examples.
pub fn batch_token_accuracy(
    params: &Parameters<f32>,
    model_cfg: &ModelConfig,
    examples: &[TrainingExample],
) -> Result<f64, TrainError> {
    let rows: Vec<(usize, &TrainingExample)> = examples.iter().map(|e| (0, e)).collect();
    let batch = Batch::from_examples(&rows, &["eval".to_string()]);
    Ok(token_accuracy(params, model_cfg, &batch)?)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect()
}
