//! Task datasets in a canonical line-record format.
//!
//! A corpus file is UTF-8 with one JSON object per line, keys exactly
//! `{"id","task","language","source","target","split"}`. An empty target
//! marks an unlabeled sample; unlabeled samples belong to
//! self-supervised tasks only.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: {message}")]
    Mismatch {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate task name {0:?}")]
    DuplicateTask(String),
    #[error("holdout fraction {0} outside (0, 1)")]
    BadHoldout(f64),
}

/// Dataset partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Language tag carried by every sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Python,
    Java,
    Go,
    Php,
    Ruby,
    Javascript,
    Csharp,
    Sql,
    Lisp,
    English,
    Dsl,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::Python => "python",
            Language::Java => "java",
            Language::Go => "go",
            Language::Php => "php",
            Language::Ruby => "ruby",
            Language::Javascript => "javascript",
            Language::Csharp => "csharp",
            Language::Sql => "sql",
            Language::Lisp => "lisp",
            Language::English => "english",
            Language::Dsl => "dsl",
        }
    }

    pub fn parse(tag: &str) -> Option<Language> {
        match tag {
            "python" => Some(Language::Python),
            "java" => Some(Language::Java),
            "go" => Some(Language::Go),
            "php" => Some(Language::Php),
            "ruby" => Some(Language::Ruby),
            "javascript" => Some(Language::Javascript),
            "csharp" => Some(Language::Csharp),
            "sql" => Some(Language::Sql),
            "lisp" => Some(Language::Lisp),
            "english" => Some(Language::English),
            "dsl" => Some(Language::Dsl),
            _ => None,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One supervised or unlabeled record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub task: String,
    pub language: Language,
    pub source: String,
    pub target: String,
    pub split: Split,
}

impl Sample {
    pub fn is_unlabeled(&self) -> bool {
        self.target.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Supervised,
    SelfSupervised,
}

/// Gating/evaluation metric assigned to a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMetric {
    SmoothedBleu4,
    Bleu4,
    ExactMatch,
}

/// A single dataset-task binding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub language: Language,
    pub prefix: String,
    pub metric: TaskMetric,
    pub dataset_path: PathBuf,
}

impl TaskSpec {
    /// Check the prefix convention: supervised prefixes end with ": ",
    /// self-supervised prefixes may be empty.
    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            TaskKind::Supervised => {
                if !self.prefix.ends_with(": ") {
                    return Err(format!(
                        "supervised task {:?} prefix must end with \": \"",
                        self.name
                    ));
                }
            }
            TaskKind::SelfSupervised => {}
        }
        Ok(())
    }
}

/// Parse one corpus file, validating every record against `expect`.
pub fn load_corpus(path: &Path, expect: &TaskSpec) -> Result<Vec<Sample>, CorpusError> {
    let samples = read_corpus(path)?;
    for (idx, sample) in samples.iter().enumerate() {
        let line = idx + 1;
        let mismatch = |message: String| CorpusError::Mismatch {
            path: path.to_path_buf(),
            line,
            message,
        };
        if sample.task != expect.name {
            return Err(mismatch(format!(
                "task {:?} does not match expected {:?}",
                sample.task, expect.name
            )));
        }
        if sample.language != expect.language {
            return Err(mismatch(format!(
                "language {} does not match expected {}",
                sample.language, expect.language
            )));
        }
        match expect.kind {
            TaskKind::Supervised => {
                if sample.target.is_empty() {
                    return Err(mismatch("empty target on a supervised task".to_string()));
                }
            }
            TaskKind::SelfSupervised => {
                if !sample.target.is_empty() {
                    return Err(mismatch(
                        "non-empty target on a self-supervised task".to_string(),
                    ));
                }
            }
        }
    }
    Ok(samples)
}

/// Parse one corpus file without task validation (structure checks only).
pub fn read_corpus(path: &Path) -> Result<Vec<Sample>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let sample: Sample =
            serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        if sample.source.is_empty() {
            return Err(CorpusError::Malformed {
                path: path.to_path_buf(),
                line: line_no,
                message: "empty source".to_string(),
            });
        }
        if !seen.insert(sample.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                line: line_no,
                id: sample.id,
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}

/// Serialize samples back to the line-record format.
pub fn write_corpus(path: &Path, samples: &[Sample]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for sample in samples {
        serde_json::to_writer(&mut out, sample).expect("sample serialization is infallible");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)?;
    Ok(())
}

/// Deterministically reassign a fraction of train samples to the
/// validation split. Used for datasets shipped without one.
pub fn apply_holdout(
    samples: &mut [Sample],
    fraction: f64,
    seed: u64,
) -> Result<usize, CorpusError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::BadHoldout(fraction));
    }
    let mut train_idx: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    train_idx.shuffle(&mut rng);
    let take = ((train_idx.len() as f64) * fraction).round() as usize;
    for &i in train_idx.iter().take(take) {
        samples[i].split = Split::Valid;
    }
    Ok(take)
}

/// Summary statistics over whitespace-token counts.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LengthStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    /// Exact token-count histogram: length -> number of samples.
    pub histogram: BTreeMap<usize, usize>,
}

impl LengthStats {
    fn from_lengths(lengths: &[usize]) -> LengthStats {
        if lengths.is_empty() {
            return LengthStats::default();
        }
        let mut histogram = BTreeMap::new();
        for &l in lengths {
            *histogram.entry(l).or_insert(0) += 1;
        }
        LengthStats {
            min: *lengths.iter().min().unwrap(),
            max: *lengths.iter().max().unwrap(),
            mean: lengths.iter().sum::<usize>() as f64 / lengths.len() as f64,
            histogram,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SplitStats {
    pub count: usize,
    pub source_tokens: LengthStats,
    pub target_tokens: LengthStats,
}

/// Per-split counts and token-length histograms.
#[derive(Debug, Clone, Serialize)]
pub struct CorpusStats {
    pub total: usize,
    pub splits: BTreeMap<String, SplitStats>,
}

pub fn corpus_stats(samples: &[Sample]) -> CorpusStats {
    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let in_split: Vec<&Sample> = samples.iter().filter(|s| s.split == split).collect();
        let source_lengths: Vec<usize> = in_split
            .iter()
            .map(|s| s.source.split_whitespace().count())
            .collect();
        let target_lengths: Vec<usize> = in_split
            .iter()
            .map(|s| s.target.split_whitespace().count())
            .collect();
        splits.insert(
            split.as_str().to_string(),
            SplitStats {
                count: in_split.len(),
                source_tokens: LengthStats::from_lengths(&source_lengths),
                target_tokens: LengthStats::from_lengths(&target_lengths),
            },
        );
    }
    CorpusStats {
        total: samples.len(),
        splits,
    }
}

/// One registered task with its dataset size.
#[derive(Debug, Clone)]
pub struct RegistryEntry {
    pub spec: TaskSpec,
    pub size: usize,
}

/// Named set of task registrations.
#[derive(Debug, Clone, Default)]
pub struct TaskRegistry {
    entries: Vec<RegistryEntry>,
}

impl TaskRegistry {
    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&RegistryEntry> {
        self.entries.iter().find(|e| e.spec.name == name)
    }
}

/// Build a registry by counting records in each spec's dataset file.
pub fn build_registry(specs: &[TaskSpec]) -> Result<TaskRegistry, CorpusError> {
    let sizes = specs
        .iter()
        .map(|spec| {
            let text =
                fs::read_to_string(&spec.dataset_path).map_err(|source| CorpusError::Io {
                    path: spec.dataset_path.clone(),
                    source,
                })?;
            Ok(text.lines().filter(|l| !l.trim().is_empty()).count())
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    build_registry_with_sizes(specs.iter().cloned().zip(sizes))
}

/// Build a registry from (spec, size) pairs already in memory.
pub fn build_registry_with_sizes<I>(pairs: I) -> Result<TaskRegistry, CorpusError>
where
    I: IntoIterator<Item = (TaskSpec, usize)>,
{
    let mut names = HashSet::new();
    let mut entries = Vec::new();
    for (spec, size) in pairs {
        if !names.insert(spec.name.clone()) {
            return Err(CorpusError::DuplicateTask(spec.name));
        }
        entries.push(RegistryEntry { spec, size });
    }
    Ok(TaskRegistry { entries })
}
