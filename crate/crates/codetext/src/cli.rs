//! Subcommand dispatch for the `codetext` binary.
//!
//! Every run resolves its full configuration (defaults, then `--config`
//! file entries, then explicit flags), executes, and emits a
//! [`RunManifest`] alongside its primary output so the run can be
//! replayed byte-for-byte. Environment variables are never read.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{
    self, corpus_stats, read_corpus, Language, Sample, Split, TaskKind, TaskMetric, TaskSpec,
};
use crate::manifest::{ManifestError, RunManifest};
use crate::metrics::{corpus_bleu4, exact_match, rouge_l, smoothed_bleu4, EvalPair, MetricError};
use crate::mixture::MixtureError;
use crate::model::{greedy_decode, load_checkpoint, ModelConfig, ModelError};
use crate::normalize::{lex, normalize, LexError, LexLang, NormalizeOptions};
use crate::objective::{
    make_self_supervised, make_supervised, read_shard, write_shard, CorruptionConfig,
    ObjectiveError, TrainingExample,
};
use crate::subword::{train_vocab, VocabError, VocabTrainConfig, Vocabulary};
use crate::trainer::{
    strategy_driver, AdamConfig, LrSchedule, Strategy, TaskData, TrainConfig, TrainError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("sample {id}: {message}")]
    Sample { id: String, message: String },
}

const USAGE: &str = "\
usage: codetext <subcommand> [flags]

subcommands:
  normalize      --lang <tag> --in <file> --out <file> [--target-lang <tag>]
                 [--keep-comments] [--keep-literals] [--newline-token <s>]
  vocab train    --in <files> --out <vocab> [--size N] [--coverage F]
                 [--max-sentences N] [--seed N] [--sentinels N] [--raw]
  vocab encode   --vocab <file> --in <text> --out <ids>
  vocab decode   --vocab <file> --in <ids> --out <text>
  examples build --task <name> --in <corpus> --vocab <file> --out <shard>
                 [--split train|valid|test] [--max-len N] [--prefix <s>]
                 [--corrupt] [--rate F] [--mean-span F] [--seed N]
  mix inspect    --mixture <cfg> [--out <json>]
  train          --strategy st|tf|mt|mt-ft --mixture <cfg> --model <name>
                 --vocab <file> --out <dir> [--batch N] [--micro-batch N]
                 [--steps N] [--pretrain-steps N] [--pretrain-batch N]
                 [--checkpoint-every N] [--eval-every N] [--patience N]
                 [--lr F] [--warmup N] [--label-smoothing F] [--seed N]
                 [--max-decode N]
  generate       --checkpoint <file> --vocab <file> --in <corpus>
                 --out <hyps> [--split test] [--prefix <s>] [--max-out N]
  eval           --metric smoothed-bleu4|bleu4|rouge-l|exact --hyp <file>
                 --ref <file> [--ref2 <file>] [--ref3 <file>] [--out <json>]
  stats          --in <corpus> [--out <json>]

global flags: --config <file> (key = value lines mirroring any flag),
              --threads N (0 = library default; 1 = reproducibility
              reference), --manifest <path>
";

/// Route argv to a subcommand. Returns the process exit code: 0 on
/// success, 2 for usage errors, 1 for module errors.
pub fn dispatch(args: &[String]) -> i32 {
    match run(args) {
        Ok(()) => 0,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            eprintln!("{USAGE}");
            2
        }
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

/// Execute one subcommand.
pub fn run(args: &[String]) -> Result<(), CliError> {
    let (name, rest) = split_subcommand(args)?;
    let spec = subcommand_spec(&name)
        .ok_or_else(|| CliError::Usage(format!("unknown subcommand {name:?}")))?;
    let resolved = resolve_flags(&spec, rest)?;
    let threads: usize = parse_flag(&resolved, "threads")?;
    if threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
        pool.install(|| execute(&name, &resolved))
    } else {
        execute(&name, &resolved)
    }
}

/// Re-run a recorded manifest and verify the outputs are byte-identical.
pub fn replay(manifest_path: &Path) -> Result<(), CliError> {
    let manifest = RunManifest::load(manifest_path)?;
    let argv = manifest.replay_args();
    run(&argv)?;
    manifest.verify_outputs()?;
    Ok(())
}

fn execute(name: &str, flags: &BTreeMap<String, String>) -> Result<(), CliError> {
    match name {
        "normalize" => cmd_normalize(flags),
        "vocab train" => cmd_vocab_train(flags),
        "vocab encode" => cmd_vocab_codec(flags, true),
        "vocab decode" => cmd_vocab_codec(flags, false),
        "examples build" => cmd_examples_build(flags),
        "mix inspect" => cmd_mix_inspect(flags),
        "train" => cmd_train(flags),
        "generate" => cmd_generate(flags),
        "eval" => cmd_eval(flags),
        "stats" => cmd_stats(flags),
        _ => Err(CliError::Usage(format!("unknown subcommand {name:?}"))),
    }
}

struct SubSpec {
    /// (flag, default); None means required.
    value_flags: &'static [(&'static str, Option<&'static str>)],
    bool_flags: &'static [&'static str],
}

const GLOBAL_VALUE_FLAGS: [(&str, Option<&str>); 3] =
    [("config", Some("")), ("threads", Some("0")), ("manifest", Some(""))];

fn subcommand_spec(name: &str) -> Option<SubSpec> {
    let spec = match name {
        "normalize" => SubSpec {
            value_flags: &[
                ("lang", None),
                ("in", None),
                ("out", None),
                ("target-lang", Some("english")),
                ("newline-token", Some("< newline >")),
            ],
            bool_flags: &["keep-comments", "keep-literals"],
        },
        "vocab train" => SubSpec {
            value_flags: &[
                ("in", None),
                ("out", None),
                ("size", Some("4096")),
                ("coverage", Some("0.9999")),
                ("max-sentences", Some("40000000")),
                ("seed", Some("0")),
                ("sentinels", Some("100")),
            ],
            bool_flags: &["raw"],
        },
        "vocab encode" | "vocab decode" => SubSpec {
            value_flags: &[("vocab", None), ("in", None), ("out", None)],
            bool_flags: &[],
        },
        "examples build" => SubSpec {
            value_flags: &[
                ("task", None),
                ("in", None),
                ("vocab", None),
                ("out", None),
                ("split", Some("train")),
                ("max-len", Some("512")),
                ("prefix", Some("")),
                ("rate", Some("0.15")),
                ("mean-span", Some("3")),
                ("seed", Some("0")),
            ],
            bool_flags: &["corrupt"],
        },
        "mix inspect" => SubSpec {
            value_flags: &[("mixture", None), ("out", Some(""))],
            bool_flags: &[],
        },
        "train" => SubSpec {
            value_flags: &[
                ("strategy", None),
                ("mixture", None),
                ("model", None),
                ("vocab", None),
                ("out", None),
                ("batch", Some("256")),
                ("micro-batch", Some("0")),
                ("steps", Some("1000")),
                ("pretrain-steps", Some("0")),
                ("pretrain-batch", Some("0")),
                ("checkpoint-every", Some("20000")),
                ("eval-every", Some("0")),
                ("patience", Some("0")),
                ("lr", Some("0.001")),
                ("warmup", Some("0")),
                ("label-smoothing", Some("0")),
                ("seed", Some("0")),
                ("max-decode", Some("32")),
            ],
            bool_flags: &[],
        },
        "generate" => SubSpec {
            value_flags: &[
                ("checkpoint", None),
                ("vocab", None),
                ("in", None),
                ("out", None),
                ("split", Some("test")),
                ("prefix", Some("")),
                ("max-out", Some("64")),
            ],
            bool_flags: &[],
        },
        "eval" => SubSpec {
            value_flags: &[
                ("metric", None),
                ("hyp", None),
                ("ref", None),
                ("ref2", Some("")),
                ("ref3", Some("")),
                ("out", Some("")),
            ],
            bool_flags: &[],
        },
        "stats" => SubSpec {
            value_flags: &[("in", None), ("out", Some(""))],
            bool_flags: &[],
        },
        _ => return None,
    };
    Some(spec)
}

fn split_subcommand(args: &[String]) -> Result<(String, &[String]), CliError> {
    let first = args
        .first()
        .ok_or_else(|| CliError::Usage("no subcommand given".to_string()))?;
    match first.as_str() {
        "vocab" | "mix" | "examples" => {
            let second = args.get(1).ok_or_else(|| {
                CliError::Usage(format!("{first} requires a nested subcommand"))
            })?;
            Ok((format!("{first} {second}"), &args[2..]))
        }
        _ => Ok((first.clone(), &args[1..])),
    }
}

/// Layered resolution: built-in defaults, then `--config` file entries,
/// then explicit flags.
fn resolve_flags(
    spec: &SubSpec,
    args: &[String],
) -> Result<BTreeMap<String, String>, CliError> {
    let bools: BTreeSet<&str> = spec.bool_flags.iter().copied().collect();
    let known: BTreeSet<&str> = spec
        .value_flags
        .iter()
        .map(|(k, _)| *k)
        .chain(spec.bool_flags.iter().copied())
        .chain(GLOBAL_VALUE_FLAGS.iter().map(|(k, _)| *k))
        .collect();

    let mut explicit: BTreeMap<String, String> = BTreeMap::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::Usage(format!("unexpected argument {arg:?}")))?;
        if !known.contains(key) {
            return Err(CliError::Usage(format!("unknown flag --{key}")));
        }
        if bools.contains(key) {
            explicit.insert(key.to_string(), "true".to_string());
            i += 1;
        } else {
            let value = args
                .get(i + 1)
                .ok_or_else(|| CliError::Usage(format!("--{key} needs a value")))?;
            explicit.insert(key.to_string(), value.clone());
            i += 2;
        }
    }

    let mut resolved: BTreeMap<String, String> = BTreeMap::new();
    for (key, default) in GLOBAL_VALUE_FLAGS {
        if let Some(d) = default {
            resolved.insert(key.to_string(), d.to_string());
        }
    }
    for (key, default) in spec.value_flags {
        if let Some(d) = default {
            resolved.insert(key.to_string(), d.to_string());
        }
    }
    for key in spec.bool_flags {
        resolved.insert(key.to_string(), "false".to_string());
    }

    if let Some(config_path) = explicit.get("config") {
        let path = PathBuf::from(config_path);
        let text = fs::read_to_string(&path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !known.contains(key) {
                return Err(CliError::Usage(format!(
                    "{}:{}: unknown flag {key}",
                    path.display(),
                    lineno + 1
                )));
            }
            resolved.insert(key.to_string(), value.to_string());
        }
    }
    for (key, value) in &explicit {
        if key != "config" {
            resolved.insert(key.clone(), value.clone());
        }
    }

    for (key, default) in spec.value_flags {
        if default.is_none() && !resolved.contains_key(*key) {
            return Err(CliError::Usage(format!("missing required flag --{key}")));
        }
    }
    Ok(resolved)
}

fn parse_flag<T: std::str::FromStr>(
    flags: &BTreeMap<String, String>,
    key: &str,
) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    let raw = flags
        .get(key)
        .ok_or_else(|| CliError::Usage(format!("missing flag --{key}")))?;
    raw.parse()
        .map_err(|e| CliError::Usage(format!("--{key} {raw:?}: {e}")))
}

fn flag_bool(flags: &BTreeMap<String, String>, key: &str) -> bool {
    flags.get(key).map(|v| v == "true").unwrap_or(false)
}

fn flag_path(flags: &BTreeMap<String, String>, key: &str) -> PathBuf {
    PathBuf::from(flags.get(key).cloned().unwrap_or_default())
}

fn optional_path(flags: &BTreeMap<String, String>, key: &str) -> Option<PathBuf> {
    flags
        .get(key)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn split_parse(value: &str) -> Result<Split, CliError> {
    match value {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => Err(CliError::Usage(format!("unknown split {other:?}"))),
    }
}

/// Start a manifest with the resolved flags (threads and manifest path
/// excluded; they do not affect outputs).
fn manifest_for(name: &str, flags: &BTreeMap<String, String>) -> RunManifest {
    let mut manifest = RunManifest::new(name);
    for (key, value) in flags {
        // The config file's entries are already resolved into the other
        // args; threads and the manifest destination do not affect
        // outputs.
        if key == "config" || key == "manifest" || key == "threads" {
            continue;
        }
        manifest.arg(key, value);
    }
    if let Some(seed) = flags.get("seed").and_then(|s| s.parse::<u64>().ok()) {
        manifest.seed("seed", seed);
    }
    manifest
}

/// Manifest destination: explicit flag, else `<primary>.manifest.json`.
fn manifest_path(flags: &BTreeMap<String, String>, primary_out: Option<&Path>) -> Option<PathBuf> {
    if let Some(path) = optional_path(flags, "manifest") {
        return Some(path);
    }
    primary_out.map(|p| {
        if p.is_dir() {
            p.join("run.manifest.json")
        } else {
            PathBuf::from(format!("{}.manifest.json", p.display()))
        }
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

fn cmd_normalize(flags: &BTreeMap<String, String>) -> Result<(), CliError> {
    let lang = flags.get("lang").expect("required");
    let source_lang = LexLang::parse(lang)
        .ok_or_else(|| CliError::Usage(format!("unknown language {lang:?}")))?;
    let target_tag = flags.get("target-lang").expect("defaulted");
    let target_lang = LexLang::parse(target_tag)
        .ok_or_else(|| CliError::Usage(format!("unknown language {target_tag:?}")))?;
    let in_path = flag_path(flags, "in");
    let out_path = flag_path(flags, "out");
    let opts = NormalizeOptions {
        strip_comments: !flag_bool(flags, "keep-comments"),
        abstract_literals: !flag_bool(flags, "keep-literals"),
        newline_token: flags.get("newline-token").expect("defaulted").clone(),
        ..NormalizeOptions::default()
    };

    let mut manifest = manifest_for("normalize", flags);
    manifest.record_input(&in_path)?;

    let mut samples = read_corpus(&in_path)?;
    for sample in &mut samples {
        let tokens = lex(source_lang, &sample.source).map_err(|e| CliError::Sample {
            id: sample.id.clone(),
            message: e.to_string(),
        })?;
        sample.source = normalize(&tokens, &opts);
        if !sample.target.is_empty() {
            let tokens = lex(target_lang, &sample.target).map_err(|e| CliError::Sample {
                id: sample.id.clone(),
                message: e.to_string(),
            })?;
            sample.target = normalize(&tokens, &opts);
        }
    }
    corpus::write_corpus(&out_path, &samples)?;
    manifest.record_output(&out_path)?;
    if let Some(mpath) = manifest_path(flags, Some(&out_path)) {
        manifest.save(&mpath)?;
    }
    Ok(())
}

fn cmd_vocab_train(flags: &BTreeMap<String, String>) -> Result<(), CliError> {
    let out_path = flag_path(flags, "out");
    let raw = flag_bool(flags, "raw");
    let mut manifest = manifest_for("vocab train", flags);
    let mut sentences: Vec<String> = Vec::new();
    for part in flags.get("in").expect("required").split(',') {
        let path = PathBuf::from(part);
        manifest.record_input(&path)?;
        if raw {
            sentences.extend(read_lines(&path)?);
        } else {
            for sample in read_corpus(&path)? {
                sentences.push(sample.source);
                if !sample.target.is_empty() {
                    sentences.push(sample.target);
                }
            }
        }
    }
    let cfg = VocabTrainConfig {
        target_size: parse_flag(flags, "size")?,
        character_coverage: parse_flag(flags, "coverage")?,
        max_sentences: parse_flag(flags, "max-sentences")?,
        shuffle_seed: parse_flag(flags, "seed")?,
        sentinel_count: parse_flag(flags, "sentinels")?,
        ..VocabTrainConfig::default()
    };
    let vocab = train_vocab(sentences, &cfg)?;
    vocab.save(&out_path)?;
    manifest.record_output(&out_path)?;
    if let Some(mpath) = manifest_path(flags, Some(&out_path)) {
        manifest.save(&mpath)?;
    }
    Ok(())
}

fn cmd_vocab_codec(flags: &BTreeMap<String, String>, encode: bool) -> Result<(), CliError> {
    let vocab_path = flag_path(flags, "vocab");
    let in_path = flag_path(flags, "in");
    let out_path = flag_path(flags, "out");
    let name = if encode { "vocab encode" } else { "vocab decode" };
    let mut manifest = manifest_for(name, flags);
    manifest.record_input(&vocab_path)?;
    manifest.record_input(&in_path)?;
    let vocab = Vocabulary::load(&vocab_path)?;
    let mut out = String::new();
    for line in read_lines(&in_path)? {
        if encode {
            let ids = vocab.encode(&line);
            let rendered: Vec<String> = ids.iter().map(|id| id.to_string()).collect();
            out.push_str(&rendered.join(" "));
        } else {
            let ids = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<u32>()
                        .map_err(|e| CliError::Usage(format!("bad id {tok:?}: {e}")))
                })
                .collect::<Result<Vec<u32>, CliError>>()?;
            out.push_str(&vocab.decode(&ids)?);
        }
        out.push('\n');
    }
    write_text(&out_path, &out)?;
    manifest.record_output(&out_path)?;
    if let Some(mpath) = manifest_path(flags, Some(&out_path)) {
        manifest.save(&mpath)?;
    }
    Ok(())
}

fn cmd_examples_build(flags: &BTreeMap<String, String>) -> Result<(), CliError> {
    let task = flags.get("task").expect("required").clone();
    let in_path = flag_path(flags, "in");
    let vocab_path = flag_path(flags, "vocab");
    let out_path = flag_path(flags, "out");
    let split = split_parse(flags.get("split").expect("defaulted"))?;
    let max_len: usize = parse_flag(flags, "max-len")?;
    let corrupt = flag_bool(flags, "corrupt");
    let prefix = flags.get("prefix").expect("defaulted").clone();

    let mut manifest = manifest_for("examples build", flags);
    manifest.record_input(&in_path)?;
    manifest.record_input(&vocab_path)?;

    let vocab = Vocabulary::load(&vocab_path)?;
    let samples = read_corpus(&in_path)?;
    let chosen: Vec<&Sample> = samples
        .iter()
        .filter(|s| s.split == split && s.task == task)
        .collect();
    if chosen.is_empty() {
        return Err(CliError::Usage(format!(
            "no samples for task {task:?} in split {split}"
        )));
    }
    let mut examples: Vec<TrainingExample> = Vec::with_capacity(chosen.len());
    if corrupt {
        let cfg = CorruptionConfig {
            rate: parse_flag(flags, "rate")?,
            mean_span: parse_flag(flags, "mean-span")?,
            seed: parse_flag(flags, "seed")?,
        };
        for sample in chosen {
            examples.push(make_self_supervised(sample, &vocab, &cfg, max_len)?);
        }
    } else {
        if !prefix.ends_with(": ") {
            return Err(CliError::Usage(
                "supervised --prefix must end with \": \"".to_string(),
            ));
        }
        let spec = TaskSpec {
            name: task.clone(),
            kind: TaskKind::Supervised,
            language: chosen[0].language,
            prefix,
            metric: TaskMetric::SmoothedBleu4,
            dataset_path: in_path.clone(),
        };
        for sample in chosen {
            examples.push(make_supervised(sample, &spec, &vocab, max_len)?);
        }
    }
    write_shard(&out_path, &examples)?;
    manifest.record_output(&out_path)?;
    if let Some(mpath) = manifest_path(flags, Some(&out_path)) {
        manifest.save(&mpath)?;
    }
    Ok(())
}

/// One task block from a mixture config file.
#[derive(Debug, Clone)]
pub struct MixtureEntry {
    pub name: String,
    pub shard: PathBuf,
    pub valid_shard: Option<PathBuf>,
    pub kind: TaskKind,
    pub metric: TaskMetric,
    pub prefix: String,
    pub language: Language,
}

/// Parse a mixture config: `name = shard` lines plus optional dotted
/// keys `name.valid`, `name.kind`, `name.metric`, `name.language`.
pub fn parse_mixture_config(path: &Path) -> Result<Vec<MixtureEntry>, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut order: Vec<String> = Vec::new();
    let mut shards: HashMap<String, String> = HashMap::new();
    let mut extras: HashMap<(String, String), String> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected key = value",
                path.display(),
                lineno + 1
            ))
        })?;
        let key = key.trim();
        let value = value.trim().to_string();
        match key.split_once('.') {
            Some((name, attr)) => {
                extras.insert((name.to_string(), attr.to_string()), value);
            }
            None => {
                if shards.insert(key.to_string(), value).is_some() {
                    return Err(CliError::Usage(format!(
                        "{}: duplicate task {key:?}",
                        path.display()
                    )));
                }
                order.push(key.to_string());
            }
        }
    }
    let mut entries = Vec::with_capacity(order.len());
    for name in order {
        let attr = |a: &str| extras.get(&(name.clone(), a.to_string())).cloned();
        let kind = match attr("kind").as_deref() {
            None | Some("supervised") => TaskKind::Supervised,
            Some("self_supervised") => TaskKind::SelfSupervised,
            Some(other) => {
                return Err(CliError::Usage(format!("task {name:?}: bad kind {other:?}")))
            }
        };
        let metric = match attr("metric").as_deref() {
            None | Some("smoothed_bleu4") | Some("smoothed-bleu4") => TaskMetric::SmoothedBleu4,
            Some("bleu4") => TaskMetric::Bleu4,
            Some("exact_match") | Some("exact") => TaskMetric::ExactMatch,
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "task {name:?}: bad metric {other:?}"
                )))
            }
        };
        let language = match attr("language") {
            None => Language::English,
            Some(tag) => Language::parse(&tag).ok_or_else(|| {
                CliError::Usage(format!("task {name:?}: bad language {tag:?}"))
            })?,
        };
        let prefix = attr("prefix").unwrap_or_else(|| match kind {
            TaskKind::Supervised => format!("{name}: "),
            TaskKind::SelfSupervised => String::new(),
        });
        entries.push(MixtureEntry {
            shard: PathBuf::from(shards[&name].clone()),
            valid_shard: attr("valid").map(PathBuf::from),
            name,
            kind,
            metric,
            prefix,
            language,
        });
    }
    Ok(entries)
}

fn cmd_mix_inspect(flags: &BTreeMap<String, String>) -> Result<(), CliError> {
    let mixture_path = flag_path(flags, "mixture");
    let mut manifest = manifest_for("mix inspect", flags);
    manifest.record_input(&mixture_path)?;
    let entries = parse_mixture_config(&mixture_path)?;
    let mut sizes = Vec::with_capacity(entries.len());
    for entry in &entries {
        manifest.record_input(&entry.shard)?;
        sizes.push(read_shard(&entry.shard)?.len());
    }
    let total: usize = sizes.iter().sum();
    let mut report = serde_json::Map::new();
    for (entry, size) in entries.iter().zip(&sizes) {
        report.insert(
            entry.name.clone(),
            serde_json::json!({
                "size": size,
                "rate": *size as f64 / total as f64,
                "kind": match entry.kind {
                    TaskKind::Supervised => "supervised",
                    TaskKind::SelfSupervised => "self_supervised",
                },
            }),
        );
    }
    let json = serde_json::to_string_pretty(&serde_json::Value::Object(report))
        .expect("report serializes");
    println!("{json}");
    if let Some(out) = optional_path(flags, "out") {
        write_text(&out, &json)?;
        manifest.record_output(&out)?;
        if let Some(mpath) = manifest_path(flags, Some(&out)) {
            manifest.save(&mpath)?;
        }
    } else if let Some(mpath) = manifest_path(flags, None) {
        manifest.save(&mpath)?;
    }
    Ok(())
}

fn load_task_data(entry: &MixtureEntry) -> Result<TaskData, CliError> {
    let train = read_shard(&entry.shard)?;
    let valid = match &entry.valid_shard {
        Some(path) => read_shard(path)?,
        None => Vec::new(),
    };
    Ok(TaskData {
        spec: TaskSpec {
            name: entry.name.clone(),
            kind: entry.kind,
            language: entry.language,
            prefix: entry.prefix.clone(),
            metric: entry.metric,
            dataset_path: entry.shard.clone(),
        },
        train,
        valid,
    })
}

fn cmd_train(flags: &BTreeMap<String, String>) -> Result<(), CliError> {
    let strategy_name = flags.get("strategy").expect("required");
    let strategy = Strategy::parse(strategy_name)
        .ok_or_else(|| CliError::Usage(format!("unknown strategy {strategy_name:?}")))?;
    let mixture_path = flag_path(flags, "mixture");
    let vocab_path = flag_path(flags, "vocab");
    let out_dir = flag_path(flags, "out");
    fs::create_dir_all(&out_dir).map_err(|source| CliError::Io {
        path: out_dir.clone(),
        source,
    })?;

    let mut manifest = manifest_for("train", flags);
    manifest.record_input(&mixture_path)?;
    manifest.record_input(&vocab_path)?;

    let vocab = Vocabulary::load(&vocab_path)?;
    let entries = parse_mixture_config(&mixture_path)?;
    let mut supervised = Vec::new();
    let mut self_supervised = Vec::new();
    for entry in &entries {
        manifest.record_input(&entry.shard)?;
        if let Some(valid) = &entry.valid_shard {
            manifest.record_input(valid)?;
        }
        let data = load_task_data(entry)?;
        match entry.kind {
            TaskKind::Supervised => supervised.push(data),
            TaskKind::SelfSupervised => self_supervised.push(data),
        }
    }

    let model_name = flags.get("model").expect("required");
    let model_cfg = ModelConfig::by_name(model_name, vocab.size() as usize)
        .ok_or_else(|| CliError::Usage(format!("unknown model {model_name:?}")))?;

    let steps: u64 = parse_flag(flags, "steps")?;
    let batch: usize = parse_flag(flags, "batch")?;
    let micro: usize = parse_flag(flags, "micro-batch")?;
    let lr: f64 = parse_flag(flags, "lr")?;
    let warmup: u64 = parse_flag(flags, "warmup")?;
    let checkpoint_every: u64 = parse_flag::<u64>(flags, "checkpoint-every")?.min(steps.max(1));
    let eval_every: u64 = parse_flag(flags, "eval-every")?;
    let task_cfg = TrainConfig {
        batch_size: batch,
        micro_batch: if micro == 0 { batch } else { micro },
        total_steps: steps,
        checkpoint_every,
        eval_every: if eval_every == 0 {
            checkpoint_every
        } else {
            eval_every
        },
        early_stop_patience: parse_flag(flags, "patience")?,
        lr: LrSchedule::Constant { value: lr },
        adam: AdamConfig::default(),
        label_smoothing: parse_flag(flags, "label-smoothing")?,
        seed: parse_flag(flags, "seed")?,
        max_decode_len: parse_flag(flags, "max-decode")?,
    };
    let pretrain_steps: u64 = parse_flag(flags, "pretrain-steps")?;
    let pretrain_batch: usize = parse_flag(flags, "pretrain-batch")?;
    let pretrain_cfg = TrainConfig {
        batch_size: if pretrain_batch == 0 {
            batch
        } else {
            pretrain_batch
        },
        micro_batch: if micro == 0 {
            if pretrain_batch == 0 {
                batch
            } else {
                pretrain_batch
            }
        } else {
            micro
        },
        total_steps: if pretrain_steps == 0 {
            steps
        } else {
            pretrain_steps
        },
        checkpoint_every: checkpoint_every
            .min(if pretrain_steps == 0 { steps } else { pretrain_steps }.max(1)),
        lr: if warmup > 0 {
            LrSchedule::InverseSqrt {
                peak: lr,
                warmup_steps: warmup,
            }
        } else {
            LrSchedule::Constant { value: lr }
        },
        ..task_cfg.clone()
    };

    let artifacts = strategy_driver(
        strategy,
        &supervised,
        &self_supervised,
        &task_cfg,
        &pretrain_cfg,
        &model_cfg,
        &vocab,
        &out_dir,
    )?;

    let mut outputs: Vec<PathBuf> = Vec::new();
    if let Some(log) = &artifacts.pretrain {
        log.write_files(&out_dir)?;
        outputs.push(out_dir.join(format!("{}.losses.jsonl", log.label)));
        outputs.push(out_dir.join(format!("{}.metrics.json", log.label)));
        outputs.push(log.final_checkpoint.clone());
    }
    if let Some(log) = &artifacts.multi_task {
        log.write_files(&out_dir)?;
        outputs.push(out_dir.join(format!("{}.losses.jsonl", log.label)));
        outputs.push(out_dir.join(format!("{}.metrics.json", log.label)));
        outputs.push(log.final_checkpoint.clone());
    }
    for log in artifacts.per_task.values() {
        log.write_files(&out_dir)?;
        outputs.push(out_dir.join(format!("{}.losses.jsonl", log.label)));
        outputs.push(out_dir.join(format!("{}.metrics.json", log.label)));
        outputs.push(log.final_checkpoint.clone());
    }
    for path in &outputs {
        manifest.record_output(path)?;
    }
    if let Some(mpath) = manifest_path(flags, Some(&out_dir)) {
        manifest.save(&mpath)?;
    }
    Ok(())
}

fn cmd_generate(flags: &BTreeMap<String, String>) -> Result<(), CliError> {
    let checkpoint_path = flag_path(flags, "checkpoint");
    let vocab_path = flag_path(flags, "vocab");
    let in_path = flag_path(flags, "in");
    let out_path = flag_path(flags, "out");
    let split = split_parse(flags.get("split").expect("defaulted"))?;
    let prefix = flags.get("prefix").expect("defaulted").clone();
    let max_out: usize = parse_flag(flags, "max-out")?;

    let mut manifest = manifest_for("generate", flags);
    manifest.record_input(&checkpoint_path)?;
    manifest.record_input(&vocab_path)?;
    manifest.record_input(&in_path)?;

    let (model_cfg, params) = load_checkpoint(&checkpoint_path)?;
    let vocab = Vocabulary::load(&vocab_path)?;
    let samples = read_corpus(&in_path)?;
    let mut out = String::new();
    for sample in samples.iter().filter(|s| s.split == split) {
        let mut ids = vocab.encode(&format!("{prefix}{}", sample.source));
        ids.truncate(model_cfg.max_len);
        let hyp_ids = greedy_decode(&params, &model_cfg, &ids, max_out)?;
        out.push_str(&vocab.decode(&hyp_ids)?);
        out.push('\n');
    }
    write_text(&out_path, &out)?;
    manifest.record_output(&out_path)?;
    if let Some(mpath) = manifest_path(flags, Some(&out_path)) {
        manifest.save(&mpath)?;
    }
    Ok(())
}

fn cmd_eval(flags: &BTreeMap<String, String>) -> Result<(), CliError> {
    let metric = flags.get("metric").expect("required").as_str();
    let hyp_path = flag_path(flags, "hyp");
    let ref_path = flag_path(flags, "ref");
    let mut manifest = manifest_for("eval", flags);
    manifest.record_input(&hyp_path)?;
    manifest.record_input(&ref_path)?;

    let hyps = read_lines(&hyp_path)?;
    let mut ref_sets = vec![read_lines(&ref_path)?];
    for key in ["ref2", "ref3"] {
        if let Some(path) = optional_path(flags, key) {
            manifest.record_input(&path)?;
            ref_sets.push(read_lines(&path)?);
        }
    }
    for refs in &ref_sets {
        if refs.len() != hyps.len() {
            return Err(CliError::Usage(format!(
                "reference file has {} lines, hypotheses {}",
                refs.len(),
                hyps.len()
            )));
        }
    }
    let pairs: Vec<EvalPair> = hyps
        .iter()
        .enumerate()
        .map(|(i, hyp)| {
            let refs: Vec<&str> = ref_sets.iter().map(|r| r[i].as_str()).collect();
            EvalPair::from_text(hyp, &refs)
        })
        .collect();
    let report = match metric {
        "smoothed-bleu4" | "smoothed_bleu4" => smoothed_bleu4(&pairs),
        "bleu4" => corpus_bleu4(&pairs),
        "rouge-l" | "rouge_l" => rouge_l(&pairs),
        "exact" | "exact_match" => exact_match(&pairs)?,
        other => return Err(CliError::Usage(format!("unknown metric {other:?}"))),
    };
    println!("{}", report.summary_json());
    if let Some(out) = optional_path(flags, "out") {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_text(&out, &json)?;
        manifest.record_output(&out)?;
        if let Some(mpath) = manifest_path(flags, Some(&out)) {
            manifest.save(&mpath)?;
        }
    } else if let Some(mpath) = manifest_path(flags, None) {
        manifest.save(&mpath)?;
    }
    Ok(())
}

fn cmd_stats(flags: &BTreeMap<String, String>) -> Result<(), CliError> {
    let in_path = flag_path(flags, "in");
    let mut manifest = manifest_for("stats", flags);
    manifest.record_input(&in_path)?;
    let samples = read_corpus(&in_path)?;
    let stats = corpus_stats(&samples);
    let json = serde_json::to_string_pretty(&stats).expect("stats serialize");
    println!("{json}");
    if let Some(out) = optional_path(flags, "out") {
        write_text(&out, &json)?;
        manifest.record_output(&out)?;
        if let Some(mpath) = manifest_path(flags, Some(&out)) {
            manifest.save(&mpath)?;
        }
    } else if let Some(mpath) = manifest_path(flags, None) {
        manifest.save(&mpath)?;
    }
    Ok(())
}
