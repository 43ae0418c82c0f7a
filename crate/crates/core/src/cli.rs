//! The `sentipipe` command line: train, eval, predict, stats and bench.
//!
//! Exit codes: 0 on success, 1 on runtime or I/O failure, 2 on usage or input
//! errors (bad flags, unknown labels, scheme mismatches, malformed reports).
//! In `--json` modes stdout carries only JSON; everything else goes to stderr.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::analyzer::{Analyzer, AnalyzerError};
use crate::corpus::{dataset_stats, load_dataset, CorpusError, Dataset, Language, Split};
use crate::eval::{evaluate, render_benchmark, EvalReport, Task};
use crate::model::{init_model, EncoderKind, ModelConfig};
use crate::textproc::{normalize_tweet, train_bpe, NormalizeOptions, TextPipeline};
use crate::train::{compute_class_weights, train_with_callback, ClassWeighting, TrainConfig, TrainError};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "SENTIPIPE_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or bad input data; exit code 2.
    #[error("{0}")]
    Input(String),
    /// I/O or other runtime failure; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::MissingFile(_) | CorpusError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<AnalyzerError> for CliError {
    fn from(e: AnalyzerError) -> Self {
        match e {
            AnalyzerError::TaskMismatch { .. } | AnalyzerError::LanguageMismatch { .. } => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "sentipipe", version, about = "Sentiment and emotion analysis for tweets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a tokenizer and classifier, then write a model file.
    Train(TrainArgs),
    /// Score a model on a labeled file.
    Eval(EvalArgs),
    /// Print one JSON prediction per input text.
    Predict(PredictArgs),
    /// Show label counts of a dataset file.
    Stats(StatsArgs),
    /// Render a markdown results table from a directory of JSON reports.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Sentiment,
    Emotion,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Sentiment => Task::Sentiment,
            TaskArg::Emotion => Task::Emotion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LangArg {
    Es,
    En,
}

impl From<LangArg> for Language {
    fn from(l: LangArg) -> Language {
        match l {
            LangArg::Es => Language::Es,
            LangArg::En => Language::En,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    None,
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderArg {
    Transformer,
    LinearBow,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, value_enum)]
    pub lang: LangArg,
    #[arg(long)]
    pub train: PathBuf,
    /// Labeled file scored after every epoch.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    /// Peak learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub warmup: f64,
    /// Upper bound on the tokenizer vocabulary, reserved symbols included.
    #[arg(long, default_value_t = 4000)]
    pub vocab_size: usize,
    /// Defaults to balanced for emotion and none for sentiment.
    #[arg(long, value_enum)]
    pub weighting: Option<WeightingArg>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = EncoderArg::Transformer)]
    pub encoder: EncoderArg,
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 128)]
    pub ffn_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long)]
    pub lowercase: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Fail unless the model was trained for this task.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Model name recorded in the report; defaults to the model file stem.
    #[arg(long)]
    pub name: Option<String>,
    /// Write the report as JSON to stdout.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required_unless_present = "stdin", conflicts_with = "stdin")]
    pub text: Option<String>,
    /// Read one text per line from standard input.
    #[arg(long)]
    pub stdin: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, value_enum)]
    pub lang: LangArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub reports: PathBuf,
    /// Output markdown file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Stats(a) => cmd_stats(&a),
        Command::Bench(a) => cmd_bench(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // A pool may already exist when called twice in one process; the first cap wins.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn write_stdout(text: &str) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let task: Task = a.task.into();
    let language: Language = a.lang.into();
    let weighting = match a.weighting {
        Some(WeightingArg::None) => ClassWeighting::None,
        Some(WeightingArg::Balanced) => ClassWeighting::Balanced,
        None if task == Task::Emotion => ClassWeighting::Balanced,
        None => ClassWeighting::None,
    };
    let tc = TrainConfig {
        peak_lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        warmup_fraction: a.warmup,
        class_weighting: weighting,
        seed: a.seed,
        ..TrainConfig::default()
    };
    tc.validate().map_err(|e| CliError::Input(e.to_string()))?;

    let train_ds = load_dataset(&a.train, task.scheme(), language, Split::Train)?;
    let heldout = a
        .heldout
        .as_ref()
        .map(|p| load_dataset(p, task.scheme(), language, Split::Test))
        .transpose()?;
    if train_ds.is_empty() {
        return Err(CliError::Input(format!("{} has no examples", a.train.display())));
    }

    let normalize = NormalizeOptions {
        lowercase: a.lowercase,
        ..NormalizeOptions::default()
    };
    let normalized: Vec<String> = train_ds.texts().map(|t| normalize_tweet(t, &normalize)).collect();
    let tokenizer = train_bpe(&normalized, a.vocab_size).map_err(|e| CliError::Input(e.to_string()))?;
    let config = ModelConfig {
        encoder: match a.encoder {
            EncoderArg::Transformer => EncoderKind::Transformer,
            EncoderArg::LinearBow => EncoderKind::LinearBow,
        },
        vocab_size: tokenizer.vocab_size(),
        num_classes: task.scheme().num_classes(),
        embed_dim: a.embed_dim,
        num_heads: a.heads,
        num_layers: a.layers,
        ffn_dim: a.ffn_dim,
        max_len: a.max_len,
        dropout_rate: a.dropout,
    };
    let init = init_model(&config, a.seed).map_err(|e| CliError::Input(e.to_string()))?;
    let pipeline = TextPipeline::new(normalize, tokenizer);

    eprintln!(
        "train task={task} lang={language} encoder={} examples={} vocab_size={} params={} \
         epochs={} lr={} batch_size={} warmup={} weighting={} seed={}",
        encoder_name(config.encoder),
        train_ds.len(),
        config.vocab_size,
        config.num_parameters(),
        tc.epochs,
        tc.peak_lr,
        tc.batch_size,
        tc.warmup_fraction,
        weighting,
        tc.seed
    );
    if weighting == ClassWeighting::Balanced {
        let weights = compute_class_weights(&dataset_stats(&train_ds), weighting)
            .map_err(|e| CliError::Input(e.to_string()))?;
        let shown: Vec<String> = task
            .scheme()
            .labels()
            .iter()
            .zip(&weights.0)
            .map(|(l, w)| format!("{l}={w:.4}"))
            .collect();
        eprintln!("class weights: {}", shown.join(" "));
    }

    let (params, _) = train_with_callback(&config, &init, &train_ds, &pipeline, &tc, heldout.as_ref(), |r| {
        let line = serde_json::to_string(r).expect("record serializes");
        let _ = write_stdout(&(line + "\n"));
    })
    .map_err(|e| match e {
        TrainError::Model(_) | TrainError::InvalidConfig(_) | TrainError::SchemeMismatch { .. } => {
            CliError::Input(e.to_string())
        }
        _ => CliError::Runtime(e.to_string()),
    })?;

    let analyzer = Analyzer::new(task, language, pipeline, config, params)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    analyzer.save(&a.out)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn encoder_name(kind: EncoderKind) -> &'static str {
    match kind {
        EncoderKind::Transformer => "transformer",
        EncoderKind::LinearBow => "linear-bow",
    }
}

fn load_for_eval(model: &Path, data: &Path) -> Result<(Analyzer, Dataset), CliError> {
    let analyzer = Analyzer::load(model)?;
    let ds = load_dataset(data, analyzer.task().scheme(), analyzer.language(), Split::Test).map_err(|e| match e {
        CorpusError::UnknownLabel { .. } => CliError::Input(format!(
            "{e}; the model expects {} labels ({})",
            analyzer.task(),
            analyzer.labels().join(", ")
        )),
        other => other.into(),
    })?;
    Ok((analyzer, ds))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let (analyzer, ds) = load_for_eval(&a.model, &a.data)?;
    if let Some(task) = a.task {
        let task: Task = task.into();
        if task != analyzer.task() {
            return Err(CliError::Input(format!(
                "model was trained for {}, requested {task}",
                analyzer.task()
            )));
        }
    }
    if ds.is_empty() {
        return Err(CliError::Input(format!("{} has no examples", a.data.display())));
    }
    let name = a.name.clone().unwrap_or_else(|| {
        a.model
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".to_string())
    });
    let report = evaluate(&analyzer, &ds, &name).map_err(|e| CliError::Input(e.to_string()))?;
    if a.json {
        eprint!("{}", report.render_text());
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_stdout(&(json + "\n"))
    } else {
        write_stdout(&report.render_text())
    }
}

pub fn cmd_predict(a: &PredictArgs) -> Result<(), CliError> {
    let analyzer = Analyzer::load(&a.model)?;
    let texts: Vec<String> = match &a.text {
        Some(t) => vec![t.clone()],
        None => io::stdin().lock().lines().collect::<Result<_, _>>()?,
    };
    let mut out = String::new();
    for p in analyzer.predict_batch(&texts) {
        out.push_str(&p.to_json());
        out.push('\n');
    }
    write_stdout(&out)
}

pub fn cmd_stats(a: &StatsArgs) -> Result<(), CliError> {
    let task: Task = a.task.into();
    let ds = load_dataset(&a.data, task.scheme(), a.lang.into(), Split::Other)?;
    let stats = dataset_stats(&ds);
    if a.json {
        eprint!("{stats}");
        write_stdout(&(stats.to_json() + "\n"))
    } else {
        write_stdout(&stats.to_string())
    }
}

/// Reads every `*.json` report in `dir` (sorted by file name) and renders the
/// benchmark table.
pub fn bench_table(dir: &Path) -> Result<String, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();

    let mut reports = Vec::with_capacity(paths.len());
    for path in &paths {
        let content = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let report: EvalReport = serde_json::from_str(&content)
            .map_err(|e| CliError::Input(format!("malformed report {}: {e}", path.display())))?;
        report
            .validate()
            .map_err(|e| CliError::Input(format!("malformed report {}: {e}", path.display())))?;
        reports.push(report);
    }
    Ok(render_benchmark(&reports))
}

pub fn cmd_bench(a: &BenchArgs) -> Result<(), CliError> {
    let table = bench_table(&a.reports)?;
    match &a.out {
        Some(path) => {
            fs::write(path, &table).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => write_stdout(&table),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parser_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn train_defaults() {
        let cli = Cli::try_parse_from([
            "sentipipe", "train", "--task", "emotion", "--lang", "es", "--train", "t.tsv", "--out", "m.sntp",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else { panic!("expected train") };
        assert_eq!(a.epochs, 5);
        assert_eq!(a.seed, 42);
        assert_eq!(a.batch_size, 32);
        assert_eq!(a.lr, TrainConfig::default().peak_lr);
        assert_eq!(a.warmup, TrainConfig::default().warmup_fraction);
        assert_eq!(a.weighting, None);
        assert_eq!(a.encoder, EncoderArg::Transformer);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["sentipipe", "train", "--task", "sentiment", "--lang", "en", "--out", "x"]), 2);
        assert_eq!(run(["sentipipe", "predict", "--model", "m"]), 2);
        assert_eq!(run(["sentipipe", "predict", "--model", "m", "--text", "a", "--stdin"]), 2);
        assert_eq!(run(["sentipipe", "nonsense"]), 2);
    }

    #[test]
    fn missing_model_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        let model = dir.path().join("absent.sntp");
        assert_eq!(
            run(["sentipipe".as_ref(), "predict".as_ref(), "--model".as_ref(), model.as_os_str(), "--text".as_ref(), "hi".as_ref()]),
            1
        );
    }
}
