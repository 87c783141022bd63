//! `qaforge` command line: one subcommand per pipeline step.
//!
//! Machine-readable results go to stdout (or `--out`) as JSON, human
//! summaries go to stderr, and every run leaves a manifest next to its
//! output. Exit codes: 0 success, 2 configuration error, 3 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use qaforge::dataset::{self, DatasetError, DatasetSource, SquadDataset};
use qaforge::filter::{self, Document, FilterConfig, FilterError, Stage};
use qaforge::gateway::{load_endpoints, Capability, EndpointConfig, Gateway, GatewayError};
use qaforge::io::{self as qio, IoError};
use qaforge::metrics::{self, MetricsError, Predictions};
use qaforge::pipeline::{self, PipelineConfig, PipelineError};
use qaforge::service::{self, ServiceConfig, ServiceError};
use qaforge::train::{self, SmoteParams, TrainError};

#[derive(Debug, Parser)]
#[command(name = "qaforge", version, about = "Synthetic extractive-QA dataset tooling")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "QAFORGE_JOBS")]
    jobs: Option<usize>,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true, env = "QAFORGE_MANIFEST")]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter a JSON Lines corpus of `{id, text}` documents.
    Filter(FilterArgs),
    /// Generate a SQuAD 2.0 file of synthetic QA pairs from a corpus.
    Generate(GenerateArgs),
    /// Round-trip consistency of a generated dataset under a QA model.
    Roundtrip(RoundtripArgs),
    /// Score QA predictions with SQuAD 2.0 exact match and F1.
    Evaluate(EvaluateArgs),
    /// Pick the null-answer threshold that maximizes overall F1.
    TuneThreshold(TuneArgs),
    /// Concatenate two SQuAD files, optionally marking each question's source.
    Merge(MergeArgs),
    /// Split a SQuAD file by document into train and test sets.
    Split(SplitArgs),
    /// Answerable and unanswerable question counts.
    Stats(StatsArgs),
    /// Oversample the minority label of a feature file with SMOTE.
    Smote(SmoteArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct FilterOpts {
    /// Stage to turn off: length, regex, pos, grammar, or all. Repeatable.
    #[arg(long = "disable", value_name = "STAGE")]
    disable: Vec<String>,
    /// JSON rule table replacing the built-in rules.
    #[arg(long, env = "QAFORGE_RULES")]
    rules: Option<PathBuf>,
    /// Minimum whitespace tokens per document.
    #[arg(long)]
    min_tokens: Option<usize>,
}

impl FilterOpts {
    fn config(&self) -> Result<FilterConfig, CliError> {
        let mut cfg = FilterConfig::default();
        for name in &self.disable {
            if name == "all" {
                cfg = FilterConfig {
                    min_tokens: cfg.min_tokens,
                    rules: cfg.rules,
                    ..FilterConfig::disabled()
                };
            } else {
                cfg.disable(name.parse::<Stage>().map_err(CliError::Config)?);
            }
        }
        if let Some(path) = &self.rules {
            cfg.rules = filter::load_rules(path).map_err(config)?;
        }
        if let Some(n) = self.min_tokens {
            cfg.min_tokens = n;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct EndpointOpts {
    /// Endpoint configuration file (JSON list of endpoints).
    #[arg(long, env = "QAFORGE_ENDPOINTS", conflicts_with = "stubs")]
    endpoints: Option<PathBuf>,
    /// Use the built-in deterministic stubs for every capability.
    #[arg(long)]
    stubs: bool,
}

impl EndpointOpts {
    fn gateway(&self) -> Result<(Gateway, Value), CliError> {
        match &self.endpoints {
            Some(path) => {
                let eps = load_endpoints(path).map_err(config)?;
                let gw = Gateway::from_endpoints(&eps, None).map_err(config)?;
                Ok((gw, serde_json::to_value(&eps).expect("endpoints serialize")))
            }
            None => Ok((Gateway::stubbed(), json!("stubs"))),
        }
    }
}

#[derive(Debug, Args)]
struct FilterArgs {
    /// Input corpus (JSON Lines).
    corpus: PathBuf,
    /// Kept documents (JSON Lines).
    #[arg(long, short)]
    out: PathBuf,
    /// Per-document report (JSON Lines).
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    filter: FilterOpts,
    #[command(flatten)]
    endpoints: EndpointOpts,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    corpus: PathBuf,
    /// SQuAD 2.0 output file.
    #[arg(long, short)]
    out: PathBuf,
    /// Also write every generated pair with provenance (JSON Lines).
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[command(flatten)]
    filter: FilterOpts,
    #[command(flatten)]
    endpoints: EndpointOpts,
    /// Minimum P(grammatical) for questions and answers.
    #[arg(long)]
    grammaticality_threshold: Option<f64>,
    #[arg(long)]
    max_candidates_per_sentence: Option<usize>,
    /// Keep duplicate (question, answer, context) triples.
    #[arg(long)]
    no_dedup: bool,
    /// Treat each document as one sentence.
    #[arg(long)]
    no_sentence_split: bool,
}

#[derive(Debug, Args)]
struct RoundtripArgs {
    dataset: PathBuf,
    /// Base URL of a QA inference service.
    #[arg(long, env = "QAFORGE_QA_ENDPOINT", conflicts_with = "stub")]
    qa_endpoint: Option<String>,
    /// QA stub: oracle, refuser, corrupting, or corrupting:N.
    #[arg(long)]
    stub: Option<String>,
    /// Score JSON (default: stdout).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Per-item results (JSON Lines).
    #[arg(long)]
    items: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    dataset: PathBuf,
    /// JSON object mapping question id to a prediction.
    predictions: PathBuf,
    /// Predictions whose null score exceeds this become the empty answer.
    #[arg(long)]
    null_threshold: Option<f64>,
    /// Write the F1-versus-threshold sweep as CSV.
    #[arg(long)]
    sweep_csv: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TuneArgs {
    dataset: PathBuf,
    predictions: PathBuf,
    #[arg(long)]
    sweep_csv: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MergeArgs {
    /// First input; its questions are marked as SQuAD data.
    a: PathBuf,
    /// Second input; its questions are marked as synthetic data.
    b: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Append " [SQuAD]" / " [SYFTER]" to every question by file role.
    #[arg(long)]
    source_markers: bool,
}

#[derive(Debug, Args)]
struct SplitArgs {
    dataset: PathBuf,
    /// Target share of questions in the test set.
    #[arg(long)]
    fraction: f64,
    #[arg(long, default_value_t = 0, env = "QAFORGE_SEED")]
    seed: u64,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    dataset: PathBuf,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SmoteArgs {
    /// JSON Lines of `{"vector": [..], "label": bool}`.
    vectors: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0, env = "QAFORGE_SEED")]
    seed: u64,
    /// Balanced rows (JSON Lines), originals first.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// JSON service configuration; `QAFORGE_*` variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LabeledVector {
    vector: Vec<f64>,
    label: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    synthetic: bool,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

fn config(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        data(e)
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Split(_) => config(e),
            _ => data(e),
        }
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Tagger { .. } => data(e),
            _ => config(e),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::DuplicateDocument(_) => data(e),
            _ => config(e),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        config(e)
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        data(e)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        data(e)
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Config(_) => config(e),
            _ => data(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FileDigest {
    path: PathBuf,
    sha256: Option<String>,
}

impl FileDigest {
    fn of(path: &Path) -> Self {
        Self {
            path: path.to_path_buf(),
            sha256: std::fs::read(path).ok().map(|b| hex::encode(Sha256::digest(b))),
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunManifest {
    tool: String,
    version: String,
    command: String,
    argv: Vec<String>,
    config: Value,
    seed: Option<u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    counts: Value,
    started_at: DateTime<Utc>,
    wall_clock_ms: u128,
    exit_code: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// What a subcommand reports back for the manifest.
#[derive(Debug, Default)]
struct RunRecord {
    config: Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    counts: Value,
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => qio::write_json(path, value)?,
        None => print!("{}", qio::canonical_json(value)),
    }
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Predictions, CliError> {
    Ok(qio::read_json(path)?)
}

fn cmd_filter(a: &FilterArgs, jobs: usize) -> Result<RunRecord, CliError> {
    let cfg = a.filter.config()?;
    let (gateway, endpoints) = a.endpoints.gateway()?;
    let docs: Vec<Document> = qio::read_jsonl(&a.corpus)?;
    let pool = thread_pool(jobs)?;
    let tagger = cfg.enable_pos.then_some(&gateway as &dyn qaforge::gateway::PosTagger);
    let outcome = pool.install(|| filter::filter_corpus(&docs, &cfg, tagger))?;
    qio::write_jsonl(&a.out, &outcome.kept)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.report {
        qio::write_jsonl(path, &outcome.reports)?;
        outputs.push(path.clone());
    }
    let rejections = outcome.rejections_by_rule();
    eprintln!("kept {}/{} documents", outcome.kept.len(), docs.len());
    for (rule, n) in &rejections {
        eprintln!("  {rule:<28} {n:>6}");
    }
    Ok(RunRecord {
        config: json!({ "filter": cfg, "endpoints": endpoints }),
        inputs: vec![a.corpus.clone()],
        outputs,
        counts: json!({
            "docs_in": docs.len(),
            "docs_kept": outcome.kept.len(),
            "rejections": rejections,
            "errors": outcome.error_count(),
        }),
        ..Default::default()
    })
}

fn cmd_generate(a: &GenerateArgs, jobs: usize) -> Result<RunRecord, CliError> {
    let filter = a.filter.config()?;
    let (gateway, endpoints) = a.endpoints.gateway()?;
    let mut cfg = PipelineConfig {
        enable_grammaticality: filter.enable_grammaticality,
        filter,
        dedup: !a.no_dedup,
        split_sentences: !a.no_sentence_split,
        max_candidates_per_sentence: a.max_candidates_per_sentence,
        jobs,
        ..PipelineConfig::default()
    };
    if let Some(t) = a.grammaticality_threshold {
        cfg.grammaticality_threshold = t;
    }
    cfg.validate()?;
    let docs: Vec<Document> = qio::read_jsonl(&a.corpus)?;
    let (ds, pairs, report) = pipeline::run_pipeline(&docs, &gateway, &cfg)?;
    dataset::write_squad(&ds, &a.out)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.pairs {
        qio::write_jsonl(path, &pairs)?;
        outputs.push(path.clone());
    }
    let [c, e, q, g, p] = report.counts.funnel();
    eprintln!("documents {} -> {} kept, {} sentences", report.docs_in, report.docs_kept, report.counts.sentences);
    eprintln!("candidates {c}  extractive {e}  questions {q}  grammatical {g}  pairs {p}");
    let mut cfg_json = serde_json::to_value(&cfg).expect("config serializes");
    cfg_json["jobs"] = json!(null);
    Ok(RunRecord {
        config: json!({ "pipeline": cfg_json, "endpoints": endpoints }),
        inputs: vec![a.corpus.clone()],
        outputs,
        counts: serde_json::to_value(&report).expect("report serializes"),
        ..Default::default()
    })
}

fn cmd_roundtrip(a: &RoundtripArgs, jobs: usize) -> Result<RunRecord, CliError> {
    let ds = dataset::read_squad(&a.dataset)?;
    let endpoint = match (&a.qa_endpoint, &a.stub) {
        (Some(url), _) => EndpointConfig::new(Capability::Qa, url.clone()),
        (None, Some(name)) => EndpointConfig::stub(Capability::Qa, name),
        (None, None) => return Err(CliError::Config("pass --qa-endpoint or --stub".into())),
    };
    let gateway = Gateway::from_endpoints(std::slice::from_ref(&endpoint), Some(&ds))?;
    let (score, items) = thread_pool(jobs)?.install(|| metrics::roundtrip_evaluate(&ds, &gateway));
    emit_json(&score, a.out.as_deref())?;
    let mut outputs: Vec<PathBuf> = a.out.iter().cloned().collect();
    if let Some(path) = &a.items {
        qio::write_jsonl(path, &items)?;
        outputs.push(path.clone());
    }
    eprintln!(
        "round trip over {} pairs: EM {:.2}%  similarity {:.2}%  ({} errors)",
        score.n, score.exact_match_pct, score.similarity_pct, score.errors
    );
    Ok(RunRecord {
        config: json!({ "qa": endpoint }),
        inputs: vec![a.dataset.clone()],
        outputs,
        counts: serde_json::to_value(&score).expect("score serializes"),
        ..Default::default()
    })
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<RunRecord, CliError> {
    let ds = dataset::read_squad(&a.dataset)?;
    let preds = read_predictions(&a.predictions)?;
    let score = metrics::evaluate_qa(&ds, &preds, a.null_threshold)?;
    emit_json(&score, a.out.as_deref())?;
    let mut outputs: Vec<PathBuf> = a.out.iter().cloned().collect();
    if let Some(path) = &a.sweep_csv {
        write_sweep(&ds, &preds, path)?;
        outputs.push(path.clone());
    }
    eprintln!(
        "{} questions: EM {:.2}  F1 {:.2}",
        score.n_total, score.em, score.f1
    );
    Ok(RunRecord {
        config: json!({ "null_threshold": a.null_threshold }),
        inputs: vec![a.dataset.clone(), a.predictions.clone()],
        outputs,
        counts: serde_json::to_value(&score).expect("score serializes"),
        ..Default::default()
    })
}

fn write_sweep(ds: &SquadDataset, preds: &Predictions, path: &Path) -> Result<train::ThresholdTuneResult, CliError> {
    let result = train::tune_null_threshold(ds, preds)?;
    let mut buf = Vec::new();
    train::write_sweep_csv(&result, &mut buf)?;
    qio::write_atomic(path, &buf)?;
    Ok(result)
}

fn cmd_tune(a: &TuneArgs) -> Result<RunRecord, CliError> {
    let ds = dataset::read_squad(&a.dataset)?;
    let preds = read_predictions(&a.predictions)?;
    let result = match &a.sweep_csv {
        Some(path) => write_sweep(&ds, &preds, path)?,
        None => train::tune_null_threshold(&ds, &preds)?,
    };
    emit_json(&result, a.out.as_deref())?;
    eprintln!(
        "best threshold {} (F1 {:.4}) over {} candidates",
        result.best_threshold,
        result.best_overall_f1,
        result.sweep.len()
    );
    let outputs = a.out.iter().chain(&a.sweep_csv).cloned().collect();
    Ok(RunRecord {
        inputs: vec![a.dataset.clone(), a.predictions.clone()],
        outputs,
        counts: json!({
            "best_threshold": result.best_threshold,
            "best_overall_f1": result.best_overall_f1,
            "candidates": result.sweep.len(),
        }),
        ..Default::default()
    })
}

fn cmd_merge(a: &MergeArgs) -> Result<RunRecord, CliError> {
    let mut first = dataset::read_squad(&a.a)?;
    let mut second = dataset::read_squad(&a.b)?;
    if a.source_markers {
        first = dataset::mark_dataset(&first, DatasetSource::Squad);
        second = dataset::mark_dataset(&second, DatasetSource::Syfter);
    }
    let (merged, report) = dataset::merge_datasets(&first, &second);
    dataset::write_squad(&merged, &a.out)?;
    eprintln!(
        "merged {} + {} questions ({} id collisions renamed)",
        first.qa_count(),
        second.qa_count(),
        report.collisions
    );
    Ok(RunRecord {
        config: json!({ "source_markers": a.source_markers }),
        inputs: vec![a.a.clone(), a.b.clone()],
        outputs: vec![a.out.clone()],
        counts: json!({
            "a": first.qa_count(),
            "b": second.qa_count(),
            "merged": merged.qa_count(),
            "collisions": report.collisions,
            "renamed": report.renamed,
        }),
        ..Default::default()
    })
}

fn cmd_split(a: &SplitArgs) -> Result<RunRecord, CliError> {
    let ds = dataset::read_squad(&a.dataset)?;
    let (train_ds, test_ds, report) = dataset::split_by_document(&ds, a.fraction, a.seed)?;
    dataset::write_squad(&train_ds, &a.train_out)?;
    dataset::write_squad(&test_ds, &a.test_out)?;
    eprintln!(
        "train {} questions / {} docs, test {} questions / {} docs",
        report.train_questions, report.train_documents, report.test_questions, report.test_documents
    );
    Ok(RunRecord {
        config: json!({ "fraction": a.fraction }),
        seed: Some(a.seed),
        inputs: vec![a.dataset.clone()],
        outputs: vec![a.train_out.clone(), a.test_out.clone()],
        counts: serde_json::to_value(&report).expect("report serializes"),
    })
}

fn cmd_stats(a: &StatsArgs) -> Result<RunRecord, CliError> {
    let ds = dataset::read_squad(&a.dataset)?;
    let stats = dataset::class_stats(&ds);
    emit_json(&stats, a.out.as_deref())?;
    eprintln!(
        "answerable {}  unanswerable {}  ({:.2}% unanswerable)",
        stats.answerable,
        stats.unanswerable,
        100.0 * stats.unanswerable_share
    );
    Ok(RunRecord {
        inputs: vec![a.dataset.clone()],
        outputs: a.out.iter().cloned().collect(),
        counts: serde_json::to_value(stats).expect("stats serialize"),
        ..Default::default()
    })
}

fn cmd_smote(a: &SmoteArgs) -> Result<RunRecord, CliError> {
    let rows: Vec<LabeledVector> = qio::read_jsonl(&a.vectors)?;
    let params = SmoteParams {
        k: a.k,
        seed: a.seed,
        ..SmoteParams::default()
    };
    let features: Vec<Vec<f64>> = rows.iter().map(|r| r.vector.clone()).collect();
    let labels: Vec<bool> = rows.iter().map(|r| r.label).collect();
    let balanced = train::balance_classes(&features, &labels, &params)?;
    let out: Vec<LabeledVector> = balanced
        .features
        .iter()
        .zip(&balanced.labels)
        .enumerate()
        .map(|(i, (v, &label))| LabeledVector {
            vector: v.clone(),
            label,
            synthetic: i >= rows.len(),
        })
        .collect();
    qio::write_jsonl(&a.out, &out)?;
    eprintln!(
        "{} rows in, {} synthetic {} rows added",
        rows.len(),
        balanced.synthetic,
        balanced.minority_label
    );
    Ok(RunRecord {
        config: json!({ "k": a.k }),
        seed: Some(a.seed),
        inputs: vec![a.vectors.clone()],
        outputs: vec![a.out.clone()],
        counts: json!({
            "rows_in": rows.len(),
            "synthetic": balanced.synthetic,
            "minority_label": balanced.minority_label,
            "rows_out": out.len(),
        }),
    })
}

fn cmd_serve(a: &ServeArgs) -> Result<RunRecord, CliError> {
    let cfg = ServiceConfig::load(a.config.as_deref())?;
    let runtime = tokio::runtime::Runtime::new().map_err(config)?;
    runtime.block_on(service::serve(&cfg))?;
    let mut shown = serde_json::to_value(&cfg).expect("config serializes");
    shown["admin_token"] = json!("<redacted>");
    Ok(RunRecord {
        config: shown,
        inputs: a.config.iter().cloned().collect(),
        outputs: vec![cfg.data_dir.join(service::EVENT_LOG_FILE)],
        ..Default::default()
    })
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(config)
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Filter(_) => "filter",
            Command::Generate(_) => "generate",
            Command::Roundtrip(_) => "roundtrip",
            Command::Evaluate(_) => "evaluate",
            Command::TuneThreshold(_) => "tune-threshold",
            Command::Merge(_) => "merge",
            Command::Split(_) => "split",
            Command::Stats(_) => "stats",
            Command::Smote(_) => "smote",
            Command::Serve(_) => "serve",
        }
    }

    /// The file the manifest is written next to, if the command has one.
    fn primary_output(&self) -> Option<&Path> {
        match self {
            Command::Filter(a) => Some(&a.out),
            Command::Generate(a) => Some(&a.out),
            Command::Roundtrip(a) => a.out.as_deref(),
            Command::Evaluate(a) => a.out.as_deref(),
            Command::TuneThreshold(a) => a.out.as_deref(),
            Command::Merge(a) => Some(&a.out),
            Command::Split(a) => Some(&a.test_out),
            Command::Stats(a) => a.out.as_deref(),
            Command::Smote(a) => Some(&a.out),
            Command::Serve(_) => None,
        }
    }

    fn run(&self, jobs: usize) -> Result<RunRecord, CliError> {
        match self {
            Command::Filter(a) => cmd_filter(a, jobs),
            Command::Generate(a) => cmd_generate(a, jobs),
            Command::Roundtrip(a) => cmd_roundtrip(a, jobs),
            Command::Evaluate(a) => cmd_evaluate(a),
            Command::TuneThreshold(a) => cmd_tune(a),
            Command::Merge(a) => cmd_merge(a),
            Command::Split(a) => cmd_split(a),
            Command::Stats(a) => cmd_stats(a),
            Command::Smote(a) => cmd_smote(a),
            Command::Serve(a) => cmd_serve(a),
        }
    }
}

fn manifest_path(cli: &Cli) -> PathBuf {
    if let Some(p) = &cli.manifest {
        return p.clone();
    }
    match cli.command.primary_output() {
        Some(out) => {
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            out.with_file_name(name)
        }
        None => PathBuf::from(format!("qaforge-{}.manifest.json", cli.command.name())),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("QAFORGE_LOG", "info")).init();
    let cli = Cli::parse();
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    if jobs == 0 {
        eprintln!("configuration error: --jobs must be at least 1");
        return ExitCode::from(2);
    }

    let started_at = Utc::now();
    let clock = Instant::now();
    let result = cli.command.run(jobs);
    let (record, exit_code, error) = match result {
        Ok(r) => (r, 0, None),
        Err(e) => {
            eprintln!("{e}");
            (RunRecord::default(), e.exit_code(), Some(e.to_string()))
        }
    };
    let manifest = RunManifest {
        tool: "qaforge".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cli.command.name().into(),
        argv: std::env::args().collect(),
        config: record.config,
        seed: record.seed,
        inputs: record.inputs.iter().map(|p| FileDigest::of(p)).collect(),
        outputs: record.outputs.iter().map(|p| FileDigest::of(p)).collect(),
        counts: record.counts,
        started_at,
        wall_clock_ms: clock.elapsed().as_millis(),
        exit_code,
        error,
    };
    if let Err(e) = qio::write_json(&manifest_path(&cli), &manifest) {
        eprintln!("warning: could not write run manifest: {e}");
    }
    ExitCode::from(exit_code)
}
