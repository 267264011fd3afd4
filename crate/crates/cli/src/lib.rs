//! `vqg` command implementations. The binary in `main.rs` only parses
//! arguments, sets up logging and maps errors to exit codes.

pub mod manifest;

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use vqg_core::config::DecoderKind;
use vqg_core::corpus::{build_corpus, import_samples, prepare_samples, Corpus, CorpusConfig, CorpusStats, EmbeddingTable};
use vqg_core::eval::{generate_records, score_records, GenerationRecord};
use vqg_core::metrics::MetricReport;
use vqg_core::trainer::{train, TrainOptions, TrainReport};
use vqg_core::{Model, ModelSpec, TrainConfig};

use manifest::{unix_now, InputHasher, RunManifest};

pub const STATS_FILE: &str = "stats.json";
pub const GENERATIONS_FILE: &str = "generations.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const MODEL_DIR: &str = "model";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const GRAPHS_FILE: &str = "graphs.jsonl";

/// Exit codes: 2 configuration, 3 data, 4 numeric failure.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError { code: 2, message: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError { code: 3, message: msg.into() }
    }
}

impl From<vqg_core::Error> for CliError {
    fn from(e: vqg_core::Error) -> Self {
        use vqg_core::Error as E;
        let code = match &e {
            E::Config(_) => 2,
            E::NonFinite(_) => 4,
            _ => 3,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(format!("io error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::data(format!("json error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "vqg", version, about = "Hint-guided visual question generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate or import a corpus, label hints, dedupe, build the vocabulary and split.
    Preprocess(PreprocessArgs),
    /// Train a model on a preprocessed corpus.
    Train(TrainArgs),
    /// Decode questions for a split with a trained checkpoint.
    Generate(GenerateArgs),
    /// Score a generation dump against its references.
    Evaluate(EvaluateArgs),
    /// Retrain and evaluate over a list of ε or μ values.
    Sweep(SweepArgs),
    /// Dump learned similarity/adjacency and hint predictions per sample.
    Report(ReportArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct CorpusOverrides {
    #[arg(long)]
    pub corpus_seed: Option<u64>,
    #[arg(long)]
    pub num_samples: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct TrainOverrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum)]
    pub decoder: Option<DecoderArg>,
    #[arg(long)]
    pub beam_width: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DecoderArg {
    Lstm,
    Transformer,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusOverrides,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    #[default]
    Dev,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// A checkpoint directory (a run's `model/` or `checkpoints/<label>/`).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Dev)]
    pub split: Split,
    /// Defaults to the checkpoint's configured width.
    #[arg(long)]
    pub beam_width: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub generations: PathBuf,
    /// Corpus whose references are checked against the dump.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Eps,
    Mu,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Eps => "eps",
            SweepParam::Mu => "mu",
        }
    }
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub values: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusOverrides,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Dev)]
    pub split: Split,
    /// Only the first N samples of the split.
    #[arg(long)]
    pub limit: Option<usize>,
}

/// External feature import instead of the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportConfig {
    /// JSON-lines file of imported samples.
    pub samples: PathBuf,
    /// `{"word": [..], ..}` embedding table used for hint labeling.
    pub embeddings: PathBuf,
}

/// The config file: corpus, training and optional import settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub import: Option<ImportConfig>,
}

impl ExperimentConfig {
    /// Reads the file (or defaults), resolving import paths against its directory.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(ExperimentConfig::default());
        };
        let raw = fs::read(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_slice(&raw).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if let Some(imp) = &mut cfg.import {
            let base = path.parent().unwrap_or(Path::new("."));
            imp.samples = base.join(&imp.samples);
            imp.embeddings = base.join(&imp.embeddings);
        }
        Ok(cfg)
    }

    pub fn apply_corpus(&mut self, o: &CorpusOverrides) {
        if let Some(v) = o.corpus_seed {
            self.corpus.seed = v;
        }
        if let Some(v) = o.num_samples {
            self.corpus.num_samples = v;
        }
        if let Some(v) = o.mu {
            self.corpus.mu = v;
        }
    }

    pub fn apply_train(&mut self, o: &TrainOverrides) {
        let t = &mut self.train;
        if let Some(v) = o.seed {
            t.seed = v;
        }
        if let Some(v) = o.epochs {
            t.epochs = v;
        }
        if let Some(v) = o.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = o.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = o.epsilon {
            t.epsilon = v;
        }
        if let Some(v) = o.decoder {
            t.decoder = match v {
                DecoderArg::Lstm => DecoderKind::Lstm,
                DecoderArg::Transformer => DecoderKind::Transformer,
            };
        }
        if let Some(v) = o.beam_width {
            t.beam_width = v;
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.corpus.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Preprocess(a) => cmd_preprocess(&a).map(drop),
        Command::Train(a) => cmd_train(&a).map(drop),
        Command::Generate(a) => cmd_generate(&a).map(drop),
        Command::Evaluate(a) => cmd_evaluate(&a).map(drop),
        Command::Sweep(a) => cmd_sweep(&a).map(drop),
        Command::Report(a) => cmd_report(&a).map(drop),
    }
}

fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::data(format!("{what} {} does not exist", path.display())))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

struct RunStart {
    command: &'static str,
    config_path: Option<PathBuf>,
    seed: u64,
    started: u64,
    hasher: InputHasher,
}

impl RunStart {
    fn new(command: &'static str, config_path: Option<&Path>, seed: u64, effective: &impl Serialize) -> CliResult<Self> {
        let mut hasher = InputHasher::default();
        hasher.bytes("command", command.as_bytes());
        hasher.bytes("config", &serde_json::to_vec(effective)?);
        Ok(RunStart {
            command,
            config_path: config_path.map(Path::to_path_buf),
            seed,
            started: unix_now(),
            hasher,
        })
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        self.hasher.path(path)?;
        Ok(())
    }

    fn finish(self, out: &Path) -> CliResult<RunManifest> {
        let m = RunManifest {
            command: self.command.into(),
            config_path: self.config_path,
            seed: self.seed,
            input_hash: self.hasher.finish(),
            output_dir: out.to_path_buf(),
            started_unix: self.started,
            finished_unix: unix_now(),
            version: env!("CARGO_PKG_VERSION").into(),
        };
        m.write()?;
        Ok(m)
    }
}

/// Builds (or imports) and labels a corpus as configured.
pub fn make_corpus(cfg: &ExperimentConfig) -> CliResult<(Corpus, CorpusStats)> {
    let c = &cfg.corpus;
    Ok(match &cfg.import {
        None => build_corpus(c)?,
        Some(imp) => {
            let raws = import_samples(&imp.samples)?;
            let emb = EmbeddingTable::load_json(&imp.embeddings)?;
            prepare_samples(raws, &emb, c.mu, c.min_count, c.dev_fraction, c.seed)?
        }
    })
}

fn hint_rate(corpus: &Corpus) -> f64 {
    let (mut hints, mut objects) = (0usize, 0usize);
    for s in corpus.train.iter().chain(&corpus.dev) {
        hints += s.objects.iter().filter(|o| o.is_hint).count();
        objects += s.objects.len();
    }
    if objects == 0 {
        0.0
    } else {
        hints as f64 / objects as f64
    }
}

pub fn cmd_preprocess(a: &PreprocessArgs) -> CliResult<CorpusStats> {
    let mut cfg = ExperimentConfig::load(a.config.as_deref())?;
    cfg.apply_corpus(&a.corpus);
    cfg.corpus.validate()?;
    let mut run = RunStart::new("preprocess", a.config.as_deref(), cfg.corpus.seed, &cfg.corpus)?;
    if let Some(imp) = &cfg.import {
        run.input(&imp.samples)?;
        run.input(&imp.embeddings)?;
    }
    let (corpus, stats) = make_corpus(&cfg)?;
    corpus.save(&a.out)?;
    write_json(&a.out.join(STATS_FILE), &stats)?;
    println!(
        "kept {} (train {}, dev {}), dropped {} without hints and {} duplicates, vocab {}, hint rate {:.3}",
        stats.kept,
        corpus.train.len(),
        corpus.dev.len(),
        stats.dropped_no_hint,
        stats.dropped_duplicate,
        corpus.vocab.len(),
        hint_rate(&corpus)
    );
    run.finish(&a.out)?;
    Ok(stats)
}

/// Trains on `corpus` into `out` (checkpoints, report, final model).
pub fn train_into(corpus: &Corpus, cfg: &TrainConfig, out: &Path) -> CliResult<(Model<f32>, TrainReport)> {
    let spec = ModelSpec::for_samples(cfg.clone(), &corpus.vocab, corpus.num_categories, &corpus.train)?;
    let mut model = Model::<f32>::new(spec)?;
    let opts = TrainOptions {
        run_dir: Some(out.to_path_buf()),
        ..TrainOptions::default()
    };
    let report = train(&mut model, &corpus.train, &corpus.dev, &opts)?;
    model.save(&out.join(MODEL_DIR))?;
    Ok((model, report))
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<TrainReport> {
    let mut cfg = ExperimentConfig::load(a.config.as_deref())?;
    cfg.apply_train(&a.train);
    cfg.train.validate()?;
    require_dir(&a.data, "data directory")?;
    let mut run = RunStart::new("train", a.config.as_deref(), cfg.train.seed, &cfg.train)?;
    run.input(&a.data)?;
    let corpus = Corpus::load(&a.data)?;
    let (_, report) = train_into(&corpus, &cfg.train, &a.out)?;
    if let Some(last) = report.epochs.last() {
        println!(
            "trained {} epochs in {:.1}s; best epoch {}; final train L {:.4}",
            report.epochs.len(),
            report.wall_secs,
            report.best_epoch,
            last.train.total
        );
    }
    run.finish(&a.out)?;
    Ok(report)
}

pub fn write_generations(path: &Path, records: &[GenerationRecord]) -> CliResult<()> {
    write_jsonl(path, records)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> CliResult<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_generations(path: &Path) -> CliResult<Vec<GenerationRecord>> {
    let reader = BufReader::new(fs::File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::data(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn cmd_generate(a: &GenerateArgs) -> CliResult<Vec<GenerationRecord>> {
    require_dir(&a.checkpoint, "checkpoint")?;
    require_dir(&a.data, "data directory")?;
    let model = Model::<f32>::load(&a.checkpoint)?;
    let width = a.beam_width.unwrap_or(model.config().beam_width);
    let mut run = RunStart::new("generate", None, model.config().seed, &serde_json::json!({ "beam_width": width, "split": format!("{:?}", a.split) }))?;
    run.input(&a.checkpoint)?;
    run.input(&a.data)?;
    let corpus = Corpus::load(&a.data)?;
    let samples = match a.split {
        Split::Train => &corpus.train,
        Split::Dev => &corpus.dev,
    };
    let records = generate_records(&model, samples, &corpus.vocab, width)?;
    fs::create_dir_all(&a.out)?;
    write_generations(&a.out.join(GENERATIONS_FILE), &records)?;
    println!("wrote {} generations to {}", records.len(), a.out.join(GENERATIONS_FILE).display());
    run.finish(&a.out)?;
    Ok(records)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<MetricReport> {
    require_dir(&a.data, "data directory")?;
    let mut run = RunStart::new("evaluate", None, 0, &serde_json::Value::Null)?;
    run.input(&a.generations)?;
    run.input(&a.data)?;
    let records = read_generations(&a.generations)?;
    let corpus = Corpus::load(&a.data)?;
    let refs: std::collections::HashMap<&str, Vec<String>> = corpus
        .train
        .iter()
        .chain(&corpus.dev)
        .map(|s| (s.id.as_str(), corpus.vocab.decode(&s.question_tokens)))
        .collect();
    for r in &records {
        match refs.get(r.id.as_str()) {
            Some(q) if *q == r.reference => {}
            Some(_) => return Err(CliError::data(format!("reference of {} differs from the corpus", r.id))),
            None => return Err(CliError::data(format!("sample {} is not in {}", r.id, a.data.display()))),
        }
    }
    let report = score_records(&records)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join(METRICS_FILE), &report)?;
    print!("{}", report.table());
    run.finish(&a.out)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub best_epoch: usize,
    pub metrics: MetricReport,
}

/// Flat row of `sweep.csv`; absent scores are empty cells.
#[derive(Serialize)]
struct CsvRow {
    param: &'static str,
    value: f64,
    best_epoch: usize,
    bleu1: f64,
    bleu2: f64,
    bleu3: f64,
    bleu4: f64,
    rouge_l: f64,
    cider: Option<f64>,
    hint_f1: Option<f64>,
}

pub fn cmd_sweep(a: &SweepArgs) -> CliResult<Vec<SweepRow>> {
    let mut cfg = ExperimentConfig::load(a.config.as_deref())?;
    cfg.apply_corpus(&a.corpus);
    cfg.apply_train(&a.train);
    cfg.validate()?;
    for &v in &a.values {
        let ok = match a.param {
            SweepParam::Eps => (0.0..=1.0).contains(&v),
            SweepParam::Mu => v >= 0.0 && v.is_finite(),
        };
        if !ok {
            return Err(CliError::config(format!("sweep value {v} out of range for {:?}", a.param)));
        }
    }
    let mut run = RunStart::new("sweep", a.config.as_deref(), cfg.train.seed, &(&cfg, a.param, &a.values))?;
    if let Some(imp) = &cfg.import {
        run.input(&imp.samples)?;
        run.input(&imp.embeddings)?;
    }
    // ε only touches the model, so one corpus serves every point.
    let shared = match a.param {
        SweepParam::Eps => Some(make_corpus(&cfg)?.0),
        SweepParam::Mu => None,
    };
    let mut rows = Vec::with_capacity(a.values.len());
    for &v in &a.values {
        let mut point = cfg.clone();
        let label = match a.param {
            SweepParam::Eps => {
                point.train.epsilon = v;
                format!("eps-{v}")
            }
            SweepParam::Mu => {
                point.corpus.mu = v;
                format!("mu-{v}")
            }
        };
        let dir = a.out.join(label);
        let built;
        let corpus = match &shared {
            Some(c) => c,
            None => {
                built = make_corpus(&point)?.0;
                &built
            }
        };
        let mut point_run = RunStart::new("sweep-point", a.config.as_deref(), point.train.seed, &point)?;
        if let Some(imp) = &point.import {
            point_run.input(&imp.samples)?;
            point_run.input(&imp.embeddings)?;
        }
        let (model, report) = train_into(corpus, &point.train, &dir)?;
        let records = generate_records(&model, &corpus.dev, &corpus.vocab, point.train.beam_width)?;
        write_generations(&dir.join(GENERATIONS_FILE), &records)?;
        let metrics = score_records(&records)?;
        write_json(&dir.join(METRICS_FILE), &metrics)?;
        point_run.finish(&dir)?;
        log::info!("{}={v}: BLEU-4 {:.4}", a.param.name(), metrics.bleu4);
        rows.push(SweepRow {
            param: a.param,
            value: v,
            best_epoch: report.best_epoch,
            metrics,
        });
    }
    write_json(&a.out.join(SWEEP_JSON), &rows)?;
    let mut w = csv::Writer::from_path(a.out.join(SWEEP_CSV)).map_err(|e| CliError::data(e.to_string()))?;
    for r in &rows {
        let m = &r.metrics;
        w.serialize(CsvRow {
            param: r.param.name(),
            value: r.value,
            best_epoch: r.best_epoch,
            bleu1: m.bleu1,
            bleu2: m.bleu2,
            bleu3: m.bleu3,
            bleu4: m.bleu4,
            rouge_l: m.rouge_l,
            cider: m.cider,
            hint_f1: m.hint_f1,
        })
        .map_err(|e| CliError::data(e.to_string()))?;
    }
    w.flush()?;
    print!("{}", fs::read_to_string(a.out.join(SWEEP_CSV))?);
    run.finish(&a.out)?;
    Ok(rows)
}

/// One line of the graph report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub id: String,
    pub template: Option<String>,
    pub categories: Vec<usize>,
    pub hint_gt: Vec<bool>,
    pub hint_probs: Option<Vec<f64>>,
    pub hint_pred: Option<Vec<bool>>,
    /// Absent for variants without a learned graph.
    pub similarity: Option<Vec<Vec<f64>>>,
    pub adjacency: Option<Vec<Vec<f64>>>,
}

fn rows_of(t: &vqg_core::Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn cmd_report(a: &ReportArgs) -> CliResult<Vec<GraphRecord>> {
    require_dir(&a.checkpoint, "checkpoint")?;
    require_dir(&a.data, "data directory")?;
    let model = Model::<f32>::load(&a.checkpoint)?;
    let mut run = RunStart::new(
        "report",
        None,
        model.config().seed,
        &serde_json::json!({ "split": format!("{:?}", a.split), "limit": a.limit }),
    )?;
    run.input(&a.checkpoint)?;
    run.input(&a.data)?;
    let corpus = Corpus::load(&a.data)?;
    let samples = match a.split {
        Split::Train => &corpus.train,
        Split::Dev => &corpus.dev,
    };
    let samples = &samples[..a.limit.unwrap_or(samples.len()).min(samples.len())];
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let hints = model.predict_hints(s)?;
        let graph = model.adjacency(s)?;
        records.push(GraphRecord {
            id: s.id.clone(),
            template: s.template.clone(),
            categories: s.objects.iter().map(|o| o.category_id).collect(),
            hint_gt: s.hint_mask(),
            hint_probs: hints.as_ref().map(|(p, _)| p.clone()),
            hint_pred: hints.map(|(_, m)| m),
            similarity: graph.as_ref().map(|(s, _)| rows_of(s)),
            adjacency: graph.map(|(_, a)| rows_of(&a)),
        });
    }
    fs::create_dir_all(&a.out)?;
    write_jsonl(&a.out.join(GRAPHS_FILE), &records)?;
    println!("wrote {} graph records to {}", records.len(), a.out.join(GRAPHS_FILE).display());
    run.finish(&a.out)?;
    Ok(records)
}
