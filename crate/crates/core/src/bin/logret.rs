use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use logret::ablation::{self, AblationSettings, Axis, AxisKind};
use logret::detect::{self, DetectionResult, Detector, ThresholdPolicy};
use logret::embed::{
    self, EmbeddingSource, TextKeyedEmbeddings, BLOCK_MAX_TOKENS, DEFAULT_MAX_TOKENS,
};
use logret::eval::{self, EvalReport};
use logret::ingest::{self, InputFormat, SyntheticConfig};
use logret::store;
use logret::{
    Aggregation, CoreSetConfig, CoreSize, DocIndex, FeatureMode, ProcessedSequence, ProviderConfig,
    ProviderKind, RawLogRecord, RuleSet, Scalar, ScoreMode, SequenceDB,
};

#[derive(Debug, Parser, Serialize, Deserialize)]
#[command(
    name = "logret",
    version,
    about = "Training-free log anomaly detection by retrieval"
)]
struct RunConfig {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "LOGRET_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate a labeled synthetic corpus as JSONL.
    Synth(SynthArgs),
    /// Mask and deduplicate known-normal logs into an RPDB file.
    BuildDb(BuildDbArgs),
    /// Embed a database into an RPDE file.
    Embed(EmbedArgs),
    /// Score a test stream and write per-record results as JSONL.
    Detect(DetectArgs),
    /// Evaluate results against labels, or run detection end to end.
    Eval(EvalArgs),
    /// Run one ablation axis over a labeled corpus.
    Ablate(AblateArgs),
    /// Sequence and token coverage of a test stream by a known database.
    Coverage(CoverageArgs),
    /// Re-run a configuration echoed by a previous invocation.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum ReportFormat {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct InputArgs {
    #[arg(long, value_enum, default_value = "jsonl")]
    format: InputFormat,
    /// Mask rules JSON; the built-in IP/PATH/HEX/NUM rules if absent.
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct ProviderArgs {
    #[arg(long, value_enum, default_value = "hash")]
    provider: ProviderKind,
    #[arg(long, default_value_t = 64, env = "LOGRET_DIM")]
    dim: usize,
    /// Rows per sequence including CLS [default: 128, or 512 in block mode].
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long, default_value_t = 0, env = "LOGRET_EMBED_SEED")]
    embed_seed: u64,
    #[arg(long)]
    no_normalize: bool,
    /// Drop the last row of file-provided sequences.
    #[arg(long)]
    exclude_trailing_separator: bool,
}

fn unit_ratio(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("must be in (0, 1], got {v}"))
    }
}

fn positive(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v == 0 {
        return Err("must be at least 1".into());
    }
    Ok(v)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct CoreArgs {
    /// Core-set size as a fraction of |D| [default: 0.01].
    #[arg(long, value_parser = unit_ratio, conflicts_with = "core_k", env = "LOGRET_CORE_RATIO")]
    core_ratio: Option<f64>,
    /// Core-set size as an absolute count.
    #[arg(long, value_parser = positive)]
    core_k: Option<usize>,
    #[arg(long, value_enum, default_value = "nearest_only")]
    score_mode: ScoreMode,
    #[arg(long, value_enum, default_value = "all_tokens")]
    feature_mode: FeatureMode,
    #[arg(long, value_enum, default_value = "sum")]
    aggregation: Aggregation,
    #[arg(long, value_enum, default_value = "f32", env = "LOGRET_PRECISION")]
    precision: Precision,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    types: usize,
    #[arg(long, default_value_t = 100)]
    logs_per_type: usize,
    #[arg(long, default_value_t = 0.05)]
    anomaly_rate: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    max_list_len: usize,
    #[arg(long, default_value_t = 1)]
    min_param_slots: usize,
    #[arg(long, default_value_t = 2)]
    max_param_slots: usize,
    /// Group consecutive records into blocks of this many.
    #[arg(long, value_parser = positive)]
    block_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct BuildDbArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    input_args: InputArgs,
    #[arg(long)]
    block_mode: bool,
    /// Keep records labeled abnormal (for query databases).
    #[arg(long)]
    keep_abnormal: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct EmbedArgs {
    #[arg(long)]
    db: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    /// RPDE file to import with the file provider.
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    block_mode: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct DetectArgs {
    /// Known-normal RPDB file.
    #[arg(long)]
    db: Option<PathBuf>,
    /// RPDE embeddings of --db; computed with the hash provider if absent.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Test stream.
    #[arg(long)]
    test: Option<PathBuf>,
    /// With the file provider: RPDB of the test texts and its RPDE file.
    #[arg(long)]
    query_db: Option<PathBuf>,
    #[arg(long)]
    query_embeddings: Option<PathBuf>,
    #[command(flatten)]
    input_args: InputArgs,
    #[command(flatten)]
    provider: ProviderArgs,
    #[command(flatten)]
    core: CoreArgs,
    /// `fixed:<delta>` or `quantile:<level>`.
    #[arg(
        long,
        default_value = "quantile:0.999",
        env = "LOGRET_THRESHOLD_POLICY"
    )]
    threshold_policy: ThresholdPolicy,
    /// Known-normal hold-out for quantile calibration; leave-one-out over
    /// --db if absent.
    #[arg(long)]
    holdout: Option<PathBuf>,
    #[arg(long)]
    block_mode: bool,
    /// Records per detection period; one period if absent.
    #[arg(long, value_parser = positive)]
    period_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct EvalArgs {
    /// Results JSONL from `detect`.
    #[arg(long, requires = "labels")]
    results: Option<PathBuf>,
    /// Labeled records matched to results by index.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Report precision/recall/F1 at the best-F1 threshold.
    #[arg(long)]
    best_f1: bool,
    /// Fail if AUROC is undefined.
    #[arg(long)]
    auroc: bool,
    #[arg(long, value_enum, default_value = "text")]
    report_format: ReportFormat,
    #[command(flatten)]
    detect: DetectArgs,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct AblateArgs {
    /// Labeled corpus, split chronologically.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    input_args: InputArgs,
    #[arg(long, value_enum)]
    axis: AxisKind,
    /// Comma-separated values for --axis.
    #[arg(long)]
    values: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = ablation::DEFAULT_TRAIN_FRACTION)]
    train_fraction: f64,
    #[arg(long)]
    block_mode: bool,
    /// Include scoring wall time per cell (makes output run-dependent).
    #[arg(long)]
    timings: bool,
    /// Run cells one at a time.
    #[arg(long)]
    sequential: bool,
    /// With the file provider: RPDB covering every corpus text and its RPDE.
    #[arg(long)]
    db: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
    #[command(flatten)]
    core: CoreArgs,
    #[arg(long, value_enum, default_value = "text")]
    report_format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct CoverageArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    input_args: InputArgs,
    #[arg(long)]
    block_mode: bool,
    #[arg(long, value_enum, default_value = "text")]
    report_format: ReportFormat,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct ReplayArgs {
    /// JSON config as echoed on stderr.
    #[arg(long)]
    config: PathBuf,
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Outcome<T> {
    Err(Failure::Usage(msg.into()))
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> Outcome<&'a Path> {
    match v {
        Some(p) => Ok(p),
        None => usage(format!("missing required flag {flag}")),
    }
}

impl InputArgs {
    fn rules(&self) -> Outcome<RuleSet> {
        match &self.rules {
            Some(p) => Ok(RuleSet::load(p)?),
            None => Ok(RuleSet::default_rules()),
        }
    }

    fn read(&self, path: &Path) -> Outcome<Vec<RawLogRecord>> {
        let parsed = ingest::read_records(path, self.format)?;
        if !parsed.rejected.is_empty() {
            eprintln!(
                "{}: skipped {} record(s); first: {}",
                path.display(),
                parsed.rejected.len(),
                parsed.rejected[0]
            );
        }
        Ok(parsed.records)
    }
}

impl ProviderArgs {
    fn config(&self, block_mode: bool, file_path: Option<&Path>) -> Outcome<ProviderConfig> {
        let default_max = if block_mode {
            BLOCK_MAX_TOKENS
        } else {
            DEFAULT_MAX_TOKENS
        };
        let cfg = ProviderConfig {
            provider: self.provider,
            dim: self.dim,
            max_tokens: self.max_tokens.unwrap_or(default_max),
            normalize_rows: !self.no_normalize,
            seed: self.embed_seed,
            file_path: file_path.map(Path::to_path_buf),
            exclude_trailing_separator: self.exclude_trailing_separator,
        };
        if cfg.dim < 2 {
            return usage(format!("--dim must be at least 2, got {}", cfg.dim));
        }
        if cfg.max_tokens < 2 {
            return usage(format!(
                "--max-tokens must be at least 2, got {}",
                cfg.max_tokens
            ));
        }
        Ok(cfg)
    }
}

impl CoreArgs {
    fn config(&self) -> Outcome<CoreSetConfig> {
        let core = match (self.core_ratio, self.core_k) {
            (Some(_), Some(_)) => return usage("--core-ratio and --core-k are exclusive"),
            (Some(r), None) => {
                unit_ratio(&r.to_string())
                    .map_err(|e| Failure::Usage(format!("--core-ratio {e}")))?;
                CoreSize::Ratio(r)
            }
            (None, Some(0)) => return usage("--core-k must be at least 1"),
            (None, Some(k)) => CoreSize::K(k),
            (None, None) => CoreSize::Ratio(logret::retrieval::DEFAULT_CORE_RATIO),
        };
        Ok(CoreSetConfig {
            core,
            feature_mode: self.feature_mode,
            score_mode: self.score_mode,
            aggregation: self.aggregation,
        })
    }
}

fn open_out(path: Option<&Path>) -> Outcome<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_synth(a: &SynthArgs) -> Outcome {
    let cfg = SyntheticConfig {
        n_types: a.types,
        logs_per_type: a.logs_per_type,
        anomaly_rate: a.anomaly_rate,
        seed: a.seed,
        max_list_len: a.max_list_len,
        min_param_slots: a.min_param_slots,
        max_param_slots: a.max_param_slots,
    };
    let mut records =
        ingest::gen_synthetic_with(&cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(size) = a.block_size {
        for r in &mut records {
            r.block_id = Some(format!("blk_{}", r.index as usize / size));
        }
    }
    let mut w = open_out(a.out.as_deref())?;
    ingest::write_records(&mut w, &records)?;
    w.flush()?;
    Ok(())
}

fn run_build_db(a: &BuildDbArgs) -> Outcome {
    let rules = a.input_args.rules()?;
    let mut records = a.input_args.read(&a.input)?;
    if a.keep_abnormal {
        for r in &mut records {
            r.label = None;
        }
    }
    let (db, lookup) = detect::build_known(&records, &rules, a.block_mode)?;
    store::persist(&db, &lookup, &a.out)?;
    eprintln!(
        "{}",
        serde_json::json!({ "records": records.len(), "uniques": db.len() })
    );
    Ok(())
}

fn run_embed(a: &EmbedArgs) -> Outcome {
    let cfg = a.provider.config(a.block_mode, a.source.as_deref())?;
    if cfg.provider == ProviderKind::File && a.source.is_none() {
        return usage("--provider file requires --source");
    }
    let (db, _) = store::load(&a.db)?;
    let map = embed::embed_batch::<f32>(&db, &cfg)?;
    embed::write_embedding_file(&a.out, &map)?;
    Ok(())
}

/// Loaded and embedded state for detection.
fn build_detector<T: Scalar>(a: &DetectArgs, block_mode: bool) -> Outcome<Detector<T>> {
    let rules = a.input_args.rules()?;
    let cfg = a.provider.config(block_mode, None)?;
    let core = a.core.config()?;
    let (db, _) = store::load(require(&a.db, "--db")?)?;
    let docs = match &a.embeddings {
        Some(p) => embed::attach_file_embeddings::<T>(&db, embed::read_embedding_file(p)?, &cfg)?,
        None if cfg.provider == ProviderKind::Hash => embed::embed_batch::<T>(&db, &cfg)?,
        None => return usage("--provider file requires --embeddings"),
    };
    let queries: Box<dyn EmbeddingSource<T>> = match cfg.provider {
        ProviderKind::Hash => {
            if let Some(d) = docs.values().next() {
                if d.dim() != cfg.dim {
                    return Err(anyhow!(
                        "--embeddings have dim {}, hash queries use --dim {}",
                        d.dim(),
                        cfg.dim
                    )
                    .into());
                }
            }
            Box::new(cfg.clone())
        }
        ProviderKind::File => {
            let (q_db, _) = store::load(require(&a.query_db, "--query-db")?)?;
            let q_file =
                embed::read_embedding_file(require(&a.query_embeddings, "--query-embeddings")?)?;
            Box::new(TextKeyedEmbeddings::<T>::from_file(&q_db, q_file, &cfg)?)
        }
    };
    let index = DocIndex::from_map(docs)?;
    Ok(Detector::new(index, rules, queries, core, block_mode)?)
}

fn detect_results<T: Scalar>(a: &DetectArgs) -> Outcome<(Vec<DetectionResult>, Vec<RawLogRecord>)> {
    let detector = build_detector::<T>(a, a.block_mode)?;
    let test = a.input_args.read(require(&a.test, "--test")?)?;
    let holdout = match &a.holdout {
        Some(p) => Some(a.input_args.read(p)?),
        None => None,
    };
    let threshold = detector.calibrate(holdout.as_deref(), a.threshold_policy)?;
    let out = detector.detect_stream(&test, threshold, a.period_size)?;
    eprintln!(
        "{}",
        serde_json::json!({ "threshold": threshold, "n_docs": detector.index().len(), "stats": out.stats })
    );
    Ok((out.results, test))
}

fn run_detect(a: &DetectArgs) -> Outcome {
    let (results, _) = match a.core.precision {
        Precision::F32 => detect_results::<f32>(a)?,
        Precision::F64 => detect_results::<f64>(a)?,
    };
    let mut w = open_out(a.out.as_deref())?;
    detect::write_results(&mut w, &results)?;
    w.flush()?;
    Ok(())
}

fn emit(text: &str, out: Option<&Path>) -> Outcome {
    let mut w = open_out(out)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Outcome {
    let (results, labels) = match &a.results {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let results = detect::read_results(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            let labels = a.detect.input_args.read(require(&a.labels, "--labels")?)?;
            (results, labels)
        }
        None => {
            let (results, test) = match a.detect.core.precision {
                Precision::F32 => detect_results::<f32>(&a.detect)?,
                Precision::F64 => detect_results::<f64>(&a.detect)?,
            };
            let labels = match &a.labels {
                Some(p) => a.detect.input_args.read(p)?,
                None => test,
            };
            (results, labels)
        }
    };
    let by_index: HashMap<u64, logret::Label> = labels
        .iter()
        .filter_map(|r| r.label.map(|l| (r.index, l)))
        .collect();
    let scores = eval::label_results(&results, &by_index)?;
    let threshold = if a.best_f1 {
        None
    } else {
        results.first().map(|r| r.threshold_used)
    };
    let config = serde_json::json!({ "results": results.len(), "units": scores.len() });
    let report: EvalReport = eval::evaluate(&scores, threshold, config);
    if a.auroc && report.auroc.is_none() {
        return Err(anyhow!("AUROC is undefined: labels contain a single class").into());
    }
    let text = match a.report_format {
        ReportFormat::Text => report.to_text(),
        ReportFormat::Json | ReportFormat::Csv => serde_json::to_string_pretty(&report)? + "\n",
    };
    emit(&text, a.detect.out.as_deref())
}

fn ablate_typed<T: Scalar>(a: &AblateArgs, axis: &Axis) -> Outcome<Vec<ablation::AblationCell>> {
    let rules = a.input_args.rules()?;
    let cfg = a.provider.config(a.block_mode, None)?;
    let corpus = a.input_args.read(&a.input)?;
    let settings = AblationSettings {
        base: a.core.config()?,
        train_fraction: a.train_fraction,
        seed: a.seed,
        block_mode: a.block_mode,
        timings: a.timings,
        parallel_cells: !a.sequential,
    };
    let source: Box<dyn EmbeddingSource<T>> = match cfg.provider {
        ProviderKind::Hash => Box::new(cfg.clone()),
        ProviderKind::File => {
            let (db, _) = store::load(require(&a.db, "--db")?)?;
            let file = embed::read_embedding_file(require(&a.embeddings, "--embeddings")?)?;
            Box::new(TextKeyedEmbeddings::<T>::from_file(&db, file, &cfg)?)
        }
    };
    ablation::ablate(&corpus, &rules, source.as_ref(), axis, &settings).map_err(|e| match e {
        ablation::AblationError::Config(m) => Failure::Usage(m),
        other => Failure::Data(other.into()),
    })
}

fn run_ablate(a: &AblateArgs) -> Outcome {
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        return usage(format!(
            "--train-fraction must be in (0, 1), got {}",
            a.train_fraction
        ));
    }
    let axis =
        Axis::parse(a.axis, &a.values).map_err(|e| Failure::Usage(format!("--values: {e}")))?;
    let cells = match a.core.precision {
        Precision::F32 => ablate_typed::<f32>(a, &axis)?,
        Precision::F64 => ablate_typed::<f64>(a, &axis)?,
    };
    let text = match a.report_format {
        ReportFormat::Text => ablation::cells_to_text(&cells),
        ReportFormat::Csv => ablation::cells_to_csv(&cells),
        ReportFormat::Json => serde_json::to_string_pretty(&cells)? + "\n",
    };
    emit(&text, a.out.as_deref())
}

fn run_coverage(a: &CoverageArgs) -> Outcome {
    let rules = a.input_args.rules()?;
    let (known, _): (SequenceDB, _) = store::load(&a.db)?;
    let test = a.input_args.read(&a.test)?;
    let seqs: Vec<ProcessedSequence> = if a.block_mode {
        store::build_block_views(&test, &rules)?
            .iter()
            .enumerate()
            .map(|(i, v)| ProcessedSequence::new(&v.canonical_text, i as u64))
            .collect()
    } else {
        ingest::mask_all(&test, &rules)
    };
    let report = eval::coverage(&known, &seqs)?;
    let text = match a.report_format {
        ReportFormat::Text => format!(
            "{:<24}{:.6}\n{:<24}{:.6}\n{:<24}{:.6}\n{:<24}{:.6}\n",
            "seq_coverage",
            report.seq_coverage,
            "token_coverage",
            report.token_coverage,
            "seq_coverage_unique",
            report.seq_coverage_unique,
            "token_coverage_unique",
            report.token_coverage_unique
        ),
        ReportFormat::Json | ReportFormat::Csv => serde_json::to_string_pretty(&report)? + "\n",
    };
    emit(&text, None)
}

fn dispatch(cmd: &Command) -> Outcome {
    match cmd {
        Command::Synth(a) => run_synth(a),
        Command::BuildDb(a) => run_build_db(a),
        Command::Embed(a) => run_embed(a),
        Command::Detect(a) => run_detect(a),
        Command::Eval(a) => run_eval(a),
        Command::Ablate(a) => run_ablate(a),
        Command::Coverage(a) => run_coverage(a),
        Command::Replay(_) => usage("replay configs cannot themselves be replays"),
    }
}

fn run(mut cfg: RunConfig) -> Outcome {
    if let Command::Replay(r) = &cfg.command {
        let text = std::fs::read_to_string(&r.config)
            .with_context(|| format!("reading {}", r.config.display()))?;
        let replayed: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Failure::Usage(format!("--config {}: {e}", r.config.display())))?;
        if matches!(replayed.command, Command::Replay(_)) {
            return usage("replay configs cannot themselves be replays");
        }
        cfg = RunConfig {
            workers: cfg.workers.or(replayed.workers),
            command: replayed.command,
        };
    }
    eprintln!("{}", serde_json::to_string(&cfg)?);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        if n == 0 {
            return usage("--workers must be at least 1");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    pool.install(|| dispatch(&cfg.command))
}

fn main() -> ExitCode {
    let cfg = match RunConfig::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
