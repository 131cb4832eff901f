//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 data error,
//! 3 model/dataset mismatch, 4 stage failure.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::explain::{self, uniform_counts, ExplanationBundle, SelectionMethod};
use crate::forest::TrainedForest;
use crate::mds::{mds_embed, DEFAULT_MAX_ITER};
use crate::metrics::{sparsity, FeatureLayout};
use crate::pipeline::{self, emit_reports, run_experiment, select_prototypes, EmbeddingPoint, ExperimentConfig};
use crate::proximity::{l2_distance, proximity, Backend, DistanceMatrix};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_MODEL: i32 = 3;
pub const EXIT_STAGE: i32 = 4;

pub const ENV_OUTPUT_DIR: &str = "RFEXPLAIN_OUTPUT_DIR";
pub const ENV_THREADS: &str = "RFEXPLAIN_THREADS";

/// Stable exit code for an error category.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Param(_) => EXIT_CONFIG,
        Error::Io { .. }
        | Error::Csv(_)
        | Error::BadCell { .. }
        | Error::MissingValue { .. }
        | Error::UnknownColumn(_)
        | Error::Data(_)
        | Error::Json(_) => EXIT_DATA,
        Error::Model(_) | Error::DimensionMismatch { .. } => EXIT_MODEL,
        Error::Stage { .. } => EXIT_STAGE,
    }
}

#[derive(Parser, Debug)]
#[command(name = "rfexplain", version, about = "Random-forest proximity explanations")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = ENV_THREADS)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a full cross-validated experiment from a config file.
    Run(RunArgs),
    /// Semi- and counter-factual for one training row.
    Explain(ExplainArgs),
    /// Prototypes per class and critics.
    Prototypes(PrototypeArgs),
    /// Two-dimensional MDS coordinates for a distance matrix.
    Embed(EmbedArgs),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = ENV_OUTPUT_DIR)]
    pub output_dir: Option<PathBuf>,
    /// Validate the config and dataset columns, write nothing.
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ModelInput {
    /// Forest written by `run` (forest_fold{i}.model).
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset snapshot written by `run` (dataset.rfds), or a CSV read
    /// through the `[dataset]` section of `--config`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    L2,
    Gap,
    Original,
    Oob,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Backend {
        match b {
            BackendArg::L2 => Backend::L2,
            BackendArg::Gap => Backend::Gap,
            BackendArg::Original => Backend::Original,
            BackendArg::Oob => Backend::Oob,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Kmedoids,
    Hdp,
}

impl From<MethodArg> for SelectionMethod {
    fn from(m: MethodArg) -> SelectionMethod {
        match m {
            MethodArg::Kmedoids => SelectionMethod::Kmedoids,
            MethodArg::Hdp => SelectionMethod::Hdp,
        }
    }
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub input: ModelInput,
    /// Row id of the query (a training row of the model).
    #[arg(long)]
    pub query: String,
    #[arg(long, value_enum, default_value = "gap")]
    pub backend: BackendArg,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct PrototypeArgs {
    #[command(flatten)]
    pub input: ModelInput,
    #[arg(long, value_enum, default_value = "kmedoids")]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "gap")]
    pub backend: BackendArg,
    /// Prototypes per class.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Critic count (default: number of prototypes).
    #[arg(long)]
    pub critics: Option<usize>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    /// Distance matrix CSV (header `id,<row ids>`); alternative to a model.
    #[arg(long, conflicts_with_all = ["model", "dataset"])]
    pub matrix: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gap")]
    pub backend: BackendArg,
    /// Explanation bundle JSON used to annotate roles.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
}

/// Summary and exit code of one invocation.
#[derive(Debug)]
pub struct CommandOutcome {
    pub code: i32,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

/// Parse `args` and run, writing to `out`/`err`. Returns the exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli, out) {
        Ok(outcome) => {
            if !outcome.summary.is_empty() {
                let _ = writeln!(err, "{}", outcome.summary);
            }
            outcome.code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<CommandOutcome> {
    match cli.command {
        Command::Run(a) => cmd_run(&a, cli.threads, out),
        Command::Explain(a) => {
            init_threads(cli.threads)?;
            cmd_explain(&a, out)
        }
        Command::Prototypes(a) => {
            init_threads(cli.threads)?;
            cmd_prototypes(&a, out)
        }
        Command::Embed(a) => {
            init_threads(cli.threads)?;
            cmd_embed(&a)
        }
    }
}

/// Size the global worker pool. Only the first call in a process takes
/// effect.
fn init_threads(threads: Option<usize>) -> Result<()> {
    match threads {
        None => Ok(()),
        Some(0) => Err(Error::Config("threads must be at least 1".into())),
        Some(n) => {
            if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
                log::debug!("worker pool already initialised; --threads {n} ignored");
            }
            Ok(())
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

fn json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Exclusive marker for an output directory, removed on drop.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".rfexplain.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Stage {
                fold: 0,
                stage: "lock",
                source: Box::new(Error::Data(format!(
                    "{} is in use by another run (remove {} if stale)",
                    dir.display(),
                    path.display()
                ))),
            }),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    name: &'a str,
    output_dir: String,
    test_f1: Vec<f64>,
    mean_test_f1: Option<f64>,
    tuned_counts: &'a std::collections::BTreeMap<String, Vec<usize>>,
    failures: &'a [pipeline::FoldFailure],
}

pub fn cmd_run(args: &RunArgs, threads: Option<usize>, out: &mut dyn Write) -> Result<CommandOutcome> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let threads = threads.or(config.threads);
    if let Some(t) = threads {
        config.threads = Some(t);
    }
    config.validate()?;
    let output_dir = match (&args.output_dir, &config.output_dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => config.base_dir.join(d),
        (None, None) => PathBuf::from("rfexplain-out").join(&config.name),
    };
    if args.dry_run {
        config.check_columns()?;
        let summary = format!(
            "config '{}' is valid; {} folds, {} forest candidates, output would go to {}",
            config.name,
            config.folds.k,
            config.forest.points(0).len(),
            output_dir.display()
        );
        if args.json {
            write_out(out, &json_line(&serde_json::json!({"valid": true, "name": config.name}))?)?;
        }
        return Ok(CommandOutcome {
            code: EXIT_OK,
            summary,
            artifacts: Vec::new(),
        });
    }
    init_threads(threads)?;
    let _lock = DirLock::acquire(&output_dir)?;
    let result = run_experiment(&config)?;
    let artifacts = emit_reports(&result, &config, &output_dir)?;

    let mut text = String::new();
    for f in &result.folds {
        let counts: Vec<String> = f.tuned_counts.iter().map(|(k, c)| format!("{k}={c}")).collect();
        text.push_str(&format!("fold {}: test F1 {:.4}; tuned counts {}\n", f.fold, f.test_f1, counts.join(" ")));
    }
    for fail in &result.failures {
        text.push_str(&format!("fold {} FAILED: {}\n", fail.fold, fail.message));
    }
    if let Some(m) = result.mean_test_f1() {
        text.push_str(&format!("mean test F1 {m:.4}\n"));
    }
    text.push_str(&format!("reports written to {}\n", output_dir.display()));
    if args.json {
        write_out(
            out,
            &json_line(&RunSummary {
                name: &result.name,
                output_dir: output_dir.display().to_string(),
                test_f1: result.folds.iter().map(|f| f.test_f1).collect(),
                mean_test_f1: result.mean_test_f1(),
                tuned_counts: &result.tuned_counts,
                failures: &result.failures,
            })?,
        )?;
    } else {
        write_out(out, &text)?;
    }
    let code = if result.is_complete() { EXIT_OK } else { EXIT_STAGE };
    Ok(CommandOutcome {
        code,
        summary: String::new(),
        artifacts,
    })
}

/// Load the model and the training rows it was fitted on.
fn load_model(input: &ModelInput) -> Result<(TrainedForest, Dataset)> {
    let forest = TrainedForest::load(&input.model)?;
    let dataset = load_dataset_file(&input.dataset, input.config.as_deref())?;
    let train = forest.training_view(&dataset)?;
    Ok((forest, train))
}

fn load_dataset_file(path: &Path, config: Option<&Path>) -> Result<Dataset> {
    if let Ok(ds) = Dataset::load_cache(path) {
        return Ok(ds);
    }
    let Some(cfg_path) = config else {
        return Err(Error::Data(format!(
            "{} is not a dataset snapshot; pass --config to read it as CSV",
            path.display()
        )));
    };
    let mut cfg = ExperimentConfig::load(cfg_path)?;
    cfg.dataset.path = Some(std::path::absolute(path).map_err(|e| Error::io(path, e))?);
    cfg.dataset.synthetic_rows = None;
    cfg.load_dataset()
}

fn distances(forest: &TrainedForest, train: &Dataset, backend: Backend) -> DistanceMatrix {
    match backend.proximity_kind() {
        None => l2_distance(train),
        Some(kind) => proximity(forest, kind).to_distance(),
    }
}

#[derive(Serialize)]
pub struct FactualView {
    pub row_id: String,
    pub class: String,
    pub distance: f64,
    pub sparsity: Option<f64>,
}

#[derive(Serialize)]
pub struct ExplainView {
    pub query_id: String,
    pub query_class: String,
    pub backend: Backend,
    pub semi_factual: FactualView,
    pub counter_factual: FactualView,
}

pub fn cmd_explain(args: &ExplainArgs, out: &mut dyn Write) -> Result<CommandOutcome> {
    let (forest, train) = load_model(&args.input)?;
    let q = train
        .row_index(&args.query)
        .ok_or_else(|| Error::Data(format!("unknown row id '{}' (not a training row of the model)", args.query)))?;
    let backend: Backend = args.backend.into();
    let d = distances(&forest, &train, backend);
    let pair = explain::factual_pair(q, &d, &train.labels)?;
    let layout = FeatureLayout::of(&train);
    let view = |e: usize| FactualView {
        row_id: train.row_ids[e].clone(),
        class: train.label_names[train.labels[e]].clone(),
        distance: d.get(q, e),
        sparsity: sparsity(train.row(q), train.row(e), &layout, 0.0),
    };
    let result = ExplainView {
        query_id: args.query.clone(),
        query_class: train.label_names[train.labels[q]].clone(),
        backend,
        semi_factual: view(pair.semi_factual),
        counter_factual: view(pair.counter_factual),
    };
    let text = if args.json {
        json_line(&result)?
    } else {
        let fmt_sp = |s: Option<f64>| s.map_or("masked".to_string(), |v| format!("{v:.4}"));
        format!(
            "query {} (class {}), backend {}\nsemi-factual    {} (class {}): distance {:.6}, sparsity {}\ncounter-factual {} (class {}): distance {:.6}, sparsity {}\n",
            result.query_id,
            result.query_class,
            backend,
            result.semi_factual.row_id,
            result.semi_factual.class,
            result.semi_factual.distance,
            fmt_sp(result.semi_factual.sparsity),
            result.counter_factual.row_id,
            result.counter_factual.class,
            result.counter_factual.distance,
            fmt_sp(result.counter_factual.sparsity),
        )
    };
    write_out(out, &text)?;
    Ok(CommandOutcome {
        code: EXIT_OK,
        summary: String::new(),
        artifacts: Vec::new(),
    })
}

pub fn cmd_prototypes(args: &PrototypeArgs, out: &mut dyn Write) -> Result<CommandOutcome> {
    if args.count == 0 {
        return Err(Error::Param("--count must be at least 1".into()));
    }
    let (forest, train) = load_model(&args.input)?;
    let backend: Backend = args.backend.into();
    let d = distances(&forest, &train, backend);
    let protos = select_prototypes(&d, &train.labels, args.method.into(), &uniform_counts(&train.labels, args.count), None)?;
    let m = args.critics.unwrap_or(protos.len()).min(train.n_rows() - protos.len());
    let critics = if m == 0 {
        explain::CriticSet {
            indices: Vec::new(),
            witness_values: Vec::new(),
        }
    } else {
        explain::select_critics(&protos, &d, m)?
    };
    let bundle = ExplanationBundle::new(&train, &protos, &critics, &[]);
    let text = if args.json {
        json_line(&bundle)?
    } else {
        let mut s = format!("prototypes ({}, backend {}):\n", bundle.method, bundle.backend);
        for (class, ids) in &bundle.prototypes {
            s.push_str(&format!("  {class}: {}\n", ids.join(", ")));
        }
        s.push_str("critics:\n");
        for c in &bundle.critics {
            s.push_str(&format!("  {} witness {:.6}\n", c.row_id, c.witness));
        }
        s
    };
    write_out(out, &text)?;
    Ok(CommandOutcome {
        code: EXIT_OK,
        summary: String::new(),
        artifacts: Vec::new(),
    })
}

pub fn cmd_embed(args: &EmbedArgs) -> Result<CommandOutcome> {
    let backend: Backend = args.backend.into();
    let (d, ids, classes) = match (&args.matrix, &args.model, &args.dataset) {
        (Some(path), _, _) => {
            let (d, ids) = DistanceMatrix::read_csv(path, backend)?;
            let n = ids.len();
            (d, ids, vec![String::new(); n])
        }
        (None, Some(model), Some(dataset)) => {
            let input = ModelInput {
                model: model.clone(),
                dataset: dataset.clone(),
                config: args.config.clone(),
            };
            let (forest, train) = load_model(&input)?;
            let classes = train.labels.iter().map(|&l| train.label_names[l].clone()).collect();
            (distances(&forest, &train, backend), train.row_ids.clone(), classes)
        }
        _ => return Err(Error::Param("embed needs --matrix or --model with --dataset".into())),
    };
    let e = mds_embed(&d, 2, args.max_iter, args.seed)?;
    let mut roles = vec!["point"; ids.len()];
    if let Some(path) = &args.bundle {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bundle: ExplanationBundle = serde_json::from_str(&text)?;
        let index = |id: &str| ids.iter().position(|x| x == id);
        // Later assignments win, so apply lowest priority first.
        if let Some(f) = bundle.factuals.first() {
            for (id, role) in [(&f.counter_id, "counter"), (&f.semi_id, "semi"), (&f.query_id, "query")] {
                if let Some(i) = index(id) {
                    roles[i] = role;
                }
            }
        }
        for c in &bundle.critics {
            if let Some(i) = index(&c.row_id) {
                roles[i] = "critic";
            }
        }
        for id in bundle.prototypes.values().flatten() {
            if let Some(i) = index(id) {
                roles[i] = "prototype";
            }
        }
    }
    let points: Vec<EmbeddingPoint> = (0..ids.len())
        .map(|i| EmbeddingPoint {
            row_id: ids[i].clone(),
            x: e.coords[[i, 0]],
            y: e.coords[[i, 1]],
            role: roles[i].to_string(),
            class: classes[i].clone(),
        })
        .collect();
    pipeline::write_embedding_csv(&args.output, &points)?;
    Ok(CommandOutcome {
        code: EXIT_OK,
        summary: format!(
            "embedded {} rows (stress {:.3e}, {} iterations) into {}",
            ids.len(),
            e.stress,
            e.iterations,
            args.output.display()
        ),
        artifacts: vec![args.output.clone()],
    })
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Unlocked handles: worker threads log to stderr while a command runs.
    run_cli(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr())
}
