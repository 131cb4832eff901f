//! Cross-validated experiment runner: encode, fold, grid-search the forest,
//! build distances, tune and select explanantia, score them, and write the
//! reports.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, hex, stratified_folds, stratified_split, Dataset, MissingPolicy, Schema};
use crate::error::{Error, Result};
use crate::explain::{
    self, hdp_prototypes, kmedoids_prototypes, select_critics, select_critics_per_class, uniform_counts, CriticSet, ExplanationBundle, FactualEntry, FactualPair, PrototypeSet,
    SelectionMethod,
};
use crate::forest::{fit, grid_search, weighted_f1, ForestGrid, ForestParams, TrainedForest};
use crate::mds::{mds_embed, DEFAULT_MAX_ITER};
use crate::metrics::{
    assignments, compactness, diversity, nearest_prototype_f1, ood_distance, outlier_score, robustness, sparsity,
    Aggregate, FeatureLayout, MetricReport, Neighborhood, NO_BACKEND,
};
use crate::proximity::{
    cross_distances, l2_cross, l2_distance_with, proximity, Backend, DistanceMatrix, ProximityKind, Standardizer,
};
use crate::seeds::{derive, Stage};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "config_version")]
    pub version: u32,
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub folds: FoldConfig,
    #[serde(default)]
    pub forest: ForestGrid,
    #[serde(default)]
    pub prototypes: PrototypeConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn config_version() -> u32 {
    CONFIG_VERSION
}
fn default_seed() -> u64 {
    42
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// CSV file; exclusive with `synthetic_rows`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Generate the built-in three-class synthetic dataset with this many rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_rows: Option<usize>,
    #[serde(default = "default_label")]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
    /// Keep only these classes (by label value).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
}

fn default_label() -> String {
    "label".into()
}
fn default_delimiter() -> char {
    ','
}
fn default_missing() -> Vec<String> {
    vec![String::new(), "NA".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    /// Inner folds for the forest grid search.
    #[serde(default = "default_grid_k")]
    pub grid_k: usize,
}

fn default_k() -> usize {
    5
}
fn default_grid_k() -> usize {
    3
}

impl Default for FoldConfig {
    fn default() -> Self {
        FoldConfig {
            k: default_k(),
            grid_k: default_grid_k(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypeConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<SelectionMethod>,
    /// Backends prototypes, critics and factuals are selected under.
    #[serde(default = "default_selection_backends")]
    pub backends: Vec<Backend>,
    /// Per-class prototype counts searched during tuning.
    #[serde(default = "default_count_min")]
    pub count_min: usize,
    #[serde(default = "default_count_max")]
    pub count_max: usize,
    /// Validation share of the inner tuning split.
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_neighbors: Option<usize>,
    /// Critic count; defaults to the number of prototypes selected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critics: Option<usize>,
    #[serde(default)]
    pub critics_per_class: bool,
}

fn default_methods() -> Vec<SelectionMethod> {
    SelectionMethod::ALL.to_vec()
}
fn default_selection_backends() -> Vec<Backend> {
    Backend::ALL.to_vec()
}
fn default_count_min() -> usize {
    1
}
fn default_count_max() -> usize {
    10
}
fn default_holdout() -> f64 {
    0.2
}

impl Default for PrototypeConfig {
    fn default() -> Self {
        PrototypeConfig {
            methods: default_methods(),
            backends: default_selection_backends(),
            count_min: default_count_min(),
            count_max: default_count_max(),
            holdout: default_holdout(),
            k_neighbors: None,
            critics: None,
            critics_per_class: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default)]
    pub numeric_tol: f64,
    #[serde(default = "yes")]
    pub ood_exclude_self: bool,
    #[serde(default)]
    pub neighborhood: Neighborhood,
    /// Backends every distance-dependent metric is computed under.
    #[serde(default = "default_eval_backends")]
    pub backends: Vec<Backend>,
    /// Proximity used by the outlier score.
    #[serde(default = "default_outlier_kind")]
    pub outlier_proximity: ProximityKind,
}

fn yes() -> bool {
    true
}
fn default_eval_backends() -> Vec<Backend> {
    vec![Backend::L2, Backend::Gap]
}
fn default_outlier_kind() -> ProximityKind {
    ProximityKind::Original
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            numeric_tol: 0.0,
            ood_exclude_self: true,
            neighborhood: Neighborhood::default(),
            backends: default_eval_backends(),
            outlier_proximity: default_outlier_kind(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Which selection supplies the prototype/critic roles.
    #[serde(default = "default_embed_method")]
    pub method: SelectionMethod,
    #[serde(default = "default_embed_backend")]
    pub backend: Backend,
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}
fn default_embed_method() -> SelectionMethod {
    SelectionMethod::Kmedoids
}
fn default_embed_backend() -> Backend {
    Backend::Gap
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            enabled: true,
            max_iter: default_max_iter(),
            method: default_embed_method(),
            backend: default_embed_backend(),
        }
    }
}

impl ExperimentConfig {
    /// Minimal config over an in-memory or synthetic dataset.
    pub fn new(name: impl Into<String>, dataset: DatasetConfig) -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            name: name.into(),
            seed: default_seed(),
            output_dir: None,
            threads: None,
            dataset,
            folds: FoldConfig::default(),
            forest: ForestGrid::default(),
            prototypes: PrototypeConfig::default(),
            metrics: MetricsConfig::default(),
            embedding: EmbeddingConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        ExperimentConfig::from_toml(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        match (&self.dataset.path, self.dataset.synthetic_rows) {
            (Some(_), Some(_)) => return bad("dataset: set either path or synthetic_rows, not both".into()),
            (None, None) => return bad("dataset: one of path or synthetic_rows is required".into()),
            _ => {}
        }
        if self.folds.k < 2 || self.folds.grid_k < 2 {
            return bad("folds: k and grid_k must be at least 2".into());
        }
        if self.forest.is_empty() {
            return bad("forest: every grid axis needs at least one value".into());
        }
        for p in self.forest.points(0) {
            p.validate().map_err(|e| Error::Config(format!("forest: {e}")))?;
        }
        let pc = &self.prototypes;
        if pc.count_min == 0 || pc.count_min > pc.count_max {
            return bad(format!(
                "prototypes: count range {}..={} is empty or starts at 0",
                pc.count_min, pc.count_max
            ));
        }
        if !(pc.holdout > 0.0 && pc.holdout < 1.0) {
            return bad("prototypes: holdout must lie strictly between 0 and 1".into());
        }
        if pc.methods.is_empty() || pc.backends.is_empty() {
            return bad("prototypes: methods and backends must be non-empty".into());
        }
        if pc.k_neighbors == Some(0) || pc.critics == Some(0) {
            return bad("prototypes: k_neighbors and critics must be at least 1".into());
        }
        if self.metrics.backends.is_empty() {
            return bad("metrics: backends must be non-empty".into());
        }
        if !(self.metrics.numeric_tol >= 0.0) {
            return bad("metrics: numeric_tol must be non-negative".into());
        }
        match self.metrics.neighborhood {
            Neighborhood::KNearest { k } if k == 0 => return bad("metrics: neighborhood k must be at least 1".into()),
            Neighborhood::Radius { radius } if !(radius > 0.0) => {
                return bad("metrics: neighborhood radius must be positive".into())
            }
            _ => {}
        }
        if self.metrics.outlier_proximity == ProximityKind::GapSym {
            return bad("metrics: outlier_proximity must be original, oob or gap".into());
        }
        if self.embedding.max_iter == 0 {
            return bad("embedding: max_iter must be at least 1".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    pub fn dataset_path(&self) -> Option<PathBuf> {
        self.dataset.path.as_ref().map(|p| self.base_dir.join(p))
    }

    fn schema(&self) -> Schema {
        let d = &self.dataset;
        Schema {
            label: d.label.clone(),
            id: d.id.clone(),
            numeric: d.numeric.clone(),
            categorical: d.categorical.clone(),
            delimiter: d.delimiter,
            missing: d.missing.clone(),
        }
    }

    /// Check the declared columns against the CSV header without loading rows.
    pub fn check_columns(&self) -> Result<()> {
        let Some(path) = self.dataset_path() else { return Ok(()) };
        let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(self.dataset.delimiter as u8)
            .from_reader(f);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let d = &self.dataset;
        for col in std::iter::once(&d.label)
            .chain(d.id.iter())
            .chain(&d.numeric)
            .chain(&d.categorical)
        {
            if !header.contains(col) {
                return Err(Error::UnknownColumn(col.clone()));
            }
        }
        Ok(())
    }

    /// Load, filter and one-hot encode the dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let raw = match (self.dataset_path(), self.dataset.synthetic_rows) {
            (Some(path), _) => data::load_csv(path, &self.schema())?,
            (None, Some(n)) => data::synth_three_class(n, self.seed)?,
            (None, None) => return Err(Error::Config("dataset source missing".into())),
        };
        let filtered = match &self.dataset.classes {
            Some(keep) => raw.filter_class_names(keep)?,
            None => raw,
        };
        filtered.encode(self.dataset.missing_policy)
    }

    fn count_range(&self) -> RangeInclusive<usize> {
        self.prototypes.count_min..=self.prototypes.count_max
    }

    /// Every seed the run derives from the master seed.
    pub fn seed_table(&self) -> BTreeMap<String, u64> {
        let s = self.seed;
        let mut t = BTreeMap::new();
        t.insert("folds".to_string(), derive(s, Stage::Folds, 0));
        t.insert("embedding".to_string(), derive(s, Stage::Embedding, 0));
        for f in 0..self.folds.k {
            let i = f as u64;
            t.insert(format!("grid_folds.{f}"), derive(s, Stage::GridFolds, i));
            t.insert(format!("forest.{f}"), derive(s, Stage::Forest, i));
            t.insert(format!("inner_split.{f}"), derive(s, Stage::InnerSplit, i));
            t.insert(format!("inner_forest.{f}"), derive(s, Stage::InnerForest, i));
        }
        t
    }
}

/// Selection under one backend with one method, as used in report keys.
pub fn selection_key(method: SelectionMethod, backend: Backend) -> String {
    format!("{method}/{backend}")
}

/// Select `counts` prototypes per class with `method`.
pub fn select_prototypes(
    dist: &DistanceMatrix,
    labels: &[usize],
    method: SelectionMethod,
    counts: &BTreeMap<usize, usize>,
    k_neighbors: Option<usize>,
) -> Result<PrototypeSet> {
    match method {
        SelectionMethod::Kmedoids => kmedoids_prototypes(dist, labels, counts),
        SelectionMethod::Hdp => hdp_prototypes(dist, labels, counts, k_neighbors, dist.backend()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningOutcome {
    /// Chosen per-class count.
    pub count: usize,
    /// `(per-class count, validation F1)` for every count tried.
    pub scores: Vec<(usize, f64)>,
}

/// Per-class prototype count maximizing nearest-prototype F1 on a
/// validation split; ties go to the smallest count. The range is clipped to
/// the smallest class of `train_labels`.
pub fn tune_prototype_count(
    train_dist: &DistanceMatrix,
    train_labels: &[usize],
    valid_cross: &Array2<f64>,
    valid_labels: &[usize],
    method: SelectionMethod,
    range: RangeInclusive<usize>,
    k_neighbors: Option<usize>,
) -> Result<TuningOutcome> {
    let smallest = data::class_counts(train_labels, train_labels.iter().max().map_or(0, |m| m + 1))
        .into_iter()
        .filter(|&c| c > 0)
        .min()
        .unwrap_or(0);
    let lo = *range.start();
    let hi = (*range.end()).min(smallest);
    if lo == 0 || lo > hi {
        return Err(Error::Param(format!(
            "prototype count range {lo}..={} does not fit the smallest class ({smallest} rows)",
            range.end()
        )));
    }
    if hi < *range.end() {
        log::warn!("prototype count range clipped to {lo}..={hi} by class size");
    }
    let scores: Vec<(usize, f64)> = (lo..=hi)
        .into_par_iter()
        .map(|c| {
            let protos = select_prototypes(train_dist, train_labels, method, &uniform_counts(train_labels, c), k_neighbors)?;
            Ok((c, nearest_prototype_f1(&protos, valid_cross, valid_labels)?))
        })
        .collect::<Result<_>>()?;
    let mut best = scores[0];
    for &(c, f) in &scores[1..] {
        if f > best.1 + 1e-12 {
            best = (c, f);
        }
    }
    Ok(TuningOutcome { count: best.0, scores })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub best_index: usize,
    pub candidates: Vec<ForestParams>,
    pub mean_scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub row_id: String,
    pub class: String,
    /// metric → backend → value (`None` = masked).
    pub values: BTreeMap<String, BTreeMap<String, Option<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub grid: GridSummary,
    pub forest_params: ForestParams,
    pub test_f1: f64,
    /// Training rows never out-of-bag (GAP/OOB rows undefined).
    pub oob_undefined_rows: usize,
    /// Selection key → tuned per-class count.
    pub tuned_counts: BTreeMap<String, usize>,
    pub tuning_scores: BTreeMap<String, Vec<(usize, f64)>>,
    pub explanations: Vec<ExplanationBundle>,
    /// Selection backend → one pair per training row.
    pub factuals: BTreeMap<String, Vec<FactualEntry>>,
    pub metrics: MetricReport,
    /// Report key → per-row metrics of prototypes and critics.
    pub items: BTreeMap<String, Vec<ItemMetrics>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub row_id: String,
    pub x: f64,
    pub y: f64,
    pub role: String,
    pub class: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResult {
    pub fold: usize,
    pub backend: Backend,
    pub stress: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub points: Vec<EmbeddingPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub source: String,
    pub n_rows: usize,
    pub n_features: usize,
    pub classes: Vec<String>,
    pub class_counts: Vec<usize>,
    pub feature_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub dataset: DatasetSummary,
    pub folds: Vec<FoldResult>,
    pub failures: Vec<FoldFailure>,
    pub averaged: MetricReport,
    /// Selection key → tuned count per fold.
    pub tuned_counts: BTreeMap<String, Vec<usize>>,
    pub embedding: Option<EmbeddingResult>,
    #[serde(skip)]
    pub artifacts: Artifacts,
}

/// Heavy outputs kept out of the JSON report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Artifacts {
    pub forests: Vec<(usize, TrainedForest)>,
    pub dataset: Option<Dataset>,
}

impl ExperimentResult {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn mean_test_f1(&self) -> Option<f64> {
        self.averaged.mean("forest", "test_f1", NO_BACKEND)
    }
}

/// Load the configured dataset and run the experiment on it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let data = config.load_dataset()?;
    run_on_dataset(config, &data)
}

/// Run on an already encoded dataset. Fold failures are recorded in the
/// result rather than aborting the other folds.
pub fn run_on_dataset(config: &ExperimentConfig, data: &Dataset) -> Result<ExperimentResult> {
    if !data.is_encoded() {
        return Err(Error::Data("dataset must be encoded before running".into()));
    }
    let plan = stratified_folds(&data.labels, config.folds.k, derive(config.seed, Stage::Folds, 0))?;
    let outputs: Vec<Result<FoldOutput>> = (0..config.folds.k)
        .into_par_iter()
        .map(|f| run_fold(config, data, &plan.train_indices(f), &plan.test_indices(f), f))
        .collect();

    let mut folds = Vec::new();
    let mut failures = Vec::new();
    let mut forests = Vec::new();
    let mut embedding = None;
    for (f, out) in outputs.into_iter().enumerate() {
        match out {
            Ok(o) => {
                forests.push((f, o.forest));
                if o.embedding.is_some() {
                    embedding = o.embedding;
                }
                folds.push(o.result);
            }
            Err(e) => {
                log::error!("{e}");
                failures.push(FoldFailure { fold: f, message: e.to_string() });
            }
        }
    }
    let averaged = MetricReport::average(&folds.iter().map(|f| f.metrics.clone()).collect::<Vec<_>>());
    let mut tuned_counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for f in &folds {
        for (k, &c) in &f.tuned_counts {
            tuned_counts.entry(k.clone()).or_default().push(c);
        }
    }
    let source = match (config.dataset_path(), config.dataset.synthetic_rows) {
        (Some(p), _) => p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        (None, Some(n)) => format!("synthetic:{n}"),
        _ => String::new(),
    };
    Ok(ExperimentResult {
        name: config.name.clone(),
        config_hash: config.hash(),
        seed: config.seed,
        seeds: config.seed_table(),
        dataset: DatasetSummary {
            source,
            n_rows: data.n_rows(),
            n_features: data.n_features(),
            classes: data.label_names.clone(),
            class_counts: data.class_counts(),
            feature_hash: data.feature_hash(),
        },
        folds,
        failures,
        averaged,
        tuned_counts,
        embedding,
        artifacts: Artifacts {
            forests,
            dataset: Some(data.clone()),
        },
    })
}

struct FoldOutput {
    result: FoldResult,
    forest: TrainedForest,
    embedding: Option<EmbeddingResult>,
}

/// Everything a fold's metric pass reads.
struct FoldContext<'a> {
    config: &'a ExperimentConfig,
    train: Dataset,
    test: Dataset,
    forest: TrainedForest,
    dists: BTreeMap<Backend, DistanceMatrix>,
    cross: BTreeMap<Backend, Array2<f64>>,
    outlier: Vec<Option<f64>>,
    ood: BTreeMap<Backend, Vec<f64>>,
    robust: BTreeMap<Backend, Vec<Option<f64>>>,
    layout: FeatureLayout,
}

fn backend_distance(forest: &TrainedForest, scaler: &Standardizer, train: &Dataset, b: Backend) -> DistanceMatrix {
    match b.proximity_kind() {
        None => l2_distance_with(scaler, train),
        Some(kind) => proximity(forest, kind).to_distance(),
    }
}

fn backend_cross(
    forest: &TrainedForest,
    scaler: &Standardizer,
    train: &Dataset,
    rows: &Array2<f64>,
    b: Backend,
) -> Result<Array2<f64>> {
    match b.proximity_kind() {
        None => Ok(l2_cross(scaler, rows, &train.features)),
        Some(kind) => cross_distances(forest, rows, kind),
    }
}

fn union(a: &[Backend], b: &[Backend]) -> Vec<Backend> {
    let mut v: Vec<Backend> = a.iter().chain(b).copied().collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn run_fold(config: &ExperimentConfig, data: &Dataset, train_idx: &[usize], test_idx: &[usize], fold: usize) -> Result<FoldOutput> {
    let seed = config.seed;
    let f64_ = fold as u64;
    let train = data.select_rows(train_idx);
    let test = data.select_rows(test_idx);
    log::info!("fold {fold}: {} train / {} test rows", train.n_rows(), test.n_rows());

    let points = config.forest.points(derive(seed, Stage::Forest, f64_));
    let grid = if points.len() == 1 {
        GridSummary {
            best_index: 0,
            candidates: points.clone(),
            mean_scores: Vec::new(),
        }
    } else {
        let plan = stratified_folds(&train.labels, config.folds.grid_k, derive(seed, Stage::GridFolds, f64_))
            .map_err(|e| e.at_stage(fold, "grid"))?;
        let r = grid_search(&train, &points, &plan).map_err(|e| e.at_stage(fold, "grid"))?;
        GridSummary {
            best_index: r.best_index,
            candidates: r.candidates,
            mean_scores: r.mean_scores,
        }
    };
    let params = grid.candidates[grid.best_index].clone();
    let forest = fit(&train, &params).map_err(|e| e.at_stage(fold, "forest"))?;
    let test_pred = forest.predict_rows(&test.features).map_err(|e| e.at_stage(fold, "forest"))?;
    let test_f1 = weighted_f1(&test_pred, &test.labels).map_err(|e| e.at_stage(fold, "forest"))?;
    let oob_undefined_rows = forest.oob_tree_counts().iter().filter(|&&c| c == 0).count();

    let scaler = Standardizer::fit(&train);
    let pc = &config.prototypes;
    let mc = &config.metrics;
    let mut needed = union(&pc.backends, &mc.backends);
    if config.embedding.enabled && fold == 0 {
        needed = union(&needed, &[config.embedding.backend]);
    }
    let dists: BTreeMap<Backend, DistanceMatrix> = needed
        .iter()
        .map(|&b| (b, backend_distance(&forest, &scaler, &train, b)))
        .collect();
    let cross: BTreeMap<Backend, Array2<f64>> = needed
        .iter()
        .map(|&b| backend_cross(&forest, &scaler, &train, &test.features, b).map(|m| (b, m)))
        .collect::<Result<_>>()
        .map_err(|e| e.at_stage(fold, "proximity"))?;

    // Prototype-count tuning on an inner split of the training fold.
    let (inner_idx, valid_idx) = stratified_split(&train.labels, pc.holdout, derive(seed, Stage::InnerSplit, f64_));
    let inner = train.select_rows(&inner_idx);
    let valid = train.select_rows(&valid_idx);
    let inner_scaler = Standardizer::fit(&inner);
    let inner_forest = if pc.backends.iter().any(|b| b.proximity_kind().is_some()) {
        let p = ForestParams {
            seed: derive(seed, Stage::InnerForest, f64_),
            ..params.clone()
        };
        Some(fit(&inner, &p).map_err(|e| e.at_stage(fold, "tuning"))?)
    } else {
        None
    };
    let mut tuned_counts = BTreeMap::new();
    let mut tuning_scores = BTreeMap::new();
    let mut selections: Vec<(SelectionMethod, Backend, PrototypeSet, CriticSet)> = Vec::new();
    for &b in &pc.backends {
        let f = inner_forest.as_ref().unwrap_or(&forest);
        let inner_dist = backend_distance(f, &inner_scaler, &inner, b);
        let valid_cross =
            backend_cross(f, &inner_scaler, &inner, &valid.features, b).map_err(|e| e.at_stage(fold, "tuning"))?;
        for &m in &pc.methods {
            let key = selection_key(m, b);
            let t = tune_prototype_count(
                &inner_dist,
                &inner.labels,
                &valid_cross,
                &valid.labels,
                m,
                config.count_range(),
                pc.k_neighbors,
            )
            .map_err(|e| e.at_stage(fold, "tuning"))?;
            let protos = select_prototypes(&dists[&b], &train.labels, m, &uniform_counts(&train.labels, t.count), pc.k_neighbors)
                .map_err(|e| e.at_stage(fold, "selection"))?;
            let critics = if pc.critics_per_class {
                select_critics_per_class(&protos, &dists[&b], &train.labels, pc.critics.unwrap_or(t.count))
            } else {
                let m_critics = pc.critics.unwrap_or(protos.len()).min(train.n_rows() - protos.len());
                select_critics(&protos, &dists[&b], m_critics)
            }
            .map_err(|e| e.at_stage(fold, "critics"))?;
            tuned_counts.insert(key.clone(), t.count);
            tuning_scores.insert(key, t.scores);
            selections.push((m, b, protos, critics));
        }
    }

    // Per-row caches for the metric pass.
    let outlier_prox = proximity(&forest, mc.outlier_proximity);
    let outlier: Vec<Option<f64>> = (0..train.n_rows())
        .into_par_iter()
        .map(|i| outlier_score(i, &outlier_prox, &train.labels).ok().flatten())
        .collect();
    let probs: Vec<Vec<f64>> = (0..train.n_rows()).map(|i| forest.train_proba(i)).collect();
    let mut ood = BTreeMap::new();
    let mut robust = BTreeMap::new();
    for &b in &mc.backends {
        let d = &dists[&b];
        ood.insert(
            b,
            (0..train.n_rows())
                .into_par_iter()
                .map(|i| ood_distance(i, d, mc.ood_exclude_self))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at_stage(fold, "metrics"))?,
        );
        robust.insert(
            b,
            (0..train.n_rows())
                .into_par_iter()
                .map(|i| robustness(i, &probs, d, &mc.neighborhood).ok().flatten())
                .collect(),
        );
    }
    let ctx = FoldContext {
        config,
        layout: FeatureLayout::of(&train),
        train,
        test,
        forest,
        dists,
        cross,
        outlier,
        ood,
        robust,
    };

    let mut metrics = MetricReport::default();
    metrics.insert("forest", "test_f1", NO_BACKEND, Aggregate::single(test_f1));
    let mut items = BTreeMap::new();
    let mut explanations = Vec::new();
    for (m, b, protos, critics) in &selections {
        let key = selection_key(*m, *b);
        score_selection(&ctx, &key, *b, protos, critics, &mut metrics, &mut items)
            .map_err(|e| e.at_stage(fold, "metrics"))?;
        explanations.push(ExplanationBundle::new(&ctx.train, protos, critics, &[]));
    }

    let mut factuals = BTreeMap::new();
    let mut fold0_pairs: Option<Vec<FactualPair>> = None;
    for &b in &pc.backends {
        let d = &ctx.dists[&b];
        let pairs: Vec<FactualPair> = (0..ctx.train.n_rows())
            .into_par_iter()
            .map(|q| explain::factual_pair(q, d, &ctx.train.labels))
            .collect::<Result<_>>()
            .map_err(|e| e.at_stage(fold, "factuals"))?;
        score_factuals(&ctx, b, &pairs, &mut metrics).map_err(|e| e.at_stage(fold, "metrics"))?;
        factuals.insert(
            b.to_string(),
            pairs
                .iter()
                .map(|p| FactualEntry {
                    query_id: ctx.train.row_ids[p.query].clone(),
                    semi_id: ctx.train.row_ids[p.semi_factual].clone(),
                    counter_id: ctx.train.row_ids[p.counter_factual].clone(),
                })
                .collect(),
        );
        if b == config.embedding.backend {
            fold0_pairs = Some(pairs);
        }
    }

    let embedding = if config.embedding.enabled && fold == 0 {
        Some(embed_fold(&ctx, &selections, fold0_pairs.as_deref()).map_err(|e| e.at_stage(fold, "embedding"))?)
    } else {
        None
    };

    Ok(FoldOutput {
        result: FoldResult {
            fold,
            train_size: ctx.train.n_rows(),
            test_size: ctx.test.n_rows(),
            grid,
            forest_params: params,
            test_f1,
            oob_undefined_rows,
            tuned_counts,
            tuning_scores,
            explanations,
            factuals,
            metrics,
            items,
        },
        forest: ctx.forest,
        embedding,
    })
}

fn set_metrics(ctx: &FoldContext<'_>, explanans: &str, rows: &[usize], metrics: &mut MetricReport) -> Result<()> {
    let kind = ctx.config.metrics.outlier_proximity.as_str();
    metrics.insert(explanans, "count", NO_BACKEND, Aggregate::single(rows.len() as f64));
    metrics.insert(explanans, "outlier_score", kind, Aggregate::of(rows.iter().map(|&i| ctx.outlier[i])));
    metrics.insert(
        explanans,
        "confusability",
        kind,
        Aggregate::of(rows.iter().map(|&i| ctx.outlier[i].map(|s| 1.0 - s))),
    );
    for (&e, d) in ctx.ood.keys().map(|b| (b, &ctx.dists[b])) {
        let be = e.as_str();
        metrics.insert(explanans, "ood_distance", be, Aggregate::of(rows.iter().map(|&i| Some(ctx.ood[&e][i]))));
        metrics.insert(explanans, "robustness", be, Aggregate::of(rows.iter().map(|&i| ctx.robust[&e][i])));
        if !rows.is_empty() {
            metrics.insert(explanans, "diversity", be, Aggregate::single(diversity(rows, d)?));
        }
    }
    Ok(())
}

fn score_selection(
    ctx: &FoldContext<'_>,
    key: &str,
    selection: Backend,
    protos: &PrototypeSet,
    critics: &CriticSet,
    metrics: &mut MetricReport,
    items: &mut BTreeMap<String, Vec<ItemMetrics>>,
) -> Result<()> {
    let pkey = format!("prototypes/{key}");
    let ckey = format!("critics/{key}");
    let prows = protos.all();
    set_metrics(ctx, &pkey, &prows, metrics)?;
    set_metrics(ctx, &ckey, &critics.indices, metrics)?;
    metrics.insert(
        &pkey,
        "nearest_prototype_f1",
        "matched",
        Aggregate::single(nearest_prototype_f1(protos, &ctx.cross[&selection], &ctx.test.labels)?),
    );
    let mut compact: BTreeMap<usize, BTreeMap<String, Option<f64>>> = BTreeMap::new();
    for &e in ctx.ood.keys() {
        let d = &ctx.dists[&e];
        metrics.insert(
            &pkey,
            "nearest_prototype_f1",
            e.as_str(),
            Aggregate::single(nearest_prototype_f1(protos, &ctx.cross[&e], &ctx.test.labels)?),
        );
        let assigned = assignments(protos, d, &ctx.train.labels);
        let values: Vec<(usize, f64)> = assigned.iter().map(|(&p, rows)| (p, compactness(p, rows, d))).collect();
        metrics.insert(&pkey, "compactness", e.as_str(), Aggregate::of(values.iter().map(|v| Some(v.1))));
        for (p, v) in values {
            compact.entry(p).or_default().insert(e.to_string(), Some(v));
        }
    }
    let kind = ctx.config.metrics.outlier_proximity.as_str();
    let item = |i: usize, extra: Option<(&str, BTreeMap<String, Option<f64>>)>| {
        let mut values: BTreeMap<String, BTreeMap<String, Option<f64>>> = BTreeMap::new();
        values.entry("outlier_score".into()).or_default().insert(kind.into(), ctx.outlier[i]);
        for &e in ctx.ood.keys() {
            values.entry("ood_distance".into()).or_default().insert(e.to_string(), Some(ctx.ood[&e][i]));
            values.entry("robustness".into()).or_default().insert(e.to_string(), ctx.robust[&e][i]);
        }
        if let Some((name, m)) = extra {
            values.insert(name.into(), m);
        }
        ItemMetrics {
            row_id: ctx.train.row_ids[i].clone(),
            class: ctx.train.label_names[ctx.train.labels[i]].clone(),
            values,
        }
    };
    items.insert(
        pkey,
        prows.iter().map(|&i| item(i, Some(("compactness", compact.get(&i).cloned().unwrap_or_default())))).collect(),
    );
    items.insert(
        ckey,
        critics
            .indices
            .iter()
            .zip(&critics.witness_values)
            .map(|(&i, &w)| item(i, Some(("witness", BTreeMap::from([(selection.to_string(), Some(w))])))))
            .collect(),
    );
    Ok(())
}

fn score_factuals(ctx: &FoldContext<'_>, selection: Backend, pairs: &[FactualPair], metrics: &mut MetricReport) -> Result<()> {
    let tol = ctx.config.metrics.numeric_tol;
    let kind = ctx.config.metrics.outlier_proximity.as_str();
    for (name, pick) in [
        ("semi_factuals", (|p: &FactualPair| p.semi_factual) as fn(&FactualPair) -> usize),
        ("counter_factuals", |p: &FactualPair| p.counter_factual),
    ] {
        let key = format!("{name}/{selection}");
        let chosen: Vec<usize> = pairs.iter().map(pick).collect();
        metrics.insert(
            &key,
            "sparsity",
            NO_BACKEND,
            Aggregate::of(
                pairs
                    .iter()
                    .zip(&chosen)
                    .map(|(p, &e)| sparsity(ctx.train.row(p.query), ctx.train.row(e), &ctx.layout, tol)),
            ),
        );
        metrics.insert(&key, "outlier_score", kind, Aggregate::of(chosen.iter().map(|&e| ctx.outlier[e])));
        metrics.insert(
            &key,
            "confusability",
            kind,
            Aggregate::of(chosen.iter().map(|&e| ctx.outlier[e].map(|s| 1.0 - s))),
        );
        let mut distinct = chosen.clone();
        distinct.sort_unstable();
        distinct.dedup();
        for &b in ctx.ood.keys() {
            let d = &ctx.dists[&b];
            let be = b.as_str();
            metrics.insert(
                &key,
                "distance",
                be,
                Aggregate::of(pairs.iter().zip(&chosen).map(|(p, &e)| Some(d.get(p.query, e)))),
            );
            metrics.insert(&key, "ood_distance", be, Aggregate::of(chosen.iter().map(|&e| Some(ctx.ood[&b][e]))));
            metrics.insert(&key, "robustness", be, Aggregate::of(chosen.iter().map(|&e| ctx.robust[&b][e])));
            metrics.insert(&key, "diversity", be, Aggregate::single(diversity(&distinct, d)?));
        }
    }
    Ok(())
}

/// Role precedence when a row plays several parts.
const ROLES: [&str; 6] = ["prototype", "critic", "query", "semi", "counter", "point"];

fn embed_fold(
    ctx: &FoldContext<'_>,
    selections: &[(SelectionMethod, Backend, PrototypeSet, CriticSet)],
    pairs: Option<&[FactualPair]>,
) -> Result<EmbeddingResult> {
    let ec = &ctx.config.embedding;
    let d = &ctx.dists[&ec.backend];
    let e = mds_embed(d, 2, ec.max_iter, derive(ctx.config.seed, Stage::Embedding, 0))?;
    let n = ctx.train.n_rows();
    let mut role = vec![ROLES.len() - 1; n];
    let mut mark = |i: usize, r: usize| role[i] = role[i].min(r);
    if let Some((_, _, p, c)) = selections.iter().find(|s| s.0 == ec.method && s.1 == ec.backend) {
        p.all().into_iter().for_each(|i| mark(i, 0));
        c.indices.iter().for_each(|&i| mark(i, 1));
    }
    if let Some(pair) = pairs.and_then(|p| p.first()) {
        mark(pair.query, 2);
        mark(pair.semi_factual, 3);
        mark(pair.counter_factual, 4);
    }
    let points = (0..n)
        .map(|i| EmbeddingPoint {
            row_id: ctx.train.row_ids[i].clone(),
            x: e.coords[[i, 0]],
            y: e.coords[[i, 1]],
            role: ROLES[role[i]].to_string(),
            class: ctx.train.label_names[ctx.train.labels[i]].clone(),
        })
        .collect();
    Ok(EmbeddingResult {
        fold: 0,
        backend: ec.backend,
        stress: e.stress,
        iterations: e.iterations,
        points,
    })
}

pub fn write_embedding_csv(path: impl AsRef<Path>, points: &[EmbeddingPoint]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_embedding_csv(path: impl AsRef<Path>) -> Result<Vec<EmbeddingPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|p| p.map_err(Error::from)).collect()
}

/// Resolved config plus the derived seeds, written next to the reports.
#[derive(Serialize, Deserialize)]
struct LockFile {
    config_hash: String,
    /// Decimal strings: derived seeds use the full u64 range.
    seeds: BTreeMap<String, String>,
    config: ExperimentConfig,
}

/// Write `report.json`, `metrics.csv`, `embedding.csv`, one model per fold,
/// `config.lock` and the encoded dataset snapshot into `dir`.
pub fn emit_reports(result: &ExperimentResult, config: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let report = dir.join("report.json");
    let mut body = serde_json::to_vec_pretty(result)?;
    body.push(b'\n');
    std::fs::write(&report, body).map_err(|e| Error::io(&report, e))?;
    written.push(report);

    let metrics = dir.join("metrics.csv");
    let mut scopes: Vec<(String, &MetricReport)> = vec![("mean".into(), &result.averaged)];
    scopes.extend(result.folds.iter().map(|f| (format!("fold{}", f.fold), &f.metrics)));
    crate::metrics::write_metrics_csv(&metrics, &scopes)?;
    written.push(metrics);

    if let Some(e) = &result.embedding {
        let path = dir.join("embedding.csv");
        write_embedding_csv(&path, &e.points)?;
        written.push(path);
    }
    for (f, forest) in &result.artifacts.forests {
        let path = dir.join(format!("forest_fold{f}.model"));
        forest.save(&path)?;
        written.push(path);
    }
    if let Some(ds) = &result.artifacts.dataset {
        let path = dir.join("dataset.rfds");
        ds.save_cache(&path)?;
        written.push(path);
    }
    let lock = dir.join("config.lock");
    let text = toml::to_string(&LockFile {
        config_hash: config.hash(),
        seeds: config.seed_table().into_iter().map(|(k, v)| (k, v.to_string())).collect(),
        config: config.clone(),
    })
    .map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&lock, text).map_err(|e| Error::io(&lock, e))?;
    written.push(lock);
    Ok(written)
}
