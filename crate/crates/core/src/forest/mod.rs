//! Bagged CART classification forests.
//!
//! Besides the trees themselves, a [`TrainedForest`] keeps every tree's
//! in-bag multiplicities and the leaf each training row lands in, which is
//! everything the proximity module needs without retraining.

mod grid;
mod tree;

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{class_counts, Dataset};
use crate::error::{Error, Result};
use crate::seeds;

pub use grid::{grid_search, ForestGrid, GridResult};
pub use tree::{gini, Node, TreeRecord};
use tree::TreeSettings;

/// Features considered per split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", untagged)]
pub enum MaxFeatures {
    Rule(FeatureRule),
    Fraction(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRule {
    Sqrt,
    Log2,
    All,
}

impl MaxFeatures {
    pub const SQRT: MaxFeatures = MaxFeatures::Rule(FeatureRule::Sqrt);
    pub const LOG2: MaxFeatures = MaxFeatures::Rule(FeatureRule::Log2);
    pub const ALL: MaxFeatures = MaxFeatures::Rule(FeatureRule::All);

    /// Number of features for a dataset with `k` columns (at least 1).
    pub fn resolve(&self, k: usize) -> usize {
        let m = match self {
            MaxFeatures::Rule(FeatureRule::Sqrt) => (k as f64).sqrt().floor() as usize,
            MaxFeatures::Rule(FeatureRule::Log2) => (k as f64).log2().floor() as usize,
            MaxFeatures::Rule(FeatureRule::All) => k,
            MaxFeatures::Fraction(f) => (f * k as f64).floor() as usize,
        };
        m.clamp(1, k.max(1))
    }
}

impl std::fmt::Display for MaxFeatures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaxFeatures::Rule(FeatureRule::Sqrt) => write!(f, "sqrt"),
            MaxFeatures::Rule(FeatureRule::Log2) => write!(f, "log2"),
            MaxFeatures::Rule(FeatureRule::All) => write!(f, "all"),
            MaxFeatures::Fraction(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    None,
    #[default]
    Balanced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub class_weighting: ClassWeighting,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_features: MaxFeatures::SQRT,
            max_depth: None,
            min_leaf: 1,
            class_weighting: ClassWeighting::Balanced,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Param("n_trees must be at least 1".into()));
        }
        if let MaxFeatures::Fraction(f) = self.max_features {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Param(format!("max_features fraction {f} not in (0, 1]")));
            }
        }
        if self.min_leaf == 0 {
            return Err(Error::Param("min_leaf must be at least 1".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::Param("max_depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// Below this many trees some rows are likely never out-of-bag.
pub const MIN_TREES_FOR_OOB: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedForest {
    pub trees: Vec<TreeRecord>,
    pub params: ForestParams,
    pub n_classes: usize,
    pub n_features: usize,
    pub class_weights: Vec<f64>,
    pub train_row_ids: Vec<String>,
    pub feature_hash: String,
}

const MODEL_FORMAT: &str = "rfexplain-forest";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    forest: TrainedForest,
}

/// Fit a forest of `params.n_trees` trees, each on a size-n bootstrap drawn
/// from its own RNG stream.
pub fn fit(dataset: &Dataset, params: &ForestParams) -> Result<TrainedForest> {
    params.validate()?;
    let n = dataset.n_rows();
    let k = dataset.n_features();
    if k == 0 {
        return Err(Error::Data("dataset has no features".into()));
    }
    if n < 2 {
        return Err(Error::Data("need at least two rows to fit a forest".into()));
    }
    if !dataset.is_encoded() {
        return Err(Error::Data(
            "dataset must be encoded (no categoricals or missing cells)".into(),
        ));
    }
    let n_classes = dataset.n_classes();
    let counts = class_counts(&dataset.labels, n_classes);
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Data("need at least two populated classes".into()));
    }
    let class_weights: Vec<f64> = match params.class_weighting {
        ClassWeighting::None => vec![1.0; n_classes],
        ClassWeighting::Balanced => counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    0.0
                } else {
                    n as f64 / (n_classes as f64 * c as f64)
                }
            })
            .collect(),
    };
    if params.n_trees < MIN_TREES_FOR_OOB {
        log::warn!(
            "forest with {} trees (< {MIN_TREES_FOR_OOB}): some rows may never be out-of-bag",
            params.n_trees
        );
    }
    let settings = TreeSettings {
        max_features: params.max_features.resolve(k),
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        n_classes,
    };
    let trees: Vec<TreeRecord> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds::rng(params.seed, t as u64);
            let mut inbag = vec![0u32; n];
            for _ in 0..n {
                inbag[rng.random_range(0..n)] += 1;
            }
            tree::grow(
                &dataset.features,
                &dataset.labels,
                &class_weights,
                inbag,
                &settings,
                &mut rng,
            )
        })
        .collect();
    let forest = TrainedForest {
        trees,
        params: params.clone(),
        n_classes,
        n_features: k,
        class_weights,
        train_row_ids: dataset.row_ids.clone(),
        feature_hash: dataset.feature_hash(),
    };
    let never_oob = forest.oob_tree_counts().iter().filter(|&&c| c == 0).count();
    if never_oob > 0 {
        log::warn!("{never_oob} training rows are in-bag in every tree; their OOB quantities are undefined");
    }
    Ok(forest)
}

/// Index of the largest value; values within 1e-12 of the maximum count as
/// tied and the lowest index wins.
pub fn argmax(values: &[f64]) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .position(|&v| v >= max - 1e-12)
        .unwrap_or(0)
}

impl TrainedForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_train(&self) -> usize {
        self.train_row_ids.len()
    }

    fn check_dim(&self, x: ArrayView1<'_, f64>) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Leaf id of `x` in every tree.
    pub fn leaves(&self, x: ArrayView1<'_, f64>) -> Result<Vec<u32>> {
        self.check_dim(x)?;
        Ok(self.trees.iter().map(|t| t.leaf(x)).collect())
    }

    /// Mean of the per-tree leaf vote distributions.
    pub fn predict_proba(&self, x: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut p = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (acc, v) in p.iter_mut().zip(t.votes(t.leaf(x))) {
                *acc += v;
            }
        }
        let nt = self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v /= nt);
        Ok(p)
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    pub fn predict_rows(&self, features: &Array2<f64>) -> Result<Vec<usize>> {
        (0..features.nrows())
            .into_par_iter()
            .map(|i| self.predict(features.row(i)))
            .collect()
    }

    /// Class probabilities of training row `i` from its stored leaves.
    pub fn train_proba(&self, i: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (acc, v) in p.iter_mut().zip(t.votes(t.leaf_of[i])) {
                *acc += v;
            }
        }
        let nt = self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v /= nt);
        p
    }

    /// Number of trees in which each training row is out-of-bag (|S_i|).
    pub fn oob_tree_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_train()];
        for t in &self.trees {
            for (i, &c) in t.inbag.iter().enumerate() {
                if c == 0 {
                    counts[i] += 1;
                }
            }
        }
        counts
    }

    /// Out-of-bag class probabilities; `None` where the row is never OOB.
    pub fn oob_proba(&self) -> Vec<Option<Vec<f64>>> {
        (0..self.n_train())
            .into_par_iter()
            .map(|i| {
                let mut p = vec![0.0; self.n_classes];
                let mut used = 0usize;
                for t in self.trees.iter().filter(|t| t.is_oob(i)) {
                    for (acc, v) in p.iter_mut().zip(t.votes(t.leaf_of[i])) {
                        *acc += v;
                    }
                    used += 1;
                }
                (used > 0).then(|| {
                    p.iter_mut().for_each(|v| *v /= used as f64);
                    p
                })
            })
            .collect()
    }

    /// Out-of-bag predicted labels; `None` where the row is never OOB.
    pub fn oob_predict(&self) -> Vec<Option<usize>> {
        self.oob_proba()
            .into_iter()
            .map(|p| p.map(|p| argmax(&p)))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            forest: self.clone(),
        };
        let bytes = serde_json::to_vec(&file)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainedForest> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Model(format!("{}: {e}", path.display())))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        Ok(file.forest)
    }

    /// Rows of `dataset` in training order, checking that the dataset is the
    /// one this forest was trained on.
    pub fn training_view(&self, dataset: &Dataset) -> Result<Dataset> {
        if dataset.feature_hash() != self.feature_hash || dataset.n_features() != self.n_features {
            return Err(Error::Model(
                "dataset columns do not match the model's feature layout".into(),
            ));
        }
        let index: std::collections::HashMap<&str, usize> = dataset
            .row_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let rows = self
            .train_row_ids
            .iter()
            .map(|id| {
                index.get(id.as_str()).copied().ok_or_else(|| {
                    Error::Model(format!("training row '{id}' is missing from the dataset"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(dataset.select_rows(&rows))
    }
}

/// Support-weighted mean of per-class F1 scores.
pub fn weighted_f1(predicted: &[usize], actual: &[usize]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != actual.len() {
        return Err(Error::Param(format!(
            "weighted_f1 needs equal non-empty inputs (got {} and {})",
            predicted.len(),
            actual.len()
        )));
    }
    let n_classes = predicted.iter().chain(actual).max().map_or(0, |m| m + 1);
    let mut tp = vec![0usize; n_classes];
    let mut pred_count = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    for (&p, &a) in predicted.iter().zip(actual) {
        pred_count[p] += 1;
        support[a] += 1;
        if p == a {
            tp[p] += 1;
        }
    }
    let total = actual.len() as f64;
    let mut score = 0.0;
    for c in 0..n_classes {
        let denom = pred_count[c] + support[c];
        if support[c] == 0 || denom == 0 {
            continue;
        }
        let f1 = 2.0 * tp[c] as f64 / denom as f64;
        score += f1 * support[c] as f64 / total;
    }
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_three_class, MissingPolicy};
    use ndarray::array;

    pub(crate) fn blobs(n_per: usize, gap: f64, seed: u64) -> Dataset {
        use rand_distr::{Distribution, Normal};
        let mut rng = seeds::rng(seed, 99);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let n = 2 * n_per;
        let x = Array2::from_shape_fn((n, 2), |(i, _)| {
            let c = (i % 2) as f64;
            c * gap + noise.sample(&mut rng)
        });
        Dataset::from_parts(x, (0..n).map(|i| i % 2).collect(), None).unwrap()
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let ds = blobs(40, 12.0, 1);
        let f = fit(&ds, &ForestParams { n_trees: 50, ..Default::default() }).unwrap();
        let pred = f.predict_rows(&ds.features).unwrap();
        assert_eq!(pred, ds.labels);
        assert_eq!(f.n_trees(), 50);
    }

    #[test]
    fn fit_is_deterministic() {
        let ds = blobs(30, 2.0, 2);
        let p = ForestParams { n_trees: 20, seed: 7, ..Default::default() };
        assert_eq!(fit(&ds, &p).unwrap(), fit(&ds, &p).unwrap());
        let other = fit(&ds, &ForestParams { seed: 8, ..p.clone() }).unwrap();
        assert_ne!(other.trees[0].inbag, fit(&ds, &p).unwrap().trees[0].inbag);
    }

    #[test]
    fn tree_records_satisfy_bootstrap_invariants() {
        let ds = blobs(25, 1.0, 3);
        let f = fit(&ds, &ForestParams { n_trees: 15, ..Default::default() }).unwrap();
        for t in &f.trees {
            assert_eq!(t.inbag.iter().map(|&c| c as usize).sum::<usize>(), ds.n_rows());
            for i in 0..ds.n_rows() {
                assert_eq!(t.is_oob(i), t.inbag[i] == 0);
                assert_eq!(t.leaf(ds.row(i)), t.leaf_of[i]);
                assert!(matches!(t.nodes[t.leaf_of[i] as usize], Node::Leaf { .. }));
            }
        }
    }

    #[test]
    fn oob_fraction_matches_bootstrap_expectation() {
        // E[OOB fraction] = (1 - 1/20)^20 ≈ 0.3585 for n = 20.
        let expected = (1.0f64 - 1.0 / 20.0).powi(20);
        let ds = blobs(10, 3.0, 4);
        let mut total = 0.0;
        for seed in 0..100 {
            let f = fit(&ds, &ForestParams { n_trees: 5, seed, ..Default::default() }).unwrap();
            for t in &f.trees {
                let oob = t.oob_flags().iter().filter(|&&b| b).count();
                total += oob as f64 / 20.0;
            }
        }
        let mean = total / 500.0;
        assert!((mean - expected).abs() < 0.05, "mean OOB fraction {mean}");
    }

    #[test]
    fn predict_proba_sums_to_one_and_checks_dims() {
        let ds = blobs(20, 1.0, 5);
        let f = fit(&ds, &ForestParams { n_trees: 30, ..Default::default() }).unwrap();
        for i in 0..ds.n_rows() {
            let p = f.predict_proba(ds.row(i)).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v >= 0.0));
            assert_eq!(p, f.train_proba(i));
        }
        assert!(matches!(
            f.predict_proba(array![1.0, 2.0, 3.0].view()),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn predict_proba_averages_tree_votes() {
        let ds = blobs(5, 1.0, 6);
        let mut f = fit(&ds, &ForestParams { n_trees: 2, ..Default::default() }).unwrap();
        f.trees[0].nodes = vec![Node::Leaf { votes: vec![1.0, 0.0] }];
        f.trees[1].nodes = vec![Node::Leaf { votes: vec![0.0, 1.0] }];
        assert_eq!(f.predict_proba(ds.row(0)).unwrap(), vec![0.5, 0.5]);
        f.trees[1].nodes = vec![Node::Leaf { votes: vec![1.0, 0.0] }];
        assert_eq!(f.predict_proba(ds.row(0)).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn hand_traced_three_tree_forest() {
        // Six points on a line; three fixed stumps traced by hand.
        let ds = Dataset::from_parts(
            array![[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]],
            vec![0, 0, 0, 1, 1, 1],
            None,
        )
        .unwrap();
        let mut f = fit(&ds, &ForestParams { n_trees: 3, ..Default::default() }).unwrap();
        let stump = |thr: f64, l: [f64; 2], r: [f64; 2]| {
            vec![
                Node::Split { feature: 0, threshold: thr, left: 1, right: 2 },
                Node::Leaf { votes: l.to_vec() },
                Node::Leaf { votes: r.to_vec() },
            ]
        };
        f.trees[0].nodes = stump(2.5, [1.0, 0.0], [0.0, 1.0]);
        f.trees[1].nodes = stump(1.5, [1.0, 0.0], [0.25, 0.75]);
        f.trees[2].nodes = stump(3.5, [0.6, 0.4], [0.0, 1.0]);
        // x = 2: left, right, left -> (1 + 0.25 + 0.6)/3, (0 + 0.75 + 0.4)/3
        let p = f.predict_proba(array![2.0].view()).unwrap();
        assert!((p[0] - 1.85 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.15 / 3.0).abs() < 1e-12);
        // x = 3: right, right, left -> (0 + 0.25 + 0.6)/3
        let p = f.predict_proba(array![3.0].view()).unwrap();
        assert!((p[0] - 0.85 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn oob_predict_marks_never_oob_rows() {
        let ds = blobs(5, 4.0, 7);
        let mut f = fit(&ds, &ForestParams { n_trees: 1, ..Default::default() }).unwrap();
        let pred = f.oob_predict();
        for i in 0..ds.n_rows() {
            assert_eq!(pred[i].is_none(), !f.trees[0].is_oob(i));
        }
        f.trees[0].inbag = vec![1; ds.n_rows()];
        assert!(f.oob_predict().iter().all(Option::is_none));
    }

    #[test]
    fn oob_accuracy_on_separable_blobs() {
        let ds = blobs(100, 8.0, 8);
        let f = fit(&ds, &ForestParams { n_trees: 500, ..Default::default() }).unwrap();
        let pred = f.oob_predict();
        let correct = pred
            .iter()
            .zip(&ds.labels)
            .filter(|(p, y)| **p == Some(**y))
            .count();
        assert!(correct as f64 / ds.n_rows() as f64 >= 0.95);
    }

    #[test]
    fn children_gini_never_exceeds_parent() {
        let ds = blobs(40, 1.0, 9);
        let f = fit(&ds, &ForestParams { n_trees: 10, ..Default::default() }).unwrap();
        for t in &f.trees {
            // Weighted class totals per node from the in-bag draws.
            let mut node_w = vec![vec![0.0; 2]; t.nodes.len()];
            for i in 0..ds.n_rows() {
                if t.inbag[i] == 0 {
                    continue;
                }
                let w = t.inbag[i] as f64 * f.class_weights[ds.labels[i]];
                let mut id = 0usize;
                loop {
                    node_w[id][ds.labels[i]] += w;
                    match &t.nodes[id] {
                        Node::Leaf { .. } => break,
                        Node::Split { feature, threshold, left, right } => {
                            id = if ds.features[[i, *feature]] <= *threshold { *left } else { *right } as usize;
                        }
                    }
                }
            }
            for (id, node) in t.nodes.iter().enumerate() {
                if let Node::Split { left, right, .. } = node {
                    let wp: f64 = node_w[id].iter().sum();
                    let wl: f64 = node_w[*left as usize].iter().sum();
                    let wr: f64 = node_w[*right as usize].iter().sum();
                    let children = (wl * gini(&node_w[*left as usize]) + wr * gini(&node_w[*right as usize])) / wp;
                    assert!(children <= gini(&node_w[id]) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn synthetic_data_single_shallow_tree() {
        let ds = synth_three_class(300, 3).unwrap().encode(MissingPolicy::Error).unwrap();
        let p = ForestParams {
            n_trees: 1,
            max_depth: Some(3),
            max_features: MaxFeatures::ALL,
            ..Default::default()
        };
        let f = fit(&ds, &p).unwrap();
        let pred = f.predict_rows(&ds.features).unwrap();
        let acc = pred.iter().zip(&ds.labels).filter(|(a, b)| a == b).count() as f64 / 300.0;
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn fit_rejects_degenerate_inputs() {
        let one_class = Dataset::from_parts(array![[0.0], [1.0]], vec![0, 0], None).unwrap();
        assert!(fit(&one_class, &ForestParams::default()).is_err());
        let no_features = Dataset::from_parts(Array2::zeros((4, 0)), vec![0, 1, 0, 1], None).unwrap();
        assert!(fit(&no_features, &ForestParams::default()).is_err());
        let ds = blobs(5, 1.0, 1);
        assert!(fit(&ds, &ForestParams { n_trees: 0, ..Default::default() }).is_err());
        assert!(fit(&ds, &ForestParams { max_features: MaxFeatures::Fraction(1.5), ..Default::default() }).is_err());
    }

    #[test]
    fn weighted_f1_values() {
        assert_eq!(weighted_f1(&[0, 1, 1], &[0, 1, 1]).unwrap(), 1.0);
        assert_eq!(weighted_f1(&[1, 0, 1], &[0, 1, 0]).unwrap(), 0.0);
        // Confusion [[8,2],[3,7]] (rows = actual).
        let mut actual = vec![0; 10];
        actual.extend(vec![1; 10]);
        let mut pred = vec![0; 8];
        pred.extend(vec![1; 2]);
        pred.extend(vec![0; 3]);
        pred.extend(vec![1; 7]);
        let f1 = weighted_f1(&pred, &actual).unwrap();
        let expected = 0.5 * (16.0 / 21.0) + 0.5 * (14.0 / 19.0);
        assert!((f1 - expected).abs() < 1e-12);
        assert!((f1 - 0.7494).abs() < 5e-5);
        assert!(weighted_f1(&[], &[]).is_err());
        assert!(weighted_f1(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn model_roundtrip_and_mismatch() {
        let ds = blobs(10, 2.0, 10);
        let f = fit(&ds, &ForestParams { n_trees: 5, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.model");
        f.save(&path).unwrap();
        let g = TrainedForest::load(&path).unwrap();
        assert_eq!(f, g);
        assert_eq!(g.training_view(&ds).unwrap(), ds);
        let mut other = ds.clone();
        other.row_ids[3] = "zzz".into();
        assert!(matches!(g.training_view(&other), Err(Error::Model(_))));
        std::fs::write(&path, b"{\"format\":\"x\",\"version\":9,\"forest\":null}").unwrap();
        assert!(TrainedForest::load(&path).is_err());
    }

    #[test]
    fn max_features_resolution() {
        assert_eq!(MaxFeatures::SQRT.resolve(64), 8);
        assert_eq!(MaxFeatures::LOG2.resolve(64), 6);
        assert_eq!(MaxFeatures::Fraction(0.5).resolve(7), 3);
        assert_eq!(MaxFeatures::LOG2.resolve(1), 1);
        assert_eq!(MaxFeatures::ALL.resolve(5), 5);
    }
}
