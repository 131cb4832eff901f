use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, weighted_f1, ClassWeighting, ForestParams, MaxFeatures};
use crate::data::{Dataset, FoldPlan};
use crate::error::{Error, Result};

/// Hyperparameter lattice searched by [`grid_search`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestGrid {
    #[serde(default = "default_trees")]
    pub n_trees: Vec<usize>,
    #[serde(default = "default_features")]
    pub max_features: Vec<MaxFeatures>,
    /// `0` in config files stands for unbounded depth.
    #[serde(default = "default_depths", with = "depth_list")]
    pub max_depth: Vec<Option<usize>>,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    #[serde(default)]
    pub class_weighting: ClassWeighting,
}

fn default_trees() -> Vec<usize> {
    vec![100, 300, 500]
}
fn default_features() -> Vec<MaxFeatures> {
    vec![MaxFeatures::SQRT, MaxFeatures::LOG2, MaxFeatures::Fraction(0.5)]
}
fn default_depths() -> Vec<Option<usize>> {
    vec![Some(8), Some(16), None]
}
fn default_min_leaf() -> usize {
    1
}

mod depth_list {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Option<usize>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|d| d.unwrap_or(0)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Option<usize>>, D::Error> {
        let raw = Vec::<usize>::deserialize(d)?;
        Ok(raw.into_iter().map(|v| (v > 0).then_some(v)).collect())
    }
}

impl Default for ForestGrid {
    fn default() -> Self {
        ForestGrid {
            n_trees: default_trees(),
            max_features: default_features(),
            max_depth: default_depths(),
            min_leaf: default_min_leaf(),
            class_weighting: ClassWeighting::default(),
        }
    }
}

impl ForestGrid {
    /// All lattice points in a fixed order, each carrying `seed`.
    pub fn points(&self, seed: u64) -> Vec<ForestParams> {
        let mut out = Vec::new();
        for &n_trees in &self.n_trees {
            for &max_features in &self.max_features {
                for &max_depth in &self.max_depth {
                    out.push(ForestParams {
                        n_trees,
                        max_features,
                        max_depth,
                        min_leaf: self.min_leaf,
                        class_weighting: self.class_weighting,
                        seed,
                    });
                }
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.n_trees.is_empty() || self.max_features.is_empty() || self.max_depth.is_empty()
    }
}

/// Outcome of a grid search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: ForestParams,
    pub best_index: usize,
    pub candidates: Vec<ForestParams>,
    /// `scores[g][f]`: weighted F1 of candidate `g` on held-out fold `f`.
    pub scores: Vec<Vec<f64>>,
    pub mean_scores: Vec<f64>,
}

/// Cross-validated grid search maximizing mean weighted F1. Ties go to the
/// more parsimonious candidate: fewer trees, then shallower depth, then
/// fewer features per split.
pub fn grid_search(dataset: &Dataset, grid: &[ForestParams], folds: &FoldPlan) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::Param("grid search needs at least one candidate".into()));
    }
    if folds.assignments.len() != dataset.n_rows() {
        return Err(Error::Param("fold plan does not cover the dataset".into()));
    }
    let splits: Vec<(Dataset, Dataset)> = (0..folds.k_folds)
        .map(|f| {
            (
                dataset.select_rows(&folds.train_indices(f)),
                dataset.select_rows(&folds.test_indices(f)),
            )
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..folds.k_folds).map(move |f| (g, f)))
        .collect();
    let flat: Vec<f64> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (train, test) = &splits[f];
            let forest = fit(train, &grid[g])?;
            let pred = forest.predict_rows(&test.features)?;
            weighted_f1(&pred, &test.labels)
        })
        .collect::<Result<_>>()?;
    let scores: Vec<Vec<f64>> = flat.chunks(folds.k_folds).map(<[f64]>::to_vec).collect();
    let mean_scores: Vec<f64> = scores
        .iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect();

    let k = dataset.n_features();
    let parsimony = |p: &ForestParams| {
        (
            p.n_trees,
            p.max_depth.unwrap_or(usize::MAX),
            p.max_features.resolve(k),
        )
    };
    let mut best_index = 0;
    for g in 1..grid.len() {
        let (a, b) = (mean_scores[g], mean_scores[best_index]);
        if a > b + 1e-12 || ((a - b).abs() <= 1e-12 && parsimony(&grid[g]) < parsimony(&grid[best_index])) {
            best_index = g;
        }
    }
    Ok(GridResult {
        best: grid[best_index].clone(),
        best_index,
        candidates: grid.to_vec(),
        scores,
        mean_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::stratified_folds;
    use ndarray::Array2;

    fn xor(n_side: usize) -> Dataset {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for a in 0..n_side {
            for b in 0..n_side {
                let (u, v) = (a as f64 / n_side as f64, b as f64 / n_side as f64);
                x.extend([u, v]);
                y.push(usize::from((u < 0.5) != (v < 0.5)));
            }
        }
        Dataset::from_parts(Array2::from_shape_vec((y.len(), 2), x).unwrap(), y, None).unwrap()
    }

    #[test]
    fn single_point_grid() {
        let ds = xor(6);
        let folds = stratified_folds(&ds.labels, 3, 0).unwrap();
        let p = ForestParams { n_trees: 10, ..Default::default() };
        let r = grid_search(&ds, std::slice::from_ref(&p), &folds).unwrap();
        assert_eq!(r.best, p);
        assert_eq!(r.scores.len(), 1);
        assert_eq!(r.scores[0].len(), 3);
    }

    #[test]
    fn deep_trees_win_on_xor() {
        let ds = xor(10);
        let folds = stratified_folds(&ds.labels, 5, 1).unwrap();
        let grid = ForestGrid {
            n_trees: vec![30],
            max_features: vec![MaxFeatures::ALL],
            max_depth: vec![Some(1), Some(8)],
            ..Default::default()
        };
        let r = grid_search(&ds, &grid.points(3), &folds).unwrap();
        assert_eq!(r.best.max_depth, Some(8));
        assert_eq!(r.scores.len(), 2);
        assert!(r.scores.iter().all(|row| row.len() == 5));
        assert!(r.mean_scores[1] > r.mean_scores[0]);
    }

    #[test]
    fn ties_prefer_parsimony() {
        // Perfectly separable data: every candidate scores 1.0.
        let ds = Dataset::from_parts(
            Array2::from_shape_fn((20, 1), |(i, _)| if i < 10 { i as f64 } else { 100.0 + i as f64 }),
            (0..20).map(|i| usize::from(i >= 10)).collect(),
            None,
        )
        .unwrap();
        let folds = stratified_folds(&ds.labels, 2, 0).unwrap();
        let grid = ForestGrid {
            n_trees: vec![20, 10],
            max_features: vec![MaxFeatures::ALL],
            max_depth: vec![None, Some(4)],
            ..Default::default()
        };
        let r = grid_search(&ds, &grid.points(0), &folds).unwrap();
        assert_eq!((r.best.n_trees, r.best.max_depth), (10, Some(4)));
        assert!(grid_search(&ds, &[], &folds).is_err());
    }

    #[test]
    fn default_grid_shape_and_serde() {
        let g = ForestGrid::default();
        assert_eq!(g.points(0).len(), 27);
        let text = toml::to_string(&g).unwrap();
        let back: ForestGrid = toml::from_str(&text).unwrap();
        assert_eq!(back, g);
        let custom: ForestGrid = toml::from_str("n_trees = [5]\nmax_features = [\"log2\", 0.25]\nmax_depth = [0, 3]").unwrap();
        assert_eq!(custom.max_depth, vec![None, Some(3)]);
        assert_eq!(custom.max_features, vec![MaxFeatures::LOG2, MaxFeatures::Fraction(0.25)]);
    }
}
