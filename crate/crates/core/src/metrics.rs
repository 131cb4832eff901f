//! Evaluation metrics for explanantia and their aggregation.
//!
//! Undefined values (sparsity of identical vectors, zero-denominator outlier
//! scores, zero-distance robustness ratios) are `None` and are counted as
//! masked by [`Aggregate`] instead of being folded into the mean.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Dataset};
use crate::error::{Error, Result};
use crate::explain::{nearest_prototype_predict, PrototypeSet, Similarity};
use crate::forest::weighted_f1;
use crate::proximity::DistanceMatrix;

pub fn pair_distance(q: usize, e: usize, dist: &DistanceMatrix) -> f64 {
    dist.get(q, e)
}

/// Which columns form one logical feature; one-hot columns of the same
/// source share a group and compare exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    groups: Vec<usize>,
    exact: Vec<bool>,
}

impl FeatureLayout {
    pub fn of(dataset: &Dataset) -> FeatureLayout {
        FeatureLayout {
            groups: dataset.feature_groups(),
            exact: dataset
                .columns
                .iter()
                .map(|c| !matches!(c.kind, ColumnKind::Numeric))
                .collect(),
        }
    }

    /// Every column its own numeric feature.
    pub fn flat(k: usize) -> FeatureLayout {
        FeatureLayout {
            groups: (0..k).collect(),
            exact: vec![false; k],
        }
    }
}

/// `1 / (number of changed features)`, `None` when nothing changed.
pub fn sparsity(q: ArrayView1<'_, f64>, e: ArrayView1<'_, f64>, layout: &FeatureLayout, numeric_tol: f64) -> Option<f64> {
    let mut changed: Vec<usize> = Vec::new();
    for j in 0..q.len() {
        let differs = if layout.exact[j] {
            q[j] != e[j]
        } else {
            (q[j] - e[j]).abs() > numeric_tol
        };
        if differs && !changed.contains(&layout.groups[j]) {
            changed.push(layout.groups[j]);
        }
    }
    (!changed.is_empty()).then(|| 1.0 / changed.len() as f64)
}

/// Distance from `e` to its nearest training row.
pub fn ood_distance(e: usize, dist: &DistanceMatrix, exclude_self: bool) -> Result<f64> {
    (0..dist.len())
        .filter(|&j| !(exclude_self && j == e))
        .map(|j| dist.get(e, j))
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::Param("OOD distance needs at least one reference row".into()))
}

/// Same-class count over the sum of squared same-class proximities, both
/// excluding `e`. `None` when every same-class proximity is 0.
pub fn outlier_score<S: Similarity + ?Sized>(e: usize, prox: &S, labels: &[usize]) -> Result<Option<f64>> {
    let mut count = 0usize;
    let mut denom = 0.0;
    for j in 0..labels.len() {
        if j != e && labels[j] == labels[e] {
            count += 1;
            let p = prox.sim(e, j);
            denom += p * p;
        }
    }
    if count == 0 {
        return Err(Error::Param(format!("row {e} has no same-class rows")));
    }
    Ok((denom > 0.0).then(|| count as f64 / denom))
}

/// Mean pairwise distance over unordered pairs; 0 for a singleton.
pub fn diversity(set: &[usize], dist: &DistanceMatrix) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Param("diversity of an empty set".into()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..set.len() {
        for b in a + 1..set.len() {
            total += dist.get(set[a], set[b]);
            pairs += 1;
        }
    }
    Ok(if pairs == 0 { 0.0 } else { total / pairs as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Neighborhood {
    KNearest { k: usize },
    Radius { radius: f64 },
}

impl Default for Neighborhood {
    fn default() -> Self {
        Neighborhood::KNearest { k: 10 }
    }
}

impl Neighborhood {
    /// Training rows around `q`, excluding `q`.
    pub fn members(&self, q: usize, dist: &DistanceMatrix) -> Vec<usize> {
        let others = (0..dist.len()).filter(|&j| j != q);
        match *self {
            Neighborhood::Radius { radius } => others.filter(|&j| dist.get(q, j) <= radius).collect(),
            Neighborhood::KNearest { k } => {
                let mut v: Vec<usize> = others.collect();
                v.sort_by(|&a, &b| dist.get(q, a).total_cmp(&dist.get(q, b)).then(a.cmp(&b)));
                v.truncate(k);
                v
            }
        }
    }
}

/// Local Lipschitz estimate `max ‖f(q) − f(x)‖₂ / d(q, x)` over the
/// neighbourhood of `q`, with `probs[i]` the forest's class-probability
/// vector for training row `i`. `None` when a zero-distance neighbour has a
/// different prediction.
pub fn robustness(q: usize, probs: &[Vec<f64>], dist: &DistanceMatrix, neighborhood: &Neighborhood) -> Result<Option<f64>> {
    let members = neighborhood.members(q, dist);
    if members.is_empty() {
        return Err(Error::Param(format!("row {q} has an empty neighbourhood")));
    }
    let mut best = 0.0f64;
    for j in members {
        let df = probs[q]
            .iter()
            .zip(&probs[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let d = dist.get(q, j);
        if d == 0.0 {
            if df == 0.0 {
                continue;
            }
            return Ok(None);
        }
        best = best.max(df / d);
    }
    Ok(Some(best))
}

/// Same-class rows assigned to each prototype (nearest same-class
/// prototype, ties to the lower row index). Prototypes are not assigned to
/// themselves.
pub fn assignments(prototypes: &PrototypeSet, dist: &DistanceMatrix, labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut out: BTreeMap<usize, Vec<usize>> = prototypes.all().into_iter().map(|p| (p, Vec::new())).collect();
    for (i, &y) in labels.iter().enumerate() {
        let Some(protos) = prototypes.per_class.get(&y) else { continue };
        if protos.contains(&i) || protos.is_empty() {
            continue;
        }
        let mut sorted = protos.clone();
        sorted.sort_unstable();
        let mut best = sorted[0];
        for &p in &sorted[1..] {
            if dist.get(i, p) < dist.get(i, best) {
                best = p;
            }
        }
        out.get_mut(&best).expect("prototype key").push(i);
    }
    out
}

/// Mean distance from a prototype to the rows it represents; 0 when it
/// represents only itself.
pub fn compactness(prototype: usize, assigned: &[usize], dist: &DistanceMatrix) -> f64 {
    if assigned.is_empty() {
        return 0.0;
    }
    assigned.iter().map(|&i| dist.get(prototype, i)).sum::<f64>() / assigned.len() as f64
}

/// Nearest-prototype predictions for points given their distances to the
/// training rows (`cross[r][j]` = distance from point `r` to training row `j`).
pub fn nearest_prototype_predictions(prototypes: &PrototypeSet, cross: &Array2<f64>) -> Vec<usize> {
    (0..cross.nrows())
        .map(|r| nearest_prototype_predict(cross.row(r).as_slice().expect("standard layout"), prototypes))
        .collect()
}

pub fn nearest_prototype_f1(prototypes: &PrototypeSet, cross: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    weighted_f1(&nearest_prototype_predictions(prototypes, cross), labels)
}

/// Mean of the defined values, with counts of defined and masked items.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Option<f64>,
    pub count: usize,
    pub masked: usize,
}

impl Aggregate {
    pub fn of<I: IntoIterator<Item = Option<f64>>>(values: I) -> Aggregate {
        let mut sum = 0.0;
        let mut count = 0;
        let mut masked = 0;
        for v in values {
            match v {
                Some(x) => {
                    sum += x;
                    count += 1;
                }
                None => masked += 1,
            }
        }
        Aggregate {
            mean: (count > 0).then(|| sum / count as f64),
            count,
            masked,
        }
    }

    pub fn single(v: f64) -> Aggregate {
        Aggregate::of([Some(v)])
    }
}

/// Backend column used for metrics that do not depend on a distance.
pub const NO_BACKEND: &str = "none";

/// Aggregated metric values, nested as explanans → metric → backend.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricReport {
    pub values: BTreeMap<String, BTreeMap<String, BTreeMap<String, Aggregate>>>,
}

impl MetricReport {
    pub fn insert(&mut self, explanans: &str, metric: &str, backend: &str, agg: Aggregate) {
        self.values
            .entry(explanans.to_string())
            .or_default()
            .entry(metric.to_string())
            .or_default()
            .insert(backend.to_string(), agg);
    }

    pub fn get(&self, explanans: &str, metric: &str, backend: &str) -> Option<&Aggregate> {
        self.values.get(explanans)?.get(metric)?.get(backend)
    }

    pub fn mean(&self, explanans: &str, metric: &str, backend: &str) -> Option<f64> {
        self.get(explanans, metric, backend)?.mean
    }

    /// Flat `(explanans, metric, backend, aggregate)` rows in key order.
    pub fn rows(&self) -> Vec<(&str, &str, &str, &Aggregate)> {
        let mut out = Vec::new();
        for (e, metrics) in &self.values {
            for (m, backends) in metrics {
                for (b, agg) in backends {
                    out.push((e.as_str(), m.as_str(), b.as_str(), agg));
                }
            }
        }
        out
    }

    /// Across reports: mean of the per-report means, counts summed.
    pub fn average(reports: &[MetricReport]) -> MetricReport {
        let mut out = MetricReport::default();
        let mut keys: Vec<(String, String, String)> = Vec::new();
        for r in reports {
            for (e, m, b, _) in r.rows() {
                let k = (e.to_string(), m.to_string(), b.to_string());
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
        }
        keys.sort();
        for (e, m, b) in keys {
            let parts: Vec<&Aggregate> = reports.iter().filter_map(|r| r.get(&e, &m, &b)).collect();
            let means: Vec<f64> = parts.iter().filter_map(|a| a.mean).collect();
            out.insert(
                &e,
                &m,
                &b,
                Aggregate {
                    mean: (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64),
                    count: parts.iter().map(|a| a.count).sum(),
                    masked: parts.iter().map(|a| a.masked).sum(),
                },
            );
        }
        out
    }
}

/// Write labelled reports as one flat CSV:
/// `scope,explanans,metric,backend,mean,count,masked`.
pub fn write_metrics_csv(path: impl AsRef<Path>, reports: &[(String, &MetricReport)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scope", "explanans", "metric", "backend", "mean", "count", "masked"])?;
    for (scope, report) in reports {
        for (e, m, b, agg) in report.rows() {
            let mean = agg.mean.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
            w.write_record([scope.as_str(), e, m, b, &mean, &agg.count.to_string(), &agg.masked.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::SelectionMethod;
    use crate::proximity::Backend;
    use ndarray::array;
    use proptest::prelude::*;

    fn line(pts: &[f64]) -> DistanceMatrix {
        let n = pts.len();
        DistanceMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| (pts[i] - pts[j]).abs()), Backend::L2).unwrap()
    }

    fn protos(per_class: &[(usize, Vec<usize>)]) -> PrototypeSet {
        PrototypeSet {
            per_class: per_class.iter().cloned().collect(),
            method: SelectionMethod::Kmedoids,
            backend: Backend::L2,
            counts: BTreeMap::new(),
            exhausted: vec![],
        }
    }

    #[test]
    fn pair_distance_basics() {
        let d = line(&[0.0, 0.3, 1.0]);
        assert_eq!(pair_distance(1, 1, &d), 0.0);
        assert_eq!(pair_distance(0, 2, &d), pair_distance(2, 0, &d));
    }

    #[test]
    fn sparsity_counts() {
        let layout = FeatureLayout::flat(10);
        let q = ndarray::Array1::<f64>::zeros(10);
        let mut e = q.clone();
        e[3] = 1.0;
        assert_eq!(sparsity(q.view(), e.view(), &layout, 0.0), Some(1.0));
        let all = ndarray::Array1::<f64>::ones(10);
        assert!((sparsity(q.view(), all.view(), &layout, 0.0).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(sparsity(q.view(), q.view(), &layout, 0.0), None);
        // Below tolerance does not count.
        let mut small = q.clone();
        small[0] = 1e-6;
        assert_eq!(sparsity(q.view(), small.view(), &layout, 1e-3), None);
    }

    #[test]
    fn sparsity_counts_onehot_group_once() {
        let ds = crate::data::synth_three_class(30, 2)
            .unwrap()
            .encode(crate::data::MissingPolicy::Error)
            .unwrap();
        let layout = FeatureLayout::of(&ds);
        let q = ds.row(0).to_owned();
        let mut e = q.clone();
        // Move "style" to a different level: two one-hot columns change.
        let style: Vec<usize> = ds
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!(&c.kind, ColumnKind::OneHot { source, .. } if source == "style"))
            .map(|(j, _)| j)
            .collect();
        let on = style.iter().position(|&j| q[j] == 1.0).unwrap();
        e[style[on]] = 0.0;
        e[style[(on + 1) % style.len()]] = 1.0;
        assert_eq!(sparsity(q.view(), e.view(), &layout, 0.0), Some(1.0));
    }

    #[test]
    fn ood_cases() {
        let d = line(&[0.0, 0.3, 1.0]);
        assert_eq!(ood_distance(0, &d, false).unwrap(), 0.0);
        assert!((ood_distance(0, &d, true).unwrap() - 0.3).abs() < 1e-15);
        let one = line(&[0.0]);
        assert!(ood_distance(0, &one, true).is_err());
    }

    #[test]
    fn outlier_scaling() {
        let ones = crate::proximity::ProximityMatrix::new(Array2::from_elem((4, 4), 1.0), crate::proximity::ProximityKind::Original).unwrap();
        let labels = [0, 0, 0, 1];
        assert_eq!(outlier_score(0, &ones, &labels).unwrap(), Some(1.0));
        let half = crate::proximity::ProximityMatrix::new(Array2::from_elem((4, 4), 0.5), crate::proximity::ProximityKind::Original).unwrap();
        assert_eq!(outlier_score(0, &half, &labels).unwrap(), Some(4.0));
        let zero = crate::proximity::ProximityMatrix::new(Array2::zeros((4, 4)), crate::proximity::ProximityKind::Original).unwrap();
        assert_eq!(outlier_score(0, &zero, &labels).unwrap(), None);
        assert!(outlier_score(3, &ones, &labels).is_err());
    }

    #[test]
    fn diversity_cases() {
        let d = line(&[0.0, 0.8]);
        assert!((diversity(&[0, 1], &d).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(diversity(&[1], &d).unwrap(), 0.0);
        assert!(diversity(&[], &d).is_err());
        let d = line(&[0.0, 1.0, 3.0, 6.0]);
        // Pairs: 1, 3, 6, 2, 5, 3 -> 20 / 6.
        assert!((diversity(&[0, 1, 2, 3], &d).unwrap() - 20.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn robustness_cases() {
        let d = line(&[0.0, 0.5, 2.0]);
        let constant = vec![vec![0.5, 0.5]; 3];
        assert_eq!(robustness(0, &constant, &d, &Neighborhood::default()).unwrap(), Some(0.0));
        // One neighbour at 0.5 with ‖Δf‖ = 0.2.
        let probs = vec![vec![1.0, 0.0], vec![0.8, 0.0], vec![0.0, 1.0]];
        let r = robustness(0, &probs, &d, &Neighborhood::KNearest { k: 1 }).unwrap().unwrap();
        assert!((r - 0.4).abs() < 1e-12);
        let r = robustness(0, &probs, &d, &Neighborhood::Radius { radius: 0.6 }).unwrap().unwrap();
        assert!((r - 0.4).abs() < 1e-12);
        assert!(robustness(0, &probs, &d, &Neighborhood::Radius { radius: 0.1 }).is_err());
        let dup = line(&[0.0, 0.0]);
        assert_eq!(robustness(0, &[vec![1.0], vec![0.0]], &dup, &Neighborhood::default()).unwrap(), None);
        assert_eq!(robustness(0, &[vec![1.0], vec![1.0]], &dup, &Neighborhood::default()).unwrap(), Some(0.0));
    }

    #[test]
    fn compactness_cases() {
        let d = line(&[0.0, 0.2, 0.4]);
        assert!((compactness(0, &[1, 2], &d) - 0.3).abs() < 1e-15);
        assert_eq!(compactness(0, &[], &d), 0.0);
        // 8-point toy: two classes, two prototypes in class 0, one in class 1.
        let d = line(&[0.0, 0.1, 0.3, 1.0, 1.2, 5.0, 5.5, 6.5]);
        let labels = [0, 0, 0, 0, 0, 1, 1, 1];
        let p = protos(&[(0, vec![1, 3]), (1, vec![6])]);
        let a = assignments(&p, &d, &labels);
        assert_eq!(a[&1], vec![0, 2]);
        assert_eq!(a[&3], vec![4]);
        assert_eq!(a[&6], vec![5, 7]);
        assert!((compactness(1, &a[&1], &d) - 0.15).abs() < 1e-12);
        assert!((compactness(3, &a[&3], &d) - 0.2).abs() < 1e-12);
        assert!((compactness(6, &a[&6], &d) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn nearest_prototype_f1_cases() {
        let p = protos(&[(0, vec![0]), (1, vec![1])]);
        let cross = array![[0.1, 0.9], [0.8, 0.2], [0.0, 1.0]];
        assert_eq!(nearest_prototype_f1(&p, &cross, &[0, 1, 0]).unwrap(), 1.0);
        // Oracle scan composition.
        let pred: Vec<usize> = (0..3).map(|r| if cross[[r, 0]] <= cross[[r, 1]] { 0 } else { 1 }).collect();
        assert_eq!(
            nearest_prototype_f1(&p, &cross, &[1, 1, 0]).unwrap(),
            weighted_f1(&pred, &[1, 1, 0]).unwrap()
        );
    }

    #[test]
    fn aggregates_and_average() {
        let a = Aggregate::of([Some(1.0), None, Some(3.0)]);
        assert_eq!(a, Aggregate { mean: Some(2.0), count: 2, masked: 1 });
        assert_eq!(Aggregate::of([None]).mean, None);
        let mut r1 = MetricReport::default();
        r1.insert("critic", "diversity", "gap", Aggregate::of([Some(1.0), Some(1.0)]));
        let mut r2 = MetricReport::default();
        r2.insert("critic", "diversity", "gap", Aggregate::of([Some(0.0)]));
        let avg = MetricReport::average(&[r1.clone(), r2]);
        assert_eq!(avg.get("critic", "diversity", "gap").unwrap(), &Aggregate { mean: Some(0.5), count: 3, masked: 0 });
        let json = serde_json::to_string(&avg).unwrap();
        assert_eq!(serde_json::from_str::<MetricReport>(&json).unwrap(), avg);
        let dir = tempfile::tempdir().unwrap();
        write_metrics_csv(dir.path().join("m.csv"), &[("mean".into(), &avg), ("fold0".into(), &r1)]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
    }

    proptest! {
        #[test]
        fn scaling_distances_scales_metrics(pts in proptest::collection::vec(0.0f64..10.0, 3..12), c in 0.1f64..5.0) {
            let d = line(&pts);
            let s = d.map(|v| c * v);
            let set: Vec<usize> = (0..pts.len()).collect();
            prop_assert!((diversity(&set, &s).unwrap() - c * diversity(&set, &d).unwrap()).abs() < 1e-9);
            for i in 0..pts.len() {
                let (a, b) = (ood_distance(i, &d, true).unwrap(), ood_distance(i, &s, true).unwrap());
                prop_assert!((b - c * a).abs() < 1e-9);
                // Linear scan oracle.
                let scan = (0..pts.len()).filter(|&j| j != i).map(|j| (pts[i] - pts[j]).abs()).fold(f64::INFINITY, f64::min);
                prop_assert!((a - scan).abs() < 1e-12);
            }
        }
    }
}
