//! Case-based explanantia drawn from the training set: prototypes (HDP and
//! k-medoids), witness-function critics, and per-query semi-/counter-factuals.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::proximity::{Backend, DistanceMatrix, ProximityMatrix};

/// Pairwise similarity over training rows.
pub trait Similarity: Sync {
    fn len(&self) -> usize;
    fn sim(&self, i: usize, j: usize) -> f64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Similarity for ProximityMatrix {
    fn len(&self) -> usize {
        ProximityMatrix::len(self)
    }
    fn sim(&self, i: usize, j: usize) -> f64 {
        self.value_or_zero(i, j)
    }
}

/// Distances read as proximities through `1 − d`.
impl Similarity for DistanceMatrix {
    fn len(&self) -> usize {
        DistanceMatrix::len(self)
    }
    fn sim(&self, i: usize, j: usize) -> f64 {
        1.0 - self.get(i, j)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Hdp,
    Kmedoids,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 2] = [SelectionMethod::Kmedoids, SelectionMethod::Hdp];

    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionMethod::Hdp => "hdp",
            SelectionMethod::Kmedoids => "kmedoids",
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hdp" => Ok(SelectionMethod::Hdp),
            "kmedoids" | "k-medoids" => Ok(SelectionMethod::Kmedoids),
            _ => Err(Error::Param(format!("unknown prototype method '{s}' (expected hdp or kmedoids)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    /// Class → training-row indices in selection order.
    pub per_class: BTreeMap<usize, Vec<usize>>,
    pub method: SelectionMethod,
    pub backend: Backend,
    /// Requested prototypes per class.
    pub counts: BTreeMap<usize, usize>,
    /// Classes that ran out of rows before reaching their quota.
    pub exhausted: Vec<usize>,
}

impl PrototypeSet {
    /// All prototypes, pooled across classes in class order.
    pub fn all(&self) -> Vec<usize> {
        self.per_class.values().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, row: usize) -> bool {
        self.per_class.values().any(|v| v.contains(&row))
    }

    /// Prototypes with their owning class, sorted by row index.
    pub fn by_row(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<(usize, usize)> = self
            .per_class
            .iter()
            .flat_map(|(&c, rows)| rows.iter().map(move |&r| (r, c)))
            .collect();
        v.sort_unstable();
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticSet {
    pub indices: Vec<usize>,
    pub witness_values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactualPair {
    pub query: usize,
    pub semi_factual: usize,
    pub counter_factual: usize,
    pub backend: Backend,
}

fn class_members(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        m.entry(y).or_default().push(i);
    }
    m
}

/// Same quota for every class present in `labels`.
pub fn uniform_counts(labels: &[usize], per_class: usize) -> BTreeMap<usize, usize> {
    class_members(labels).into_keys().map(|c| (c, per_class)).collect()
}

fn check_counts(labels: &[usize], n_per_class: &BTreeMap<usize, usize>) -> Result<BTreeMap<usize, Vec<usize>>> {
    let members = class_members(labels);
    for c in members.keys() {
        match n_per_class.get(c) {
            Some(&k) if k >= 1 => {}
            _ => return Err(Error::Param(format!("class {c} needs a prototype count of at least 1"))),
        }
    }
    Ok(members)
}

/// Default neighbour-removal count: `⌈class_size / (2·quota)⌉`.
pub fn default_k_neighbors(class_size: usize, quota: usize) -> usize {
    class_size.div_ceil(2 * quota.max(1)).max(1)
}

/// Highest-density prototypes. Within each class, repeatedly take the row
/// whose `k` most similar remaining same-class rows have the largest total
/// similarity, then remove it and those neighbours. `k_neighbors = None`
/// uses [`default_k_neighbors`] per class.
pub fn hdp_prototypes<S: Similarity + ?Sized>(
    sim: &S,
    labels: &[usize],
    n_per_class: &BTreeMap<usize, usize>,
    k_neighbors: Option<usize>,
    backend: Backend,
) -> Result<PrototypeSet> {
    if sim.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: sim.len(),
        });
    }
    if k_neighbors == Some(0) {
        return Err(Error::Param("HDP needs k_neighbors >= 1".into()));
    }
    let members = check_counts(labels, n_per_class)?;
    let chosen: Vec<(usize, Vec<usize>, bool)> = members
        .par_iter()
        .map(|(&c, rows)| {
            let quota = n_per_class[&c];
            let k = k_neighbors.unwrap_or_else(|| default_k_neighbors(rows.len(), quota));
            let (picked, short) = hdp_class(sim, rows, quota, k);
            (c, picked, short)
        })
        .collect();
    let mut per_class = BTreeMap::new();
    let mut exhausted = Vec::new();
    for (c, picked, short) in chosen {
        if short {
            log::warn!("HDP: class {c} exhausted after {} prototype(s)", picked.len());
            exhausted.push(c);
        }
        per_class.insert(c, picked);
    }
    Ok(PrototypeSet {
        per_class,
        method: SelectionMethod::Hdp,
        backend,
        counts: n_per_class.clone(),
        exhausted,
    })
}

/// `k` most similar rows to `x` among `pool` (excluding `x`), ties to the
/// lower index.
fn top_neighbors<S: Similarity + ?Sized>(sim: &S, x: usize, pool: &[usize], k: usize) -> Vec<(f64, usize)> {
    let mut cand: Vec<(f64, usize)> = pool
        .iter()
        .filter(|&&j| j != x)
        .map(|&j| (sim.sim(x, j), j))
        .collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if cand.len() > k {
        cand.select_nth_unstable_by(k, by);
        cand.truncate(k);
    }
    cand.sort_unstable_by(by);
    cand
}

fn hdp_class<S: Similarity + ?Sized>(sim: &S, rows: &[usize], quota: usize, k: usize) -> (Vec<usize>, bool) {
    let mut pool = rows.to_vec();
    let mut picked = Vec::with_capacity(quota);
    while picked.len() < quota && !pool.is_empty() {
        let mut best: Option<(f64, usize, Vec<usize>)> = None;
        for &x in &pool {
            let nb = top_neighbors(sim, x, &pool, k);
            let score: f64 = nb.iter().map(|p| p.0).sum();
            // Pool is in ascending row order, so strict > keeps the lower index.
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, x, nb.into_iter().map(|p| p.1).collect()));
            }
        }
        let (_, x, nb) = best.expect("pool not empty");
        picked.push(x);
        pool.retain(|r| *r != x && !nb.contains(r));
    }
    let short = picked.len() < quota;
    (picked, short)
}

/// Sum over `rows` of the distance to the nearest of `medoids`.
pub fn kmedoids_objective(dist: &DistanceMatrix, rows: &[usize], medoids: &[usize]) -> f64 {
    rows.iter()
        .map(|&x| medoids.iter().map(|&m| dist.get(x, m)).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Upper bound on PAM swap rounds per class.
pub const MAX_SWAPS: usize = 200;

/// Per-class k-medoids: greedy build followed by best-improvement PAM swaps.
/// The build is deterministic, so no seed is involved.
pub fn kmedoids_prototypes(
    dist: &DistanceMatrix,
    labels: &[usize],
    n_per_class: &BTreeMap<usize, usize>,
) -> Result<PrototypeSet> {
    if dist.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: dist.len(),
        });
    }
    let members = check_counts(labels, n_per_class)?;
    for (c, rows) in &members {
        if n_per_class[c] > rows.len() {
            return Err(Error::Param(format!(
                "class {c} has {} rows but {} medoids were requested",
                rows.len(),
                n_per_class[c]
            )));
        }
    }
    let per_class: BTreeMap<usize, Vec<usize>> = members
        .par_iter()
        .map(|(&c, rows)| (c, pam(dist, rows, n_per_class[&c]).0))
        .collect();
    Ok(PrototypeSet {
        per_class,
        method: SelectionMethod::Kmedoids,
        backend: dist.backend(),
        counts: n_per_class.clone(),
        exhausted: Vec::new(),
    })
}

/// Returns the medoids and the objective after the greedy build.
pub(crate) fn pam(dist: &DistanceMatrix, rows: &[usize], k: usize) -> (Vec<usize>, f64) {
    let n = rows.len();
    let d = |a: usize, b: usize| dist.get(rows[a], rows[b]);
    // Greedy build on local indices.
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut near = vec![f64::INFINITY; n];
    for _ in 0..k {
        let mut best = (f64::INFINITY, usize::MAX);
        for cand in 0..n {
            if medoids.contains(&cand) {
                continue;
            }
            let obj: f64 = (0..n).map(|x| near[x].min(d(x, cand))).sum();
            if obj < best.0 {
                best = (obj, cand);
            }
        }
        medoids.push(best.1);
        for x in 0..n {
            near[x] = near[x].min(d(x, best.1));
        }
    }
    let init_obj: f64 = near.iter().sum();

    let mut obj = init_obj;
    for _ in 0..MAX_SWAPS {
        // Nearest and second-nearest medoid slot distances.
        let mut first = vec![(f64::INFINITY, 0usize); n];
        let mut second = vec![f64::INFINITY; n];
        for x in 0..n {
            for (s, &m) in medoids.iter().enumerate() {
                let v = d(x, m);
                if v < first[x].0 {
                    second[x] = first[x].0;
                    first[x] = (v, s);
                } else if v < second[x] {
                    second[x] = v;
                }
            }
        }
        let mut best = (obj, usize::MAX, usize::MAX);
        for s in 0..medoids.len() {
            for o in 0..n {
                if medoids.contains(&o) {
                    continue;
                }
                let mut total = 0.0;
                for x in 0..n {
                    let dxo = d(x, o);
                    let keep = if first[x].1 == s { second[x] } else { first[x].0 };
                    total += keep.min(dxo);
                }
                if total < best.0 - 1e-12 {
                    best = (total, s, o);
                }
            }
        }
        if best.1 == usize::MAX {
            break;
        }
        medoids[best.1] = best.2;
        obj = best.0;
    }
    let mut out: Vec<usize> = medoids.into_iter().map(|m| rows[m]).collect();
    out.sort_unstable();
    (out, init_obj)
}

/// Mean similarity of `row` to all rows minus its mean similarity to the
/// pooled prototypes.
pub fn witness<S: Similarity + ?Sized>(row: usize, prototypes: &[usize], sim: &S) -> Result<f64> {
    if prototypes.is_empty() {
        return Err(Error::Param("witness needs a non-empty prototype set".into()));
    }
    let n = sim.len();
    let all: f64 = (0..n).map(|i| sim.sim(row, i)).sum::<f64>() / n as f64;
    let proto: f64 = prototypes.iter().map(|&z| sim.sim(row, z)).sum::<f64>() / prototypes.len() as f64;
    Ok(all - proto)
}

fn rank_by_witness<S: Similarity + ?Sized>(candidates: Vec<usize>, protos: &[usize], sim: &S, m: usize) -> Result<CriticSet> {
    let mut scored: Vec<(f64, usize)> = candidates
        .par_iter()
        .map(|&i| witness(i, protos, sim).map(|w| (w, i)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(m);
    Ok(CriticSet {
        indices: scored.iter().map(|p| p.1).collect(),
        witness_values: scored.iter().map(|p| p.0).collect(),
    })
}

/// Top `m_critics` non-prototype rows by witness value, descending.
pub fn select_critics<S: Similarity + ?Sized>(prototypes: &PrototypeSet, sim: &S, m_critics: usize) -> Result<CriticSet> {
    if m_critics == 0 {
        return Err(Error::Param("m_critics must be at least 1".into()));
    }
    let protos = prototypes.all();
    let candidates: Vec<usize> = (0..sim.len()).filter(|i| !protos.contains(i)).collect();
    if m_critics > candidates.len() {
        return Err(Error::Param(format!(
            "{m_critics} critics requested but only {} non-prototype rows exist",
            candidates.len()
        )));
    }
    rank_by_witness(candidates, &protos, sim, m_critics)
}

/// Per-class variant: the top `m_per_class` non-prototype rows of each
/// class, ranked by the pooled witness. Output is class-major.
pub fn select_critics_per_class<S: Similarity + ?Sized>(
    prototypes: &PrototypeSet,
    sim: &S,
    labels: &[usize],
    m_per_class: usize,
) -> Result<CriticSet> {
    if m_per_class == 0 {
        return Err(Error::Param("m_critics must be at least 1".into()));
    }
    let protos = prototypes.all();
    let mut out = CriticSet {
        indices: Vec::new(),
        witness_values: Vec::new(),
    };
    for rows in class_members(labels).into_values() {
        let cand: Vec<usize> = rows.into_iter().filter(|i| !protos.contains(i)).collect();
        let m = m_per_class.min(cand.len());
        if m == 0 {
            continue;
        }
        let part = rank_by_witness(cand, &protos, sim, m)?;
        out.indices.extend(part.indices);
        out.witness_values.extend(part.witness_values);
    }
    Ok(out)
}

fn check_query(q: usize, dist: &DistanceMatrix, labels: &[usize]) -> Result<()> {
    if dist.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: dist.len(),
            got: labels.len(),
        });
    }
    if q >= labels.len() {
        return Err(Error::Param(format!("query row {q} out of range (n = {})", labels.len())));
    }
    Ok(())
}

/// Same-label row furthest from `q`.
pub fn semi_factual(q: usize, dist: &DistanceMatrix, labels: &[usize]) -> Result<usize> {
    check_query(q, dist, labels)?;
    let mut best: Option<(f64, usize)> = None;
    for j in 0..labels.len() {
        if j == q || labels[j] != labels[q] {
            continue;
        }
        let v = dist.get(q, j);
        if best.is_none_or(|b| v > b.0) {
            best = Some((v, j));
        }
    }
    best.map(|b| b.1)
        .ok_or_else(|| Error::Param(format!("row {q} is the only member of its class")))
}

/// Different-label row closest to `q`.
pub fn counter_factual(q: usize, dist: &DistanceMatrix, labels: &[usize]) -> Result<usize> {
    check_query(q, dist, labels)?;
    let mut best: Option<(f64, usize)> = None;
    for j in 0..labels.len() {
        if labels[j] == labels[q] {
            continue;
        }
        let v = dist.get(q, j);
        if best.is_none_or(|b| v < b.0) {
            best = Some((v, j));
        }
    }
    best.map(|b| b.1)
        .ok_or_else(|| Error::Param("counter-factual needs a second class".into()))
}

pub fn factual_pair(q: usize, dist: &DistanceMatrix, labels: &[usize]) -> Result<FactualPair> {
    Ok(FactualPair {
        query: q,
        semi_factual: semi_factual(q, dist, labels)?,
        counter_factual: counter_factual(q, dist, labels)?,
        backend: dist.backend(),
    })
}

/// Class of the prototype nearest to a point, given that point's distances
/// to every training row. Ties go to the lower prototype row index.
pub fn nearest_prototype_predict(dist_to_train: &[f64], prototypes: &PrototypeSet) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for (row, class) in prototypes.by_row() {
        let v = dist_to_train[row];
        if v < best.0 || best.1 == usize::MAX {
            best = (v, class);
        }
    }
    best.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticEntry {
    pub row_id: String,
    pub witness: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactualEntry {
    pub query_id: String,
    pub semi_id: String,
    pub counter_id: String,
}

/// Row-id level view of a set of explanantia, for JSON output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationBundle {
    pub method: SelectionMethod,
    pub backend: Backend,
    pub prototypes: BTreeMap<String, Vec<String>>,
    pub critics: Vec<CriticEntry>,
    pub factuals: Vec<FactualEntry>,
}

impl ExplanationBundle {
    /// `train` supplies row ids and class names for the indices.
    pub fn new(train: &Dataset, prototypes: &PrototypeSet, critics: &CriticSet, factuals: &[FactualPair]) -> Self {
        let id = |i: usize| train.row_ids[i].clone();
        ExplanationBundle {
            method: prototypes.method,
            backend: prototypes.backend,
            prototypes: prototypes
                .per_class
                .iter()
                .map(|(&c, rows)| (train.label_names[c].clone(), rows.iter().map(|&r| id(r)).collect()))
                .collect(),
            critics: critics
                .indices
                .iter()
                .zip(&critics.witness_values)
                .map(|(&i, &w)| CriticEntry { row_id: id(i), witness: w })
                .collect(),
            factuals: factuals
                .iter()
                .map(|f| FactualEntry {
                    query_id: id(f.query),
                    semi_id: id(f.semi_factual),
                    counter_id: id(f.counter_factual),
                })
                .collect(),
        }
    }
}
