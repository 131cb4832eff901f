//! Forest proximities (original, out-of-bag, GAP), their conversion to
//! distances, and the Euclidean baseline.
//!
//! All three forest proximities are accumulated row by row from per-tree
//! leaf buckets: for row `i` only the rows sharing `i`'s leaf in each tree
//! are visited, so construction costs `Σ_t Σ_leaf |leaf|²` rather than a
//! full `|T|·n²` scan. Rows are independent, which makes the parallel build
//! deterministic.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{hex, ColumnKind, Dataset};
use crate::error::{Error, Result};
use crate::forest::TrainedForest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProximityKind {
    Original,
    Oob,
    Gap,
    /// `(P + Pᵀ) / 2` of a GAP matrix.
    GapSym,
}

impl ProximityKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProximityKind::Original => "original",
            ProximityKind::Oob => "oob",
            ProximityKind::Gap => "gap",
            ProximityKind::GapSym => "gap_sym",
        }
    }
}

impl fmt::Display for ProximityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProximityKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(ProximityKind::Original),
            "oob" => Ok(ProximityKind::Oob),
            "gap" => Ok(ProximityKind::Gap),
            "gap_sym" => Ok(ProximityKind::GapSym),
            _ => Err(Error::Param(format!(
                "unknown proximity kind '{s}' (expected original, oob, gap or gap_sym)"
            ))),
        }
    }
}

/// Where a distance matrix comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    L2,
    Original,
    Oob,
    Gap,
}

impl Backend {
    pub const ALL: [Backend; 4] = [Backend::L2, Backend::Original, Backend::Oob, Backend::Gap];

    pub fn proximity_kind(&self) -> Option<ProximityKind> {
        match self {
            Backend::L2 => None,
            Backend::Original => Some(ProximityKind::Original),
            Backend::Oob => Some(ProximityKind::Oob),
            Backend::Gap => Some(ProximityKind::Gap),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Backend::L2 => "l2",
            Backend::Original => "original",
            Backend::Oob => "oob",
            Backend::Gap => "gap",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Backend::L2),
            "original" => Ok(Backend::Original),
            "oob" => Ok(Backend::Oob),
            "gap" => Ok(Backend::Gap),
            _ => Err(Error::Param(format!(
                "unknown backend '{s}' (expected l2, original, oob or gap)"
            ))),
        }
    }
}

/// Square proximity matrix over training rows. Undefined entries (rows
/// never out-of-bag, or OOB pairs that never co-occur out-of-bag) are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct ProximityMatrix {
    values: Array2<f64>,
    kind: ProximityKind,
    row_defined: Vec<bool>,
}

impl ProximityMatrix {
    pub fn new(values: Array2<f64>, kind: ProximityKind) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::Param("proximity matrix must be square".into()));
        }
        let row_defined = values
            .rows()
            .into_iter()
            .map(|r| r.iter().any(|v| !v.is_nan()))
            .collect();
        Ok(ProximityMatrix {
            values,
            kind,
            row_defined,
        })
    }

    pub fn kind(&self) -> ProximityKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let v = self.values[[i, j]];
        (!v.is_nan()).then_some(v)
    }

    /// Value with undefined entries read as 0.
    pub fn value_or_zero(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).unwrap_or(0.0)
    }

    pub fn row_defined(&self) -> &[bool] {
        &self.row_defined
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn masked_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    /// `(P + Pᵀ) / 2` with undefined entries imputed as 0.
    pub fn symmetrized(&self) -> ProximityMatrix {
        let n = self.len();
        let values = Array2::from_shape_fn((n, n), |(i, j)| {
            0.5 * (self.value_or_zero(i, j) + self.value_or_zero(j, i))
        });
        let kind = match self.kind {
            ProximityKind::Gap | ProximityKind::GapSym => ProximityKind::GapSym,
            k => k,
        };
        ProximityMatrix {
            values,
            kind,
            row_defined: vec![true; n],
        }
    }

    /// `1 − p` off the diagonal, 0 on it. GAP matrices are symmetrized
    /// first; undefined entries count as proximity 0.
    pub fn to_distance(&self) -> DistanceMatrix {
        let n = self.len();
        let sym = matches!(self.kind, ProximityKind::Gap);
        let backend = match self.kind {
            ProximityKind::Original => Backend::Original,
            ProximityKind::Oob => Backend::Oob,
            ProximityKind::Gap | ProximityKind::GapSym => Backend::Gap,
        };
        let values = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                return 0.0;
            }
            let p = if sym {
                0.5 * (self.value_or_zero(i, j) + self.value_or_zero(j, i))
            } else {
                self.value_or_zero(i, j)
            };
            (1.0 - p).clamp(0.0, 1.0)
        });
        DistanceMatrix { values, backend }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
        write_matrix_csv(path.as_ref(), &self.values, ids)
    }

    /// Versioned binary cache tagged with the forest hash and kind.
    pub fn save_cache(&self, path: impl AsRef<Path>, forest_hash: &str) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::with_capacity(64 + 8 * self.values.len());
        writeln!(
            out,
            "{PROX_MAGIC} {PROX_VERSION} {} {} {}",
            self.kind,
            forest_hash,
            self.len()
        )
        .expect("write to vec");
        for v in self.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Load a cache written by [`ProximityMatrix::save_cache`]; fails unless
    /// it was built from the forest with hash `forest_hash` and has `kind`.
    pub fn load_cache(path: impl AsRef<Path>, forest_hash: &str, kind: ProximityKind) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(f);
        let mut header = String::new();
        reader.read_line(&mut header).map_err(|e| Error::io(path, e))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let bad = || Error::Data(format!("{} is not a matching proximity cache", path.display()));
        if parts.len() != 5 || parts[0] != PROX_MAGIC || parts[1] != PROX_VERSION.to_string() {
            return Err(bad());
        }
        if parts[2] != kind.as_str() || parts[3] != forest_hash {
            return Err(bad());
        }
        let n: usize = parts[4].parse().map_err(|_| bad())?;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() != 8 * n * n {
            return Err(bad());
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        ProximityMatrix::new(
            Array2::from_shape_vec((n, n), values).map_err(|e| Error::Data(e.to_string()))?,
            kind,
        )
    }
}

const PROX_MAGIC: &str = "RFEXPLAIN-PROXIMITY";
const PROX_VERSION: u32 = 1;

/// Content hash of a forest, used to key proximity caches.
pub fn forest_hash(forest: &TrainedForest) -> String {
    let bytes = serde_json::to_vec(forest).expect("forest serializes");
    hex(&Sha256::digest(&bytes))
}

/// Symmetric, zero-diagonal, non-negative distances over training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    values: Array2<f64>,
    backend: Backend,
}

impl DistanceMatrix {
    /// Wrap a matrix, checking symmetry and the zero diagonal.
    pub fn new(values: Array2<f64>, backend: Backend) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(Error::Param("distance matrix must be square".into()));
        }
        for i in 0..n {
            if values[[i, i]] != 0.0 {
                return Err(Error::Param(format!("distance diagonal at {i} is not 0")));
            }
            for j in 0..i {
                let (a, b) = (values[[i, j]], values[[j, i]]);
                if !(a >= 0.0) || (a - b).abs() > 1e-9 * a.abs().max(1.0) {
                    return Err(Error::Param(format!(
                        "distance matrix is not symmetric/non-negative at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(DistanceMatrix { values, backend })
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Apply `f` to every off-diagonal entry (diagonal stays 0).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DistanceMatrix {
        let n = self.len();
        let values = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { f(self.values[[i, j]]) });
        DistanceMatrix {
            values,
            backend: self.backend,
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
        write_matrix_csv(path.as_ref(), &self.values, ids)
    }

    /// Read a matrix CSV written by [`DistanceMatrix::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>, backend: Backend) -> Result<(DistanceMatrix, Vec<String>)> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(f);
        let ids: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
        let n = ids.len();
        let mut values = Vec::with_capacity(n * n);
        let mut rows = 0;
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != n + 1 {
                return Err(Error::Data(format!("matrix row {r} has {} cells, expected {}", rec.len(), n + 1)));
            }
            for (c, cell) in rec.iter().skip(1).enumerate() {
                values.push(cell.trim().parse::<f64>().map_err(|_| Error::BadCell {
                    row: r,
                    column: ids[c].clone(),
                    value: cell.to_string(),
                })?);
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Data(format!("matrix has {rows} rows but {n} columns")));
        }
        let values = Array2::from_shape_vec((n, n), values).map_err(|e| Error::Data(e.to_string()))?;
        Ok((DistanceMatrix::new(values, backend)?, ids))
    }
}

fn write_matrix_csv(path: &Path, values: &Array2<f64>, ids: &[String]) -> Result<()> {
    if ids.len() != values.nrows() {
        return Err(Error::Param("id count differs from matrix size".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(values.row(i).iter().map(|v| if v.is_nan() { "NA".to_string() } else { v.to_string() }));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows grouped by leaf, per tree (CSR layout), plus in-bag mass per leaf.
struct LeafBuckets {
    start: Vec<Vec<u32>>,
    rows: Vec<Vec<u32>>,
    mass: Vec<Vec<f64>>,
    oob_rows: Vec<Vec<u32>>,
}

impl LeafBuckets {
    fn new(forest: &TrainedForest) -> Self {
        let mut start = Vec::with_capacity(forest.n_trees());
        let mut rows = Vec::with_capacity(forest.n_trees());
        let mut mass = Vec::with_capacity(forest.n_trees());
        let mut oob_rows = Vec::with_capacity(forest.n_trees());
        for t in &forest.trees {
            let n_nodes = t.nodes.len();
            let mut count = vec![0u32; n_nodes + 1];
            let mut m = vec![0.0; n_nodes];
            for (i, &leaf) in t.leaf_of.iter().enumerate() {
                count[leaf as usize + 1] += 1;
                m[leaf as usize] += t.inbag[i] as f64;
            }
            for k in 0..n_nodes {
                count[k + 1] += count[k];
            }
            let mut fill = count.clone();
            let mut r = vec![0u32; t.leaf_of.len()];
            for (i, &leaf) in t.leaf_of.iter().enumerate() {
                r[fill[leaf as usize] as usize] = i as u32;
                fill[leaf as usize] += 1;
            }
            start.push(count);
            rows.push(r);
            mass.push(m);
            oob_rows.push(
                (0..t.inbag.len())
                    .filter(|&i| t.inbag[i] == 0)
                    .map(|i| i as u32)
                    .collect(),
            );
        }
        LeafBuckets {
            start,
            rows,
            mass,
            oob_rows,
        }
    }

    fn bucket(&self, t: usize, leaf: u32) -> &[u32] {
        let s = &self.start[t];
        &self.rows[t][s[leaf as usize] as usize..s[leaf as usize + 1] as usize]
    }
}

/// Compute the proximity matrix of `kind` over the forest's training rows.
pub fn proximity(forest: &TrainedForest, kind: ProximityKind) -> ProximityMatrix {
    match kind {
        ProximityKind::Original => proximity_original(forest),
        ProximityKind::Oob => proximity_oob(forest),
        ProximityKind::Gap => proximity_gap(forest),
        ProximityKind::GapSym => proximity_gap(forest).symmetrized(),
    }
}

/// Fraction of trees in which two rows share a leaf.
pub fn proximity_original(forest: &TrainedForest) -> ProximityMatrix {
    let n = forest.n_train();
    let nt = forest.n_trees() as f64;
    let buckets = LeafBuckets::new(forest);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            for (t, tree) in forest.trees.iter().enumerate() {
                for &j in buckets.bucket(t, tree.leaf_of[i]) {
                    row[j as usize] += 1.0;
                }
            }
            row.iter_mut().for_each(|v| *v /= nt);
            row
        })
        .collect();
    assemble(rows, ProximityKind::Original)
}

/// Co-leaf frequency over trees where both rows are out-of-bag.
pub fn proximity_oob(forest: &TrainedForest) -> ProximityMatrix {
    let n = forest.n_train();
    let buckets = LeafBuckets::new(forest);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut num = vec![0.0; n];
            let mut den = vec![0.0; n];
            for (t, tree) in forest.trees.iter().enumerate() {
                if !tree.is_oob(i) {
                    continue;
                }
                for &j in &buckets.oob_rows[t] {
                    den[j as usize] += 1.0;
                }
                for &j in buckets.bucket(t, tree.leaf_of[i]) {
                    if tree.is_oob(j as usize) {
                        num[j as usize] += 1.0;
                    }
                }
            }
            num.iter()
                .zip(&den)
                .map(|(&a, &b)| if b > 0.0 { a / b } else { f64::NAN })
                .collect()
        })
        .collect();
    assemble(rows, ProximityKind::Oob)
}

/// GAP proximities: over trees where `i` is out-of-bag, the in-bag
/// multiplicity of `j` in `i`'s leaf divided by the leaf's in-bag mass,
/// averaged. Each defined row is a probability distribution.
pub fn proximity_gap(forest: &TrainedForest) -> ProximityMatrix {
    let n = forest.n_train();
    let buckets = LeafBuckets::new(forest);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            let mut s_i = 0usize;
            for (t, tree) in forest.trees.iter().enumerate() {
                if !tree.is_oob(i) {
                    continue;
                }
                s_i += 1;
                let leaf = tree.leaf_of[i];
                let mass = buckets.mass[t][leaf as usize];
                for &j in buckets.bucket(t, leaf) {
                    let c = tree.inbag[j as usize];
                    if c > 0 {
                        row[j as usize] += c as f64 / mass;
                    }
                }
            }
            if s_i == 0 {
                return vec![f64::NAN; n];
            }
            row.iter_mut().for_each(|v| *v /= s_i as f64);
            row
        })
        .collect();
    assemble(rows, ProximityKind::Gap)
}

fn assemble(rows: Vec<Vec<f64>>, kind: ProximityKind) -> ProximityMatrix {
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    ProximityMatrix::new(Array2::from_shape_vec((n, n), flat).expect("square"), kind).expect("square")
}

/// Proximity row between an out-of-sample point `x` and every training row.
/// `x` is treated as out-of-bag in every tree.
pub fn extend(forest: &TrainedForest, x: ArrayView1<'_, f64>, kind: ProximityKind) -> Result<Vec<f64>> {
    let leaves = forest.leaves(x)?;
    let n = forest.n_train();
    let nt = forest.n_trees() as f64;
    let mut row = vec![0.0; n];
    match kind {
        ProximityKind::Original => {
            for (tree, &leaf) in forest.trees.iter().zip(&leaves) {
                for (j, &l) in tree.leaf_of.iter().enumerate() {
                    if l == leaf {
                        row[j] += 1.0;
                    }
                }
            }
            row.iter_mut().for_each(|v| *v /= nt);
        }
        ProximityKind::Oob => {
            let mut den = vec![0.0; n];
            for (tree, &leaf) in forest.trees.iter().zip(&leaves) {
                for j in 0..n {
                    if tree.is_oob(j) {
                        den[j] += 1.0;
                        if tree.leaf_of[j] == leaf {
                            row[j] += 1.0;
                        }
                    }
                }
            }
            for (v, d) in row.iter_mut().zip(&den) {
                *v = if *d > 0.0 { *v / d } else { f64::NAN };
            }
        }
        ProximityKind::Gap | ProximityKind::GapSym => {
            for (tree, &leaf) in forest.trees.iter().zip(&leaves) {
                let mass: f64 = tree
                    .leaf_of
                    .iter()
                    .zip(&tree.inbag)
                    .filter(|(&l, _)| l == leaf)
                    .map(|(_, &c)| c as f64)
                    .sum();
                for (j, &l) in tree.leaf_of.iter().enumerate() {
                    if l == leaf && tree.inbag[j] > 0 {
                        row[j] += tree.inbag[j] as f64 / mass;
                    }
                }
            }
            row.iter_mut().for_each(|v| *v /= nt);
        }
    }
    Ok(row)
}

/// [`extend`] for the GAP kind.
pub fn extend_gap(forest: &TrainedForest, x: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
    extend(forest, x, ProximityKind::Gap)
}

/// Distances from out-of-sample rows to every training row: `1 − p` using
/// [`extend`], undefined proximities counting as 0.
pub fn cross_distances(forest: &TrainedForest, rows: &Array2<f64>, kind: ProximityKind) -> Result<Array2<f64>> {
    let n = forest.n_train();
    let out: Vec<Vec<f64>> = (0..rows.nrows())
        .into_par_iter()
        .map(|r| {
            extend(forest, rows.row(r), kind).map(|p| {
                p.into_iter()
                    .map(|v| if v.is_nan() { 1.0 } else { (1.0 - v).clamp(0.0, 1.0) })
                    .collect()
            })
        })
        .collect::<Result<_>>()?;
    Ok(Array2::from_shape_vec((rows.nrows(), n), out.into_iter().flatten().collect()).expect("shape"))
}

/// Per-column z-scoring fitted on training rows. Numeric columns with zero
/// variance are dropped; one-hot columns pass through unscaled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// `(column, mean, scale)` for every column kept.
    columns: Vec<(usize, f64, f64)>,
    pub dropped: Vec<String>,
}

impl Standardizer {
    pub fn fit(dataset: &Dataset) -> Standardizer {
        let n = dataset.n_rows() as f64;
        let mut columns = Vec::new();
        let mut dropped = Vec::new();
        for (j, meta) in dataset.columns.iter().enumerate() {
            match meta.kind {
                ColumnKind::OneHot { .. } => columns.push((j, 0.0, 1.0)),
                _ => {
                    let col = dataset.features.column(j);
                    let mean = col.sum() / n;
                    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    if var > 0.0 {
                        columns.push((j, mean, var.sqrt()));
                    } else {
                        dropped.push(meta.name.clone());
                    }
                }
            }
        }
        if !dropped.is_empty() {
            log::warn!(
                "{} zero-variance column(s) excluded from L2 distance: {}",
                dropped.len(),
                dropped.join(", ")
            );
        }
        Standardizer { columns, dropped }
    }

    pub fn transform(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        self.columns.iter().map(|&(j, m, s)| (x[j] - m) / s).collect()
    }

    pub fn transform_all(&self, features: &Array2<f64>) -> Array2<f64> {
        let k = self.columns.len();
        Array2::from_shape_fn((features.nrows(), k), |(i, c)| {
            let (j, m, s) = self.columns[c];
            (features[[i, j]] - m) / s
        })
    }
}

fn euclid(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Euclidean distances between all rows after standardizing with
/// statistics from the same rows.
pub fn l2_distance(dataset: &Dataset) -> DistanceMatrix {
    let scaler = Standardizer::fit(dataset);
    l2_distance_with(&scaler, dataset)
}

pub fn l2_distance_with(scaler: &Standardizer, dataset: &Dataset) -> DistanceMatrix {
    let z = scaler.transform_all(&dataset.features);
    let n = z.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { euclid(z.row(i), z.row(j)) }).collect())
        .collect();
    DistanceMatrix {
        values: Array2::from_shape_vec((n, n), rows.into_iter().flatten().collect()).expect("shape"),
        backend: Backend::L2,
    }
}

/// Euclidean distances from `rows` to `train`, both standardized by `scaler`.
pub fn l2_cross(scaler: &Standardizer, rows: &Array2<f64>, train: &Array2<f64>) -> Array2<f64> {
    let a = scaler.transform_all(rows);
    let b = scaler.transform_all(train);
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| euclid(a.row(i), b.row(j)))
}
