//! Tabular datasets: CSV ingestion, categorical encoding, class filtering and
//! stratified fold plans.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seeds;

/// How a feature column is interpreted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    /// Un-encoded categorical; the feature cell holds the level index.
    Categorical { levels: Vec<String> },
    /// One column of a one-hot group expanded from categorical `source`.
    OneHot {
        group: usize,
        source: String,
        level: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl ColumnMeta {
    pub fn numeric(name: impl Into<String>) -> Self {
        ColumnMeta {
            name: name.into(),
            kind: ColumnKind::Numeric,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, ColumnKind::Numeric)
    }
}

/// A labelled feature matrix. Missing cells are `NaN` until [`Dataset::encode`]
/// has been applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
    pub columns: Vec<ColumnMeta>,
    pub row_ids: Vec<String>,
}

/// Policy for missing numeric cells during encoding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    Zero,
    #[default]
    Error,
}

/// Column declarations for [`load_csv`]. Columns that are neither declared
/// nor used as label/id are skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub label: String,
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
}

fn default_delimiter() -> char {
    ','
}

fn default_missing() -> Vec<String> {
    vec![String::new(), "NA".to_string()]
}

impl Schema {
    pub fn new(label: impl Into<String>) -> Self {
        Schema {
            label: label.into(),
            id: None,
            numeric: Vec::new(),
            categorical: Vec::new(),
            delimiter: default_delimiter(),
            missing: default_missing(),
        }
    }
}

/// Read a CSV file under `schema`. Categoricals are left un-encoded and row
/// order is preserved.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// [`load_csv`] over any reader.
pub fn read_csv<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    if !schema.delimiter.is_ascii() {
        return Err(Error::Param("CSV delimiter must be a single ASCII character".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let label_col = find(&schema.label)?;
    let id_col = schema.id.as_deref().map(find).transpose()?;
    for name in schema.numeric.iter().chain(&schema.categorical) {
        find(name)?;
    }

    // Feature columns in file order.
    let mut feature_cols: Vec<(usize, bool)> = Vec::new();
    for (idx, h) in headers.iter().enumerate() {
        if schema.numeric.contains(h) {
            feature_cols.push((idx, false));
        } else if schema.categorical.contains(h) {
            feature_cols.push((idx, true));
        }
    }
    if feature_cols.is_empty() {
        return Err(Error::Data("schema declares no feature columns".into()));
    }

    let is_missing = |s: &str| schema.missing.iter().any(|m| m == s.trim());
    let mut levels: Vec<Vec<String>> = vec![Vec::new(); feature_cols.len()];
    let mut values: Vec<f64> = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    let mut labels = Vec::new();
    let mut row_ids = Vec::new();

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |idx: usize| record.get(idx).unwrap_or("").trim();
        let raw_label = cell(label_col);
        if is_missing(raw_label) {
            return Err(Error::MissingValue {
                row,
                column: schema.label.clone(),
            });
        }
        let label = match label_names.iter().position(|l| l == raw_label) {
            Some(l) => l,
            None => {
                label_names.push(raw_label.to_string());
                label_names.len() - 1
            }
        };
        labels.push(label);
        row_ids.push(match id_col {
            Some(c) => cell(c).to_string(),
            None => row.to_string(),
        });
        for (f, &(idx, categorical)) in feature_cols.iter().enumerate() {
            let raw = cell(idx);
            let v = if is_missing(raw) {
                f64::NAN
            } else if categorical {
                let lv = &mut levels[f];
                match lv.iter().position(|l| l == raw) {
                    Some(p) => p as f64,
                    None => {
                        lv.push(raw.to_string());
                        (lv.len() - 1) as f64
                    }
                }
            } else {
                raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::BadCell {
                        row,
                        column: headers[idx].clone(),
                        value: raw.to_string(),
                    }
                })?
            };
            values.push(v);
        }
    }

    let n = labels.len();
    if n == 0 {
        return Err(Error::Data("CSV contains no rows".into()));
    }
    let columns = feature_cols
        .iter()
        .zip(levels)
        .map(|(&(idx, categorical), levels)| ColumnMeta {
            name: headers[idx].clone(),
            kind: if categorical {
                ColumnKind::Categorical { levels }
            } else {
                ColumnKind::Numeric
            },
        })
        .collect::<Vec<_>>();
    let features = Array2::from_shape_vec((n, columns.len()), values)
        .map_err(|e| Error::Data(e.to_string()))?;
    Ok(Dataset {
        features,
        labels,
        label_names,
        columns,
        row_ids,
    })
}

impl Dataset {
    /// Build an all-numeric dataset from parts. Labels must be dense.
    pub fn from_parts(
        features: Array2<f64>,
        labels: Vec<usize>,
        row_ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::Data(format!(
                "{} labels for {} feature rows",
                labels.len(),
                n
            )));
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; n_classes];
        labels.iter().for_each(|&l| seen[l] = true);
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!("class {empty} has no rows")));
        }
        let row_ids = row_ids.unwrap_or_else(|| (0..n).map(|i| i.to_string()).collect());
        if row_ids.len() != n {
            return Err(Error::Data("row id count differs from row count".into()));
        }
        Ok(Dataset {
            columns: (0..features.ncols())
                .map(|j| ColumnMeta::numeric(format!("x{j}")))
                .collect(),
            features,
            labels,
            label_names: (0..n_classes).map(|c| c.to_string()).collect(),
            row_ids,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.n_classes())
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// True when no categorical columns remain and no cell is missing.
    pub fn is_encoded(&self) -> bool {
        self.columns
            .iter()
            .all(|c| !matches!(c.kind, ColumnKind::Categorical { .. }))
            && self.features.iter().all(|v| !v.is_nan())
    }

    /// Group id per column: numeric columns are singleton groups, one-hot
    /// columns expanded from the same categorical share one id.
    pub fn feature_groups(&self) -> Vec<usize> {
        let mut next = 0usize;
        let mut by_source: HashMap<&str, usize> = HashMap::new();
        self.columns
            .iter()
            .map(|c| match &c.kind {
                ColumnKind::OneHot { source, .. } => *by_source.entry(source).or_insert_with(|| {
                    next += 1;
                    next - 1
                }),
                _ => {
                    next += 1;
                    next - 1
                }
            })
            .collect()
    }

    /// Rows `idx` in the given order; the label alphabet is kept as is.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            label_names: self.label_names.clone(),
            columns: self.columns.clone(),
            row_ids: idx.iter().map(|&i| self.row_ids[i].clone()).collect(),
        }
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.row_ids.iter().position(|r| r == id)
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|l| l == name)
    }

    /// Hash of the column layout (names and kinds), used to check that a
    /// serialized model matches a dataset.
    pub fn feature_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.columns {
            h.update(serde_json::to_vec(c).expect("column meta serializes"));
            h.update([0u8]);
        }
        hex(&h.finalize())
    }

    /// Expand categoricals into one-hot groups and resolve missing numerics.
    /// A missing categorical becomes an all-zero group.
    pub fn encode(&self, policy: MissingPolicy) -> Result<Dataset> {
        let n = self.n_rows();
        let mut group_base = self
            .columns
            .iter()
            .filter_map(|c| match &c.kind {
                ColumnKind::OneHot { group, .. } => Some(group + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let mut columns = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for (j, meta) in self.columns.iter().enumerate() {
            let src = self.features.column(j);
            match &meta.kind {
                ColumnKind::Categorical { levels } => {
                    for (li, level) in levels.iter().enumerate() {
                        columns.push(ColumnMeta {
                            name: format!("{}={}", meta.name, level),
                            kind: ColumnKind::OneHot {
                                group: group_base,
                                source: meta.name.clone(),
                                level: level.clone(),
                            },
                        });
                        cols.push(
                            src.iter()
                                .map(|&v| if !v.is_nan() && v as usize == li { 1.0 } else { 0.0 })
                                .collect(),
                        );
                    }
                    group_base += 1;
                }
                _ => {
                    let mut col = Vec::with_capacity(n);
                    for (row, &v) in src.iter().enumerate() {
                        if v.is_nan() {
                            match policy {
                                MissingPolicy::Zero => col.push(0.0),
                                MissingPolicy::Error => {
                                    return Err(Error::MissingValue {
                                        row,
                                        column: meta.name.clone(),
                                    })
                                }
                            }
                        } else {
                            col.push(v);
                        }
                    }
                    columns.push(meta.clone());
                    cols.push(col);
                }
            }
        }
        let k = columns.len();
        let features = Array2::from_shape_fn((n, k), |(i, j)| cols[j][i]);
        Ok(Dataset {
            features,
            labels: self.labels.clone(),
            label_names: self.label_names.clone(),
            columns,
            row_ids: self.row_ids.clone(),
        })
    }

    /// Keep only rows whose label is in `keep` and re-index labels densely,
    /// preserving the original label order.
    pub fn filter_classes(&self, keep: &[usize]) -> Result<Dataset> {
        let mut kept: Vec<usize> = keep.to_vec();
        kept.sort_unstable();
        kept.dedup();
        if let Some(bad) = kept.iter().find(|&&l| l >= self.n_classes()) {
            return Err(Error::Param(format!("label {bad} is not present")));
        }
        if kept.len() < 2 {
            return Err(Error::Param(
                "filter_classes must keep at least two classes".into(),
            ));
        }
        let rows: Vec<usize> = (0..self.n_rows())
            .filter(|&i| kept.contains(&self.labels[i]))
            .collect();
        let mut out = self.select_rows(&rows);
        out.labels = out
            .labels
            .iter()
            .map(|l| kept.iter().position(|k| k == l).expect("kept label"))
            .collect();
        out.label_names = kept.iter().map(|&l| self.label_names[l].clone()).collect();
        Ok(out)
    }

    /// [`Dataset::filter_classes`] by label name.
    pub fn filter_class_names<S: AsRef<str>>(&self, keep: &[S]) -> Result<Dataset> {
        let idx = keep
            .iter()
            .map(|name| {
                self.label_index(name.as_ref())
                    .ok_or_else(|| Error::Param(format!("label '{}' is not present", name.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        self.filter_classes(&idx)
    }

    /// Write a versioned binary-safe snapshot of the dataset.
    pub fn save_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let body = serde_json::to_vec(self)?;
        writeln!(f, "{CACHE_MAGIC} {CACHE_VERSION}").map_err(|e| Error::io(path, e))?;
        f.write_all(&body).map_err(|e| Error::io(path, e))
    }

    pub fn load_cache(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(f);
        let mut header = String::new();
        reader
            .read_line(&mut header)
            .map_err(|e| Error::io(path, e))?;
        let expected = format!("{CACHE_MAGIC} {CACHE_VERSION}");
        if header.trim_end() != expected {
            return Err(Error::Data(format!(
                "{} is not a dataset snapshot (header {:?})",
                path.display(),
                header.trim_end()
            )));
        }
        Ok(serde_json::from_reader(reader)?)
    }
}

const CACHE_MAGIC: &str = "RFEXPLAIN-DATASET";
const CACHE_VERSION: u32 = 1;

pub(crate) fn class_counts(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    counts
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Assignment of every row to one of `k_folds` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k_folds: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// Stratified k-fold plan: within each class rows are shuffled and dealt
/// round-robin, with each class starting where the previous one stopped so
/// fold sizes stay balanced overall.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Param("fold count must be at least 2".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let counts = class_counts(labels, n_classes);
    if let Some((c, &size)) = counts.iter().enumerate().find(|(_, &s)| s > 0 && s < k) {
        return Err(Error::Data(format!(
            "class {c} has {size} rows, fewer than {k} folds"
        )));
    }
    let mut rng = seeds::rng(seed, 0);
    let mut assignments = vec![0; labels.len()];
    let mut offset = 0;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for (p, &i) in members.iter().enumerate() {
            assignments[i] = (p + offset) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok(FoldPlan {
        k_folds: k,
        assignments,
        seed,
    })
}

/// Stratified holdout split: roughly `holdout` of every class goes to the
/// second index list (at least one row per class with ≥2 members).
pub fn stratified_split(labels: &[usize], holdout: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = seeds::rng(seed, 1);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let mut n_valid = (members.len() as f64 * holdout).round() as usize;
        if members.len() >= 2 {
            n_valid = n_valid.clamp(1, members.len() - 1);
        } else {
            n_valid = 0;
        }
        valid.extend_from_slice(&members[..n_valid]);
        train.extend_from_slice(&members[n_valid..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    (train, valid)
}

/// Three well-separated Gaussian classes with 14 numeric and 2 categorical
/// columns (un-encoded). Class of row `r` is `r % 3`.
pub fn synth_three_class(n: usize, seed: u64) -> Result<Dataset> {
    const NUMERIC: usize = 14;
    const SPREAD: f64 = 6.0;
    if n < 30 {
        return Err(Error::Param("synthetic dataset needs n >= 30".into()));
    }
    let mut rng = seeds::rng(seed, 7);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let styles = ["blend", "value", "growth", "income"];
    let regions = ["us", "eu", "asia"];
    let mut values = Vec::with_capacity(n * (NUMERIC + 2));
    let mut labels = Vec::with_capacity(n);
    for r in 0..n {
        let class = r % 3;
        labels.push(class);
        for f in 0..NUMERIC {
            let mean = SPREAD * ((class + f) % 3) as f64;
            values.push(mean + noise.sample(&mut rng));
        }
        let style = if rand::Rng::random_bool(&mut rng, 0.8) {
            class
        } else {
            rand::Rng::random_range(&mut rng, 0..styles.len())
        };
        values.push(style as f64);
        values.push(rand::Rng::random_range(&mut rng, 0..regions.len()) as f64);
    }
    let mut columns: Vec<ColumnMeta> = (0..NUMERIC)
        .map(|f| ColumnMeta::numeric(format!("exposure_{f}")))
        .collect();
    columns.push(ColumnMeta {
        name: "style".into(),
        kind: ColumnKind::Categorical {
            levels: styles.iter().map(|s| s.to_string()).collect(),
        },
    });
    columns.push(ColumnMeta {
        name: "region".into(),
        kind: ColumnKind::Categorical {
            levels: regions.iter().map(|s| s.to_string()).collect(),
        },
    });
    Ok(Dataset {
        features: Array2::from_shape_vec((n, NUMERIC + 2), values)
            .map_err(|e| Error::Data(e.to_string()))?,
        labels,
        label_names: vec!["large_blend".into(), "large_value".into(), "large_growth".into()],
        columns,
        row_ids: (0..n).map(|r| format!("synth{r}")).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn numeric_schema(cols: &[&str], label: &str) -> Schema {
        let mut s = Schema::new(label);
        s.numeric = cols.iter().map(|c| c.to_string()).collect();
        s
    }

    #[test]
    fn load_three_rows() {
        let csv = "a,b,y\n1,2,a\n3,4.5,b\n5,6,a\n";
        let ds = read_csv(csv.as_bytes(), &numeric_schema(&["a", "b"], "y")).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.n_classes(), 2);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.features[[1, 1]], 4.5);
        assert_eq!(ds.row_ids, vec!["0", "1", "2"]);
    }

    #[test]
    fn load_errors() {
        let csv = "a,b,y\n1,2,a\n3,NA,b\n";
        let ds = read_csv(csv.as_bytes(), &numeric_schema(&["a", "b"], "y")).unwrap();
        match ds.encode(MissingPolicy::Error) {
            Err(Error::MissingValue { row, column }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "b");
            }
            other => panic!("expected missing value error, got {other:?}"),
        }
        let bad = "a,y\n1,a\nx1,b\n";
        match read_csv(bad.as_bytes(), &numeric_schema(&["a"], "y")) {
            Err(Error::BadCell { row, column, value }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (1, "a", "x1"));
            }
            other => panic!("expected bad cell, got {other:?}"),
        }
        assert!(matches!(
            read_csv("a,y\n1,a\n".as_bytes(), &numeric_schema(&["a"], "label")),
            Err(Error::UnknownColumn(_))
        ));
        assert!(load_csv("/nonexistent/file.csv", &numeric_schema(&["a"], "y")).is_err());
    }

    #[test]
    fn custom_delimiter_and_ids() {
        let csv = "id;a;y\nr1;1;x\nr2;;y\n";
        let mut schema = numeric_schema(&["a"], "y");
        schema.delimiter = ';';
        schema.id = Some("id".into());
        let ds = read_csv(csv.as_bytes(), &schema).unwrap();
        assert_eq!(ds.row_ids, vec!["r1", "r2"]);
        let enc = ds.encode(MissingPolicy::Zero).unwrap();
        assert_eq!(enc.features[[1, 0]], 0.0);
    }

    #[test]
    fn one_hot_encoding() {
        let csv = "c,n,y\nred,1,a\ngreen,2,b\nblue,3,a\n,4,b\n";
        let mut schema = numeric_schema(&["n"], "y");
        schema.categorical = vec!["c".into()];
        let ds = read_csv(csv.as_bytes(), &schema).unwrap();
        assert!(!ds.is_encoded());
        let enc = ds.encode(MissingPolicy::Error).unwrap();
        assert_eq!(enc.n_features(), 4);
        for i in 0..3 {
            let s: f64 = (0..3).map(|j| enc.features[[i, j]]).sum();
            assert_eq!(s, 1.0);
        }
        let s: f64 = (0..3).map(|j| enc.features[[3, j]]).sum();
        assert_eq!(s, 0.0, "missing categorical encodes as an all-zero group");
        assert_eq!(enc.feature_groups(), vec![0, 0, 0, 1]);
        assert!(enc.is_encoded());
        assert_eq!(enc.encode(MissingPolicy::Error).unwrap(), enc);
    }

    #[test]
    fn numeric_only_encode_is_identity() {
        let csv = "a,b,y\n1,2,a\n3,4,b\n";
        let ds = read_csv(csv.as_bytes(), &numeric_schema(&["a", "b"], "y")).unwrap();
        assert_eq!(ds.encode(MissingPolicy::Zero).unwrap(), ds);
    }

    #[test]
    fn filter_classes_reindexes() {
        let labels = vec![0, 1, 2, 3, 1, 3, 0];
        let ds = Dataset::from_parts(Array2::zeros((7, 1)), labels, None).unwrap();
        let f = ds.filter_classes(&[3, 1]).unwrap();
        assert_eq!(f.labels, vec![0, 1, 0, 1]);
        assert_eq!(f.row_ids, vec!["1", "3", "4", "5"]);
        assert_eq!(f.label_names, vec!["1", "3"]);
        assert_eq!(ds.filter_classes(&[0, 1, 2, 3]).unwrap(), ds);
        assert!(ds.filter_classes(&[1]).is_err());
    }

    #[test]
    fn folds_exact_division() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let plan = stratified_folds(&labels, 5, 11).unwrap();
        for f in 0..5 {
            let test = plan.test_indices(f);
            let ones = test.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(test.len(), 20);
            assert_eq!(ones, 10);
        }
        assert_eq!(plan, stratified_folds(&labels, 5, 11).unwrap());
    }

    #[test]
    fn folds_pigeonhole_minority() {
        // 7 minority rows into 5 folds: two folds get 2, three get 1.
        let mut labels = vec![0usize; 40];
        labels.extend(vec![1usize; 7]);
        let plan = stratified_folds(&labels, 5, 3).unwrap();
        let mut per_fold: Vec<usize> = (0..5)
            .map(|f| plan.test_indices(f).iter().filter(|&&i| labels[i] == 1).count())
            .collect();
        per_fold.sort_unstable();
        assert_eq!(per_fold, vec![1, 1, 1, 2, 2]);
    }

    #[test]
    fn folds_reject_small_class() {
        let labels = vec![0, 0, 0, 0, 0, 1, 1];
        assert!(stratified_folds(&labels, 5, 0).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..50).map(|i| usize::from(i % 5 == 0)).collect();
        let (train, valid) = stratified_split(&labels, 0.2, 9);
        assert_eq!(train.len() + valid.len(), 50);
        assert_eq!(valid.iter().filter(|&&i| labels[i] == 1).count(), 2);
        assert_eq!(valid.len(), 10);
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_three_class(300, 5).unwrap();
        let b = synth_three_class(300, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![100, 100, 100]);
        assert_eq!(a.n_features(), 16);
        assert_eq!(a.encode(MissingPolicy::Error).unwrap().n_features(), 14 + 4 + 3);
        assert!(synth_three_class(10, 5).is_err());
    }

    #[test]
    fn cache_roundtrip() {
        let ds = synth_three_class(30, 1).unwrap().encode(MissingPolicy::Error).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.rfds");
        ds.save_cache(&p).unwrap();
        assert_eq!(Dataset::load_cache(&p).unwrap(), ds);
        std::fs::write(&p, "garbage\n{}").unwrap();
        assert!(Dataset::load_cache(&p).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(
            labels in proptest::collection::vec(0usize..3, 15..80),
            k in 2usize..6,
            seed in any::<u64>(),
        ) {
            let counts = class_counts(&labels, 3);
            prop_assume!(counts.iter().all(|&c| c == 0 || c >= k));
            let plan = stratified_folds(&labels, k, seed).unwrap();
            prop_assert!(plan.assignments.iter().all(|&f| f < k));
            for c in 0..3 {
                let per: Vec<usize> = (0..k)
                    .map(|f| plan.test_indices(f).iter().filter(|&&i| labels[i] == c).count())
                    .collect();
                let (lo, hi) = (per.iter().min().unwrap(), per.iter().max().unwrap());
                prop_assert!(hi - lo <= 1);
            }
        }

        #[test]
        fn filter_preserves_order(labels in proptest::collection::vec(0usize..4, 8..40)) {
            let counts = class_counts(&labels, 4);
            prop_assume!(counts.iter().all(|&c| c > 0));
            let ds = Dataset::from_parts(
                Array2::from_shape_fn((labels.len(), 1), |(i, _)| i as f64),
                labels,
                None,
            ).unwrap();
            let f = ds.filter_classes(&[0, 2]).unwrap();
            let col: Vec<f64> = f.features.column(0).to_vec();
            prop_assert!(col.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
