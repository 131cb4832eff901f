//! C interface. Objects cross the boundary as opaque handles owned by the
//! caller and released with the matching `*_free`. Every fallible call
//! returns an [`RfxStatus`]; the message for the last failure on the calling
//! thread is available from [`rfx_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ndarray::{Array2, ArrayView1};
use rfexplain::data::Dataset;
use rfexplain::explain;
use rfexplain::forest::{self, ClassWeighting, ForestParams, MaxFeatures, TrainedForest};
use rfexplain::proximity::{self, DistanceMatrix, ProximityKind};
use rfexplain::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RfxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Model = 5,
    DimensionMismatch = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RfxProximity {
    Original = 0,
    Oob = 1,
    Gap = 2,
}

/// Forest hyper-parameters. `max_depth == 0` grows until leaves are pure;
/// `max_features <= 0` means the square-root rule.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct RfxForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub max_features: f64,
    pub balanced: bool,
    pub seed: u64,
}

pub struct RfxDataset(Dataset);

pub struct RfxForest(TrainedForest);

/// Symmetric distance matrix over the training rows of a forest.
pub struct RfxMatrix(DistanceMatrix);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> RfxStatus {
    match err {
        Error::Io { .. } => RfxStatus::Io,
        Error::Csv(_) | Error::BadCell { .. } | Error::MissingValue { .. } | Error::UnknownColumn(_) | Error::Data(_) | Error::Json(_) => {
            RfxStatus::Data
        }
        Error::Param(_) | Error::Config(_) => RfxStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => RfxStatus::DimensionMismatch,
        Error::Model(_) => RfxStatus::Model,
        Error::Stage { source, .. } => status_of(source),
    }
}

struct Fail(RfxStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RfxStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RfxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RfxStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            RfxStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail(RfxStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

unsafe fn fill(out: *mut f64, out_len: usize, values: &[f64]) -> Result<(), Fail> {
    if out_len < values.len() {
        return Err(Fail(
            RfxStatus::BufferTooSmall,
            format!("buffer holds {out_len} values, need {}", values.len()),
        ));
    }
    if values.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(null("output buffer"));
    }
    std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn kind_of(k: RfxProximity) -> ProximityKind {
    match k {
        RfxProximity::Original => ProximityKind::Original,
        RfxProximity::Oob => ProximityKind::Oob,
        RfxProximity::Gap => ProximityKind::Gap,
    }
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rfx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rfx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn rfx_forest_params_default() -> RfxForestParams {
    let d = ForestParams::default();
    RfxForestParams {
        n_trees: d.n_trees,
        max_depth: 0,
        min_leaf: d.min_leaf,
        max_features: 0.0,
        balanced: true,
        seed: d.seed,
    }
}

/// Build a dataset from a row-major `n_rows × n_features` matrix and dense
/// class labels `0..c`.
///
/// # Safety
/// `features` must point to `n_rows * n_features` doubles and `labels` to
/// `n_rows` values. `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfx_dataset_new(
    features: *const f64,
    labels: *const u32,
    n_rows: usize,
    n_features: usize,
    out: *mut *mut RfxDataset,
) -> RfxStatus {
    guard(|| {
        let len = n_rows
            .checked_mul(n_features)
            .ok_or_else(|| Fail(RfxStatus::InvalidArgument, "matrix size overflows".into()))?;
        let x = slice_arg(features, len, "features")?;
        let y = slice_arg(labels, n_rows, "labels")?;
        let features = Array2::from_shape_vec((n_rows, n_features), x.to_vec())
            .map_err(|e| Fail(RfxStatus::InvalidArgument, e.to_string()))?;
        let ds = Dataset::from_parts(features, y.iter().map(|&l| l as usize).collect(), None)?;
        write_out(out, Box::into_raw(Box::new(RfxDataset(ds))))
    })
}

/// Load a dataset snapshot written by the command-line tool.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rfx_dataset_load(path: *const c_char, out: *mut *mut RfxDataset) -> RfxStatus {
    guard(|| {
        let ds = Dataset::load_cache(path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(RfxDataset(ds))))
    })
}

/// # Safety
/// `ds` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rfx_dataset_free(ds: *mut RfxDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle; returns 0 for null.
#[no_mangle]
pub unsafe extern "C" fn rfx_dataset_n_rows(ds: *const RfxDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n_rows())
}

/// # Safety
/// `ds` must be a live handle; returns 0 for null.
#[no_mangle]
pub unsafe extern "C" fn rfx_dataset_n_features(ds: *const RfxDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n_features())
}

/// Fit a forest on `ds`.
///
/// # Safety
/// `ds` must be a live handle, `params` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rfx_forest_fit(
    ds: *const RfxDataset,
    params: *const RfxForestParams,
    out: *mut *mut RfxForest,
) -> RfxStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let p = handle(params, "params")?;
        let params = ForestParams {
            n_trees: p.n_trees,
            max_features: if p.max_features > 0.0 {
                MaxFeatures::Fraction(p.max_features)
            } else {
                MaxFeatures::SQRT
            },
            max_depth: (p.max_depth > 0).then_some(p.max_depth),
            min_leaf: p.min_leaf,
            class_weighting: if p.balanced {
                ClassWeighting::Balanced
            } else {
                ClassWeighting::None
            },
            seed: p.seed,
        };
        let f = forest::fit(&ds.0, &params)?;
        write_out(out, Box::into_raw(Box::new(RfxForest(f))))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rfx_forest_load(path: *const c_char, out: *mut *mut RfxForest) -> RfxStatus {
    guard(|| {
        let f = TrainedForest::load(path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(RfxForest(f))))
    })
}

/// # Safety
/// `forest` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rfx_forest_save(forest: *const RfxForest, path: *const c_char) -> RfxStatus {
    guard(|| {
        let f = handle(forest, "forest")?;
        f.0.save(path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `forest` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rfx_forest_free(forest: *mut RfxForest) {
    if !forest.is_null() {
        drop(Box::from_raw(forest));
    }
}

/// # Safety
/// `forest` must be a live handle; returns 0 for null.
#[no_mangle]
pub unsafe extern "C" fn rfx_forest_n_classes(forest: *const RfxForest) -> usize {
    forest.as_ref().map_or(0, |f| f.0.n_classes)
}

/// # Safety
/// `forest` must be a live handle; returns 0 for null.
#[no_mangle]
pub unsafe extern "C" fn rfx_forest_n_train(forest: *const RfxForest) -> usize {
    forest.as_ref().map_or(0, |f| f.0.n_train())
}

/// Predicted class of one feature row.
///
/// # Safety
/// `x` must point to `n_features` doubles and `out_class` be writable.
#[no_mangle]
pub unsafe extern "C" fn rfx_forest_predict(
    forest: *const RfxForest,
    x: *const f64,
    n_features: usize,
    out_class: *mut u32,
) -> RfxStatus {
    guard(|| {
        let f = handle(forest, "forest")?;
        let x = slice_arg(x, n_features, "x")?;
        let c = f.0.predict(ArrayView1::from(x))?;
        write_out(out_class, c as u32)
    })
}

/// Class probabilities of one feature row into `out[0..n_classes]`.
///
/// # Safety
/// `x` must point to `n_features` doubles and `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rfx_forest_predict_proba(
    forest: *const RfxForest,
    x: *const f64,
    n_features: usize,
    out: *mut f64,
    out_len: usize,
) -> RfxStatus {
    guard(|| {
        let f = handle(forest, "forest")?;
        let x = slice_arg(x, n_features, "x")?;
        let p = f.0.predict_proba(ArrayView1::from(x))?;
        fill(out, out_len, &p)
    })
}

/// Proximities of a new row to every training row, `out[0..n_train]`.
///
/// # Safety
/// `x` must point to `n_features` doubles and `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rfx_proximity_row(
    forest: *const RfxForest,
    kind: RfxProximity,
    x: *const f64,
    n_features: usize,
    out: *mut f64,
    out_len: usize,
) -> RfxStatus {
    guard(|| {
        let f = handle(forest, "forest")?;
        let x = slice_arg(x, n_features, "x")?;
        let row = proximity::extend(&f.0, ArrayView1::from(x), kind_of(kind))?;
        fill(out, out_len, &row)
    })
}

/// Distance matrix `1 − p` over the forest's training rows. GAP is
/// symmetrized first and undefined entries count as zero proximity.
///
/// # Safety
/// `forest` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rfx_distance_matrix(
    forest: *const RfxForest,
    kind: RfxProximity,
    out: *mut *mut RfxMatrix,
) -> RfxStatus {
    guard(|| {
        let f = handle(forest, "forest")?;
        let d = proximity::proximity(&f.0, kind_of(kind)).to_distance();
        write_out(out, Box::into_raw(Box::new(RfxMatrix(d))))
    })
}

/// # Safety
/// `m` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rfx_matrix_free(m: *mut RfxMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Side length of the matrix; 0 for null.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rfx_matrix_len(m: *const RfxMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.len())
}

/// Copy the matrix row-major into `out[0..n*n]`.
///
/// # Safety
/// `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rfx_matrix_copy(m: *const RfxMatrix, out: *mut f64, out_len: usize) -> RfxStatus {
    guard(|| {
        let m = handle(m, "matrix")?;
        let flat: Vec<f64> = m.0.values().iter().copied().collect();
        fill(out, out_len, &flat)
    })
}

fn labels_for<'a>(m: &RfxMatrix, ds: &'a RfxDataset) -> Result<&'a [usize], Fail> {
    if ds.0.n_rows() != m.0.len() {
        return Err(Fail(
            RfxStatus::DimensionMismatch,
            format!("dataset has {} rows, matrix has {}", ds.0.n_rows(), m.0.len()),
        ));
    }
    Ok(&ds.0.labels)
}

/// Semi-factual (farthest same-class row) and counter-factual (nearest
/// other-class row) of training row `query`.
///
/// # Safety
/// Handles must be live; `semi` and `counter` writable.
#[no_mangle]
pub unsafe extern "C" fn rfx_factuals(
    m: *const RfxMatrix,
    train: *const RfxDataset,
    query: usize,
    semi: *mut usize,
    counter: *mut usize,
) -> RfxStatus {
    guard(|| {
        let m = handle(m, "matrix")?;
        let labels = labels_for(m, handle(train, "dataset")?)?;
        let pair = explain::factual_pair(query, &m.0, labels)?;
        write_out(semi, pair.semi_factual)?;
        write_out(counter, pair.counter_factual)
    })
}

/// k-medoids prototypes, `per_class` per class, written as training row
/// indices ordered by class. `written` receives the count.
///
/// # Safety
/// Handles must be live; `out` must point to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn rfx_prototypes(
    m: *const RfxMatrix,
    train: *const RfxDataset,
    per_class: usize,
    out: *mut usize,
    out_len: usize,
    written: *mut usize,
) -> RfxStatus {
    guard(|| {
        let m = handle(m, "matrix")?;
        let labels = labels_for(m, handle(train, "dataset")?)?;
        let counts = explain::uniform_counts(labels, per_class);
        let set = explain::kmedoids_prototypes(&m.0, labels, &counts)?;
        let all = set.all();
        if out_len < all.len() {
            return Err(Fail(
                RfxStatus::BufferTooSmall,
                format!("buffer holds {out_len} values, need {}", all.len()),
            ));
        }
        if !all.is_empty() {
            if out.is_null() {
                return Err(null("output buffer"));
            }
            std::ptr::copy_nonoverlapping(all.as_ptr(), out, all.len());
        }
        write_out(written, all.len())
    })
}
