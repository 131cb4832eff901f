use std::ffi::{CStr, CString};
use std::ptr;

use rfexplain_ffi::*;

fn two_blobs() -> (Vec<f64>, Vec<u32>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..20 {
        let c = (i % 2) as u32;
        let base = if c == 0 { 0.0 } else { 10.0 };
        x.push(base + (i as f64) * 0.1);
        x.push(base - (i as f64) * 0.05);
        y.push(c);
    }
    (x, y)
}

fn last_error() -> String {
    let p = rfx_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn fitted() -> (*mut RfxDataset, *mut RfxForest) {
    let (x, y) = two_blobs();
    let mut ds = ptr::null_mut();
    assert_eq!(rfx_dataset_new(x.as_ptr(), y.as_ptr(), 20, 2, &mut ds), RfxStatus::Ok);
    let mut params = rfx_forest_params_default();
    params.n_trees = 40;
    params.seed = 7;
    let mut f = ptr::null_mut();
    assert_eq!(rfx_forest_fit(ds, &params, &mut f), RfxStatus::Ok);
    (ds, f)
}

#[test]
fn fit_predict_and_free() {
    unsafe {
        let (ds, f) = fitted();
        assert_eq!(rfx_dataset_n_rows(ds), 20);
        assert_eq!(rfx_dataset_n_features(ds), 2);
        assert_eq!(rfx_forest_n_classes(f), 2);
        assert_eq!(rfx_forest_n_train(f), 20);
        let mut c = 99;
        assert_eq!(rfx_forest_predict(f, [10.5, 9.0].as_ptr(), 2, &mut c), RfxStatus::Ok);
        assert_eq!(c, 1);
        let mut p = [0.0; 2];
        assert_eq!(rfx_forest_predict_proba(f, [0.2, 0.0].as_ptr(), 2, p.as_mut_ptr(), 2), RfxStatus::Ok);
        assert!(p[0] > p[1]);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        assert!(rfx_last_error().is_null());
        rfx_forest_free(f);
        rfx_dataset_free(ds);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let (ds, f) = fitted();
        let mut c = 0;
        assert_eq!(rfx_forest_predict(f, [1.0, 2.0, 3.0].as_ptr(), 3, &mut c), RfxStatus::DimensionMismatch);
        assert!(last_error().contains("dimension"));
        assert_eq!(rfx_forest_predict(ptr::null(), [1.0, 2.0].as_ptr(), 2, &mut c), RfxStatus::NullPointer);
        let mut small = [0.0; 1];
        assert_eq!(rfx_forest_predict_proba(f, [0.0, 0.0].as_ptr(), 2, small.as_mut_ptr(), 1), RfxStatus::BufferTooSmall);

        let mut params = rfx_forest_params_default();
        params.n_trees = 0;
        let mut g = ptr::null_mut();
        assert_eq!(rfx_forest_fit(ds, &params, &mut g), RfxStatus::InvalidArgument);
        assert!(g.is_null());

        let missing = CString::new("/nonexistent/forest.model").unwrap();
        assert_eq!(rfx_forest_load(missing.as_ptr(), &mut g), RfxStatus::Io);

        let mut bad = ptr::null_mut();
        assert_eq!(rfx_dataset_new([0.0, 1.0].as_ptr(), [0u32, 2].as_ptr(), 2, 1, &mut bad), RfxStatus::Data);

        rfx_forest_free(f);
        rfx_dataset_free(ds);
        rfx_forest_free(ptr::null_mut());
        rfx_dataset_free(ptr::null_mut());
        rfx_matrix_free(ptr::null_mut());
    }
}

#[test]
fn save_load_round_trip() {
    unsafe {
        let (ds, f) = fitted();
        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("f.model").to_str().unwrap()).unwrap();
        assert_eq!(rfx_forest_save(f, path.as_ptr()), RfxStatus::Ok);
        let mut g = ptr::null_mut();
        assert_eq!(rfx_forest_load(path.as_ptr(), &mut g), RfxStatus::Ok);
        let x = [3.0, 2.0];
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        rfx_forest_predict_proba(f, x.as_ptr(), 2, a.as_mut_ptr(), 2);
        rfx_forest_predict_proba(g, x.as_ptr(), 2, b.as_mut_ptr(), 2);
        assert_eq!(a, b);
        rfx_forest_free(g);
        rfx_forest_free(f);
        rfx_dataset_free(ds);
    }
}

#[test]
fn distances_and_explanations() {
    unsafe {
        let (ds, f) = fitted();
        let mut m = ptr::null_mut();
        assert_eq!(rfx_distance_matrix(f, RfxProximity::Gap, &mut m), RfxStatus::Ok);
        let n = rfx_matrix_len(m);
        assert_eq!(n, 20);
        let mut d = vec![0.0; n * n];
        assert_eq!(rfx_matrix_copy(m, d.as_mut_ptr(), d.len()), RfxStatus::Ok);
        for i in 0..n {
            assert_eq!(d[i * n + i], 0.0);
            for j in 0..n {
                assert_eq!(d[i * n + j], d[j * n + i]);
            }
        }

        let (x, y) = two_blobs();
        let (mut semi, mut counter) = (0usize, 0usize);
        assert_eq!(rfx_factuals(m, ds, 0, &mut semi, &mut counter), RfxStatus::Ok);
        assert_eq!(y[semi], y[0]);
        assert_ne!(y[counter], y[0]);
        assert_ne!(semi, 0);
        assert_eq!(rfx_factuals(m, ds, 20, &mut semi, &mut counter), RfxStatus::InvalidArgument);

        let mut protos = [0usize; 4];
        let mut written = 0;
        assert_eq!(rfx_prototypes(m, ds, 1, protos.as_mut_ptr(), 4, &mut written), RfxStatus::Ok);
        assert_eq!(written, 2);
        assert_eq!(y[protos[0]], 0);
        assert_eq!(y[protos[1]], 1);
        assert_eq!(rfx_prototypes(m, ds, 1, protos.as_mut_ptr(), 1, &mut written), RfxStatus::BufferTooSmall);

        let mut row = vec![0.0; n];
        assert_eq!(rfx_proximity_row(f, RfxProximity::Original, x.as_ptr(), 2, row.as_mut_ptr(), n), RfxStatus::Ok);
        assert_eq!(row[0], 1.0);

        rfx_matrix_free(m);
        rfx_forest_free(f);
        rfx_dataset_free(ds);
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(rfx_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_lists_entry_points() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/rfexplain.h")).unwrap();
    for sym in ["rfx_forest_fit", "rfx_distance_matrix", "rfx_factuals", "rfx_last_error", "RFX_STATUS_OK", "typedef struct RfxForest RfxForest"] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
}
