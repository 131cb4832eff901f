use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use rfexplain::forest::TrainedForest;
use rfexplain::pipeline::read_embedding_csv;

const SMALL: &str = r#"name = "small"
seed = 3

[dataset]
synthetic_rows = 90

[folds]
k = 3
grid_k = 2

[forest]
n_trees = [30]
max_features = ["sqrt"]
max_depth = [0]

[prototypes]
count_max = 2

[embedding]
max_iter = 30
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rfexplain"));
    c.env_remove("RFEXPLAIN_OUTPUT_DIR").env("RFEXPLAIN_THREADS", "1");
    c
}

fn rfx(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One finished run shared by the read-only tests.
fn finished() -> &'static (tempfile::TempDir, PathBuf) {
    static RUN: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("small.toml");
        std::fs::write(&cfg, SMALL).unwrap();
        let out = dir.path().join("out");
        let o = rfx(&["run", "--config", s(&cfg), "--output-dir", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (dir, out)
    })
}

#[test]
fn run_writes_artifacts() {
    let (_, out) = finished();
    for f in ["report.json", "metrics.csv", "embedding.csv", "forest_fold0.model", "dataset.rfds", "config.lock"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert!(!out.join(".rfexplain.lock").exists());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["folds"].as_array().unwrap().len(), 3);
    assert!(report["config_hash"].is_string());
    let points = read_embedding_csv(out.join("embedding.csv")).unwrap();
    assert!(points.iter().any(|p| p.role == "prototype"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(rfx(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(rfx(&["run"]).status.code(), Some(1));
    let (_, out) = finished();
    let model = out.join("forest_fold0.model");
    let data = out.join("dataset.rfds");
    let o = rfx(&["prototypes", "--model", s(&model), "--dataset", s(&data), "--method", "bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    assert_eq!(rfx(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\nsurprise = 1\n[dataset]\nsynthetic_rows = 50\n").unwrap();
    assert_eq!(rfx(&["run", "--config", s(&bad), "--dry-run"]).status.code(), Some(1));

    let missing = dir.path().join("nope.toml");
    assert_eq!(rfx(&["run", "--config", s(&missing)]).status.code(), Some(2));

    let cols = dir.path().join("cols.toml");
    std::fs::write(&cols, "name = \"c\"\n[dataset]\npath = \"d.csv\"\nlabel = \"y\"\nnumeric = [\"a\", \"zz\"]\n").unwrap();
    std::fs::write(dir.path().join("d.csv"), "a,b,y\n1,2,p\n3,4,q\n").unwrap();
    let o = rfx(&["run", "--config", s(&cols), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("zz"));
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("never");
    let o = rfx(&["run", "--config", s(&cfg), "--output-dir", s(&out), "--dry-run", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["valid"], true);
    assert!(!out.exists());
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("from-env");
    let o = bin()
        .args(["run", "--config", s(&cfg), "--json"])
        .env("RFEXPLAIN_OUTPUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["test_f1"].as_array().unwrap().len(), 3);
    assert!(out.join("report.json").exists());
}

#[test]
fn busy_output_dir_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("busy");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join(".rfexplain.lock"), "1").unwrap();
    let o = rfx(&["run", "--config", s(&cfg), "--output-dir", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!out.join("report.json").exists());
}

#[test]
fn explain_returns_factuals() {
    let (_, out) = finished();
    let model = out.join("forest_fold0.model");
    let data = out.join("dataset.rfds");
    let forest = TrainedForest::load(&model).unwrap();
    let query = forest.train_row_ids[5].clone();
    let o = rfx(&["explain", "--model", s(&model), "--dataset", s(&data), "--query", &query, "--json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["query_id"], query.as_str());
    assert_eq!(v["semi_factual"]["class"], v["query_class"]);
    assert_ne!(v["counter_factual"]["class"], v["query_class"]);
    for k in ["semi_factual", "counter_factual"] {
        let d = v[k]["distance"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&d));
    }

    let o = rfx(&["explain", "--model", s(&model), "--dataset", s(&data), "--query", "no-such-row"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn explain_rejects_foreign_dataset() {
    let (dir, out) = finished();
    let model = out.join("forest_fold0.model");
    let other = dir.path().join("other.csv");
    std::fs::write(&other, "id,a,y\nr0,1,p\nr1,2,q\n").unwrap();
    let cfg = dir.path().join("other.toml");
    std::fs::write(&cfg, "name = \"o\"\n[dataset]\npath = \"other.csv\"\nlabel = \"y\"\nid = \"id\"\nnumeric = [\"a\"]\n").unwrap();
    let o = rfx(&["explain", "--model", s(&model), "--dataset", s(&other), "--config", s(&cfg), "--query", "r0"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn prototypes_json_bundle() {
    let (_, out) = finished();
    let model = out.join("forest_fold0.model");
    let data = out.join("dataset.rfds");
    let o = rfx(&["prototypes", "--model", s(&model), "--dataset", s(&data), "--method", "hdp", "--count", "2", "--critics", "3", "--json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let protos = v["prototypes"].as_object().unwrap();
    assert_eq!(protos.len(), 3);
    assert!(protos.values().all(|ids| ids.as_array().unwrap().len() == 2));
    assert_eq!(v["critics"].as_array().unwrap().len(), 3);
    assert_eq!(rfx(&["prototypes", "--model", s(&model), "--dataset", s(&data), "--count", "0"]).status.code(), Some(1));
}

#[test]
fn embed_recovers_a_square() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("square.csv");
    let r2 = 2f64.sqrt();
    std::fs::write(
        &m,
        format!("id,a,b,c,d\na,0,1,{r2},1\nb,1,0,1,{r2}\nc,{r2},1,0,1\nd,1,{r2},1,0\n"),
    )
    .unwrap();
    let out = dir.path().join("xy.csv");
    let o = rfx(&["embed", "--matrix", s(&m), "--backend", "l2", "--output", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pts = read_embedding_csv(&out).unwrap();
    assert_eq!(pts.iter().map(|p| p.row_id.as_str()).collect::<Vec<_>>(), ["a", "b", "c", "d"]);
    let d = |i: usize, j: usize| ((pts[i].x - pts[j].x).powi(2) + (pts[i].y - pts[j].y).powi(2)).sqrt();
    assert!((d(0, 1) - 1.0).abs() < 1e-5);
    assert!((d(0, 2) - r2).abs() < 1e-5);

    assert_eq!(rfx(&["embed", "--output", s(&out)]).status.code(), Some(1));
}

#[test]
fn embed_from_model_with_roles() {
    let (dir, out) = finished();
    let model = out.join("forest_fold0.model");
    let data = out.join("dataset.rfds");
    let o = rfx(&["prototypes", "--model", s(&model), "--dataset", s(&data), "--json"]);
    let bundle = dir.path().join("bundle.json");
    std::fs::write(&bundle, &o.stdout).unwrap();
    let xy = dir.path().join("model_xy.csv");
    let o = rfx(&["embed", "--model", s(&model), "--dataset", s(&data), "--bundle", s(&bundle), "--output", s(&xy), "--max-iter", "20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pts = read_embedding_csv(&xy).unwrap();
    assert_eq!(pts.len(), TrainedForest::load(&model).unwrap().n_train());
    assert_eq!(pts.iter().filter(|p| p.role == "prototype").count(), 3);
    assert_eq!(pts.iter().filter(|p| p.role == "critic").count(), 3);
}
