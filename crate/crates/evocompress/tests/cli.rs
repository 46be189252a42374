use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evocompress"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, value: Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path
}

fn synthetic_config(dir: &Path, engine: Value) -> PathBuf {
    write_config(
        dir,
        "synthetic.json",
        json!({
            "task": "Pn",
            "model": assets().join("mlp.evc"),
            "evaluator": {"kind": "synthetic", "base_accuracy": 0.9, "coefficients": [0.4, 0.2, 0.8]},
            "engine": engine,
        }),
    )
}

fn mlp_ps_config(dir: &Path, engine: Value) -> PathBuf {
    write_config(
        dir,
        "mlp_ps.json",
        json!({
            "task": "Ps",
            "model": assets().join("mlp.evc"),
            "dataset": assets().join("spirals.csv"),
            "engine": engine,
        }),
    )
}

#[test]
fn flops_table_for_the_bundled_mlp() {
    let o = run(&["flops", "--model", assets().join("mlp.evc").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("total 1152"), "{text}");
    assert!(text.contains("32x32") && text.contains("1024"), "{text}");
}

#[test]
fn flops_with_an_uncompressed_plan_has_ratio_one() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    let entries: Vec<Value> = (0..3).map(|i| json!({"layer": i, "action": {"type": "none"}})).collect();
    fs::write(&plan, serde_json::to_string(&entries).unwrap()).unwrap();
    let o = run(&[
        "flops",
        "--model",
        assets().join("mlp.evc").to_str().unwrap(),
        "--plan",
        plan.to_str().unwrap(),
        "--json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["ratio"], 1.0);
    assert_eq!(report["compressed_total"], 1152);
}

#[test]
fn missing_file_exits_with_usage_code() {
    let o = run(&["flops", "--model", "/nonexistent/model.evc"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/model.evc"));
    let o = run(&["search", "--config", "/nonexistent/run.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thresholds_match_closed_form_crossings() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic_config(dir.path(), json!({"acc_thr": 0.8}));
    let out = dir.path().join("out");
    let o = run(&["thresholds", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = fs::read(out.join("thresholds.json")).unwrap();
    let theta: Vec<f64> = serde_json::from_slice(&first).unwrap();
    // 0.9 - c·p² crosses 0.8 at p = sqrt(0.1 / c).
    for (t, c) in theta.iter().zip([0.4f64, 0.2, 0.8]) {
        let crossing = (0.1 / c).sqrt().min(1.0);
        assert!((t - crossing).abs() <= 1.0 / 64.0, "{t} vs {crossing}");
    }
    let o = run(&["thresholds", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("thresholds.json")).unwrap(), first);
}

#[test]
fn infeasible_threshold_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic_config(dir.path(), json!({"acc_thr": 0.95}));
    let out = dir.path().join("out");
    let o = run(&["thresholds", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("infeasible"), "{}", stderr(&o));
}

#[test]
fn odd_population_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic_config(dir.path(), json!({"population_size": 7}));
    let o = run(&["search", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("population_size"), "{}", stderr(&o));
}

#[test]
fn zero_iterations_reports_the_best_initial_individual() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic_config(dir.path(), json!({"population_size": 12, "iterations": 0, "acc_thr": 0.8}));
    let out = dir.path().join("out");
    let o = run(&["search", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let history = fs::read_to_string(out.join("history.jsonl")).unwrap();
    let records: Vec<Value> = history.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 12);
    let best = records
        .iter()
        .map(|r| r["score"].as_f64().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["summary"]["score"].as_f64().unwrap(), best);
    assert_eq!(manifest["seed"], 0);
    let hash = manifest["assets"][assets().join("mlp.evc").display().to_string()]
        .as_str()
        .unwrap()
        .to_string();
    assert_eq!(hash, evocompress::commands::sha256_file(&assets().join("mlp.evc")).unwrap());
}

#[test]
fn seed_seven_best_plan_matches_the_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = assets().join("mlp_ps.json");
    let o = run(&[
        "search",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let produced = fs::read_to_string(out.join("best_plan.json")).unwrap();
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/mlp_ps_seed7_best_plan.json");
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        fs::create_dir_all(golden.parent().unwrap()).unwrap();
        fs::write(&golden, &produced).unwrap();
    }
    let expected = fs::read_to_string(&golden).expect("golden file exists; regenerate with UPDATE_GOLDENS=1");
    assert_eq!(produced, expected);
}

#[test]
fn worker_count_does_not_change_the_history() {
    let dir = tempfile::tempdir().unwrap();
    let config = mlp_ps_config(dir.path(), json!({"population_size": 16, "iterations": 4, "acc_thr": 0.9, "seed": 3}));
    let mut histories = Vec::new();
    for workers in ["1", "3"] {
        let out = dir.path().join(format!("out{workers}"));
        let o = run(&[
            "search",
            "--config",
            config.to_str().unwrap(),
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        histories.push(fs::read(out.join("history.jsonl")).unwrap());
    }
    assert_eq!(histories[0], histories[1]);
}

#[test]
fn pareto_rows_and_duplicate_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let config = mlp_ps_config(dir.path(), json!({"population_size": 10, "iterations": 3, "seed": 1}));
    let out = dir.path().join("out");
    let o = run(&[
        "pareto",
        "--config",
        config.to_str().unwrap(),
        "--thresholds",
        "0.9,0.8,0.9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("duplicate"), "{}", stderr(&o));
    let mut csv = csv::Reader::from_path(out.join("pareto.csv")).unwrap();
    assert_eq!(
        csv.headers().unwrap().iter().collect::<Vec<_>>(),
        ["source", "acc_thr", "prune_ratio", "accuracy", "flops_ratio"]
    );
    let rows: Vec<csv::StringRecord> = csv.records().map(Result::unwrap).collect();
    assert_eq!(rows.iter().filter(|r| &r[0] == "evolved").count(), 2);
    assert_eq!(rows.iter().filter(|r| &r[0] == "uniform").count(), 65);

    let o = run(&["pareto", "--config", config.to_str().unwrap(), "--thresholds", "0.9"]);
    assert_eq!(o.status.code(), Some(2));
}
