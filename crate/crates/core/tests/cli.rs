use std::path::Path;
use std::process::{Command, Output};

use rand::Rng;
use rand_distr::StandardNormal;

fn dress(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dress")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn write_csv(path: &Path, features: usize, rows: usize) {
    let mut rng = dress::rng::stream(5, 0);
    let mut text = String::new();
    for _ in 0..rows {
        let x: Vec<f64> = (0..features).map(|_| rng.sample(StandardNormal)).collect();
        let label = u8::from(x[0] + 0.5 * rng.sample::<f64, _>(StandardNormal) > 0.0);
        for v in &x {
            text.push_str(&format!("{v},"));
        }
        text.push_str(&format!("{label}\n"));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&dress(&["simulate", "--reps", "0"])), 64);
    assert_eq!(code(&dress(&["simulate", "--bogus"])), 64);
    assert_eq!(code(&dress(&["simulate", "--delta-grid", "1", "--eps-grid", "0.1"])), 64);
    assert_eq!(code(&dress(&["diff", "--eps", "0.1", "--mode", "optimal", "--validate"])), 64);
    assert_eq!(code(&dress(&[])), 64);
    assert_eq!(code(&dress(&["--help"])), 0);
}

#[test]
fn missing_input_exits_66() {
    let out = dress(&["classify", "--data", "/nonexistent/spambase.data"]);
    assert_eq!(code(&out), 66);
}

#[test]
fn too_many_dimensions_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("wide.csv");
    write_csv(&csv, 57, 200);
    let out = dress(&["classify", "--data", csv.to_str().unwrap(), "--D", "58", "--n", "50", "--nprime", "50"]);
    assert_eq!(code(&out), 64, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn diff_with_equal_sizes_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dress(&[
        "diff", "--eps", "0.2", "--n", "400", "--nprime", "400", "--eval-samples", "2000", "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let j = read_json(&tmp.path().join("diff.json"));
    let text = j.to_string();
    let m = &j["report"]["diff_matrix"];
    assert!(m.is_array(), "{text}");
    for row in m.as_array().unwrap() {
        for v in row.as_array().unwrap() {
            assert_eq!(v.as_f64().unwrap(), 0.0);
        }
    }
}

#[test]
fn diff_reports_dominance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dress(&[
        "diff", "--delta", "5", "--mode", "optimal", "--eval-samples", "5000", "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let j = read_json(&tmp.path().join("diff.json"));
    assert_eq!(j["dominance"]["optimal_dominates_eta_phi"], serde_json::Value::Bool(true), "{j}");
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn singular_optimal_system_exits_3() {
    assert_eq!(code(&dress(&["diff", "--eps", "0", "--mode", "optimal", "--eval-samples", "2000"])), 3);
}

#[test]
fn simulate_writes_outputs_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dress(&[
        "simulate", "--delta-grid", "0,5", "--reps", "20", "--nprime", "500", "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("simulate.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("delta,eps,ratio,eta,mean_improvement"));
    assert_eq!(lines.count(), 2);
    let manifest = read_json(&tmp.path().join("manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 7);
    assert!(manifest["outputs"].as_array().unwrap().len() >= 2);
}

#[test]
fn config_file_overrides_defaults_but_not_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"reps": 12, "seed": 99}"#).unwrap();
    let out_dir = tmp.path().join("out");
    let out = dress(&[
        "simulate", "--delta-grid", "1", "--nprime", "300", "--seed", "4", "--config", cfg.to_str().unwrap(),
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["config"]["reps"], 12);

    std::fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let out = dress(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 64);
}

#[test]
fn classify_runs_on_headerless_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("toy.csv");
    write_csv(&csv, 5, 300);
    let out_dir = tmp.path().join("out");
    let out = dress(&[
        "classify", "--data", csv.to_str().unwrap(), "--n", "60", "--nprime", "120", "--D", "4", "--splits", "4",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let splits = std::fs::read_to_string(out_dir.join("classify_splits.csv")).unwrap();
    assert_eq!(splits.lines().count(), 5);
    let summary = read_json(&out_dir.join("classify.json"));
    let mle = summary["summary"]["mle_mean"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&mle));
}
