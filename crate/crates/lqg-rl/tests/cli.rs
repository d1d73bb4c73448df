//! End-to-end tests of the `lqg-rl` binary: workflows, artifacts, seed
//! precedence and exit codes.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lqg-rl"))
}

fn scalar_model_doc() -> Value {
    json!({
        "system": {
            "F": [[1.0]], "G": [[1.0]], "H": [[1.0]],
            "W": [[0.0]], "E": [[1.0]],
            "x1_mean": [0.0], "Sigma1": [[1.0]],
        },
        "cost": { "Q": [[1.0]], "R": [[1.0]], "Qf": [[0.0]], "p": 0.5 },
    })
}

/// Same system with exact state observations, as the learn workflow requires.
fn learnable_model_doc() -> Value {
    let mut doc = scalar_model_doc();
    doc["system"]["E"] = json!([[0.0]]);
    doc
}

fn write(dir: &Path, name: &str, doc: &Value) {
    std::fs::write(dir.join(name), doc.to_string()).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn run_config(dir: &Path, extra_args: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(dir.join("config.json"))
        .arg("--quiet")
        .args(extra_args)
        .output()
        .unwrap()
}

#[test]
fn solve_writes_result_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "model.json", &scalar_model_doc());
    write(
        dir.path(),
        "config.json",
        &json!({
            "workflow": "solve",
            "model": "model.json",
            "output_dir": "out",
            "seed": 11,
            "solve": { "horizon": 2 },
        }),
    );
    let out = run_config(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let result = read_json(&dir.path().join("out/result.json"));
    let pi = result["Pi"][0][0].as_f64().unwrap();
    assert!((pi - 0.5f64.sqrt()).abs() < 1e-8);
    assert_eq!(result["seed"], 11);
    // horizon 2 with Qf = 0: L_1 = 0, S_1 = Q = 1
    assert_eq!(result["L"].as_array().unwrap().len(), 1);
    assert_eq!(result["L"][0][0][0], 0.0);
    assert_eq!(result["S"][0][0][0], 1.0);

    let metadata = read_json(&dir.path().join("out/metadata.json"));
    assert_eq!(metadata["workflow"], "solve");
    assert_eq!(metadata["seed"], 11);
    assert_eq!(metadata["config"]["solve"]["horizon"], 2);
    // The model echo must round-trip the parsed model exactly.
    assert_eq!(metadata["model"]["system"]["F"], json!([[1.0]]));
    assert_eq!(metadata["model"]["cost"]["p"], 0.5);
    assert!(metadata["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn malformed_model_reports_key_path_and_exit_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = scalar_model_doc();
    model["cost"].as_object_mut().unwrap().remove("R");
    write(dir.path(), "model.json", &model);
    write(
        dir.path(),
        "config.json",
        &json!({ "workflow": "solve", "model": "model.json", "output_dir": "out" }),
    );
    let out = run_config(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("cost.R"), "stderr: {stderr}");
}

#[test]
fn unknown_workflow_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "model.json", &scalar_model_doc());
    write(
        dir.path(),
        "config.json",
        &json!({ "workflow": "optimize", "model": "model.json" }),
    );
    let out = run_config(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn learn_with_zero_episodes_writes_headers_and_initial_value() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "model.json", &learnable_model_doc());
    write(
        dir.path(),
        "config.json",
        &json!({
            "workflow": "learn",
            "model": "model.json",
            "output_dir": "out",
            "learning": {
                "alpha0": 0.05, "decay_c": 1000.0,
                "explore_sigma": 0.1, "episodes": 0, "seed": 3,
            },
        }),
    );
    let out = run_config(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let curve = std::fs::read_to_string(dir.path().join("out/curve.csv")).unwrap();
    assert_eq!(curve, "episode,length,total_cost,pi_error\n");
    let result = read_json(&dir.path().join("out/result.json"));
    assert_eq!(result["Pi"], json!([[0.0]]));
    assert_eq!(result["bias"], 0.0);
    assert_eq!(result["seed"], 3);
    assert_eq!(result["fallback_events"], 0);
}

#[test]
fn learn_curve_has_one_row_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "model.json", &learnable_model_doc());
    write(
        dir.path(),
        "config.json",
        &json!({
            "workflow": "learn",
            "model": "model.json",
            "output_dir": "out",
            "learning": {
                "alpha0": 0.01, "decay_c": 100.0,
                "explore_sigma": 0.1, "episodes": 50, "seed": 8,
            },
        }),
    );
    let out = run_config(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let curve = std::fs::read_to_string(dir.path().join("out/curve.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines.len(), 51);
    assert!(lines[1].starts_with("1,"));
    assert!(lines[50].starts_with("50,"));
    // pi_error column is populated: the oracle exists for this model.
    assert!(!lines[1].ends_with(','), "missing pi_error: {}", lines[1]);
}

#[test]
fn filter_workflow_matches_hand_computed_update() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "model.json", &scalar_model_doc());
    // One measurement y = 1 with u = 0: K = 1·1/(1+1) = 0.5, so
    // xhat' = 0 + 0.5·(1 − 0) = 0.5 and Sigma' = 0 + 1 − 0.5·1 = 0.5.
    std::fs::write(dir.path().join("data.csv"), "t,y_1,u_1\n1,1.0,0.0\n").unwrap();
    write(
        dir.path(),
        "config.json",
        &json!({
            "workflow": "filter",
            "model": "model.json",
            "output_dir": "out",
            "filter": { "input_csv": "data.csv" },
        }),
    );
    let out = run_config(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let filtered = std::fs::read_to_string(dir.path().join("out/filtered.csv")).unwrap();
    let lines: Vec<&str> = filtered.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "t,xhat_1,sigma_1_1");
    assert_eq!(lines[1], "1,0,1");
    let last: Vec<f64> = lines[2].split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(last[0], 2.0);
    assert!((last[1] - 0.5).abs() < 1e-12);
    assert!((last[2] - 0.5).abs() < 1e-12);
}

#[test]
fn filter_rejects_wrong_column_count() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "model.json", &scalar_model_doc());
    std::fs::write(dir.path().join("data.csv"), "t,y_1\n1,1.0\n").unwrap();
    write(
        dir.path(),
        "config.json",
        &json!({
            "workflow": "filter",
            "model": "model.json",
            "output_dir": "out",
            "filter": { "input_csv": "data.csv" },
        }),
    );
    let out = run_config(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_writes_summary_and_per_episode_csv() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "model.json", &scalar_model_doc());
    write(
        dir.path(),
        "config.json",
        &json!({
            "workflow": "eval",
            "model": "model.json",
            "output_dir": "out",
            "eval": {
                "episodes": 200, "seed": 4,
                "policy": "greedy-oracle", "per_episode_csv": true,
            },
        }),
    );
    let out = run_config(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("out/summary.json"));
    assert_eq!(summary["episodes"], 200);
    assert_eq!(summary["policy"], "greedy-oracle");
    assert!(summary["mean"].as_f64().unwrap().is_finite());
    assert!(summary["stderr"].as_f64().unwrap() >= 0.0);
    let csv_text = std::fs::read_to_string(dir.path().join("out/episodes.csv")).unwrap();
    assert_eq!(csv_text.lines().count(), 201);
    assert_eq!(csv_text.lines().next().unwrap(), "episode,length,total_cost");
}

#[test]
fn eval_accepts_an_explicit_gain_matrix() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "model.json", &scalar_model_doc());
    write(dir.path(), "gain.json", &json!({ "L": [[0.5]] }));
    write(
        dir.path(),
        "config.json",
        &json!({
            "workflow": "eval",
            "model": "model.json",
            "output_dir": "out",
            "eval": { "episodes": 50, "seed": 4, "policy": "gain-matrix gain.json" },
        }),
    );
    let out = run_config(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Wrong shape: 1x2 gain against a scalar model.
    write(dir.path(), "gain.json", &json!({ "L": [[0.5, 0.1]] }));
    let out = run_config(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn seed_flag_beats_config_seeds() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "model.json", &scalar_model_doc());
    write(
        dir.path(),
        "config.json",
        &json!({
            "workflow": "eval",
            "model": "model.json",
            "output_dir": "out",
            "seed": 1,
            "eval": { "episodes": 10, "seed": 2, "policy": "zero" },
        }),
    );
    let out = run_config(dir.path(), &["--seed", "42"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("out/summary.json"));
    assert_eq!(summary["seed"], 42);

    // Without the flag the workflow section wins over the top level.
    let out = run_config(dir.path(), &[]);
    assert!(out.status.success());
    let summary = read_json(&dir.path().join("out/summary.json"));
    assert_eq!(summary["seed"], 2);
}

#[test]
fn output_flag_overrides_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let alt = tempfile::tempdir().unwrap();
    write(dir.path(), "model.json", &scalar_model_doc());
    write(
        dir.path(),
        "config.json",
        &json!({ "workflow": "solve", "model": "model.json", "output_dir": "out" }),
    );
    let out = bin()
        .arg("--config")
        .arg(dir.path().join("config.json"))
        .arg("--output")
        .arg(alt.path())
        .arg("--quiet")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(alt.path().join("result.json").exists());
    assert!(!dir.path().join("out/result.json").exists());
}

#[test]
fn missing_config_file_is_an_io_error() {
    let out = bin()
        .arg("--config")
        .arg("/nonexistent/config.json")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn compare_reports_frobenius_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let pi = json!({ "Pi": [[1.0, 0.0], [0.0, 1.0]] });
    let shifted = json!({ "Pi": [[1.01, 0.0], [0.0, 1.01]] });
    write(dir.path(), "a.json", &pi);
    write(dir.path(), "b.json", &shifted);

    let out = bin()
        .arg("compare")
        .arg(dir.path().join("a.json"))
        .arg(dir.path().join("a.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("frobenius_error: 0"), "stdout: {stdout}");

    let out = bin()
        .arg("compare")
        .arg(dir.path().join("b.json"))
        .arg(dir.path().join("a.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let fro: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("frobenius_error: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((fro - 0.01 * 2f64.sqrt()).abs() < 1e-12);

    let mismatched = json!({ "Pi": [[1.0]] });
    write(dir.path(), "c.json", &mismatched);
    let out = bin()
        .arg("compare")
        .arg(dir.path().join("c.json"))
        .arg(dir.path().join("a.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn repeated_runs_produce_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "model.json", &learnable_model_doc());
    write(
        dir.path(),
        "config.json",
        &json!({
            "workflow": "learn",
            "model": "model.json",
            "output_dir": "out",
            "learning": {
                "alpha0": 0.05, "decay_c": 1000.0,
                "explore_sigma": 0.1, "episodes": 100, "seed": 9,
            },
        }),
    );
    let out = run_config(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first_result = std::fs::read_to_string(dir.path().join("out/result.json")).unwrap();
    let first_curve = std::fs::read_to_string(dir.path().join("out/curve.csv")).unwrap();
    let out = run_config(dir.path(), &[]);
    assert!(out.status.success());
    let second_result = std::fs::read_to_string(dir.path().join("out/result.json")).unwrap();
    let second_curve = std::fs::read_to_string(dir.path().join("out/curve.csv")).unwrap();
    assert_eq!(first_result, second_result);
    assert_eq!(first_curve, second_curve);
}
