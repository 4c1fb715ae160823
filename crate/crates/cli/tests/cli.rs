use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ldp-gradtrack"));
    c.env_remove("LDP_GRADTRACK_OUT");
    c
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn quadratic(sigma0: f64, rounds: usize, reps: usize, extra: &str) -> String {
    format!(
        r#"{{
        "graph": {{"kind": "ring", "m": 10, "weight": 0.3}},
        "problem": {{"kind": "quadratic", "dim": 2}},
        "noise": {{"sigma0_zeta": {sigma0}, "sigma0_theta": {sigma0}, "varsigma_zeta": "0.5+0.01i", "varsigma_theta": "0.5+0.01i"}},
        "stepsize": {{"lambda0": 1.0, "v": 0.61}},
        "privacy": {{"c_l": 10.0}},
        "rounds": {rounds},
        "record_every": 10,
        "repetitions": {reps},
        "seed": 2024{extra}
    }}"#
    )
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr)
        .unwrap_or_else(|_| panic!("stderr not JSON: {}", String::from_utf8_lossy(&out.stderr)))
}

fn final_error(csv_text: &str, algorithm: &str) -> f64 {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    r.records()
        .map(Result::unwrap)
        .filter(|rec| &rec[0] == algorithm)
        .last()
        .map(|rec| rec[2].parse().unwrap())
        .unwrap()
}

#[test]
fn bundled_quadratic_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["run", "--config", s(&repo("configs/quadratic_ring10.json")), "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "trace.csv", "summary.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["algorithm"], "ldp_gradtrack");
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 201);
}

#[test]
fn decay_not_below_step_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quadratic(1.0, 20, 1, "").replace("\"v\": 0.61", "\"v\": 0.55");
    let path = write_config(dir.path(), "bad.json", &cfg);
    let out = run(&["run", "--config", s(&path), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "validation");
    assert_eq!(err["exit_code"], 2);
    assert!(err["message"].as_str().unwrap().contains("Assumption 4 violated"), "{err}");
}

#[test]
fn parse_errors_report_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quadratic(1.0, 20, 1, "").replace("\"rounds\": 20", "\"rounds\": -3");
    let path = write_config(dir.path(), "bad.json", &cfg);
    let out = run(&["run", "--config", s(&path), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr_json(&out)["message"].as_str().unwrap().to_string();
    assert!(msg.contains("rounds") && msg.contains("line"), "{msg}");
}

#[test]
fn blown_up_run_exits_with_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quadratic(0.0, 400, 1, "").replace("\"lambda0\": 1.0", "\"lambda0\": 1000.0");
    let path = write_config(dir.path(), "div.json", &cfg);
    let out = run(&["run", "--config", s(&path), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "divergence");
    assert!(err["message"].as_str().unwrap().contains("round"));
}

#[test]
fn missing_config_is_an_io_error() {
    let out = run(&["run", "--config", "/nonexistent/cfg.json", "--out", "/tmp/unused"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "io");
}

#[test]
fn repeated_runs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "c.json", &quadratic(1.0, 200, 3, ""));
    let mut outputs = Vec::new();
    for k in 0..2 {
        let o = dir.path().join(format!("o{k}"));
        assert!(run(&["run", "--config", s(&path), "--out", s(&o)]).status.success());
        outputs.push(["metrics.csv", "trace.csv", "summary.json"].map(|f| fs::read(o.join(f)).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn output_dir_falls_back_to_env_then_config() {
    let dir = tempfile::tempdir().unwrap();
    let from_cfg = dir.path().join("cfg_out");
    let extra = format!(",\n\"output_dir\": {:?}", from_cfg.to_str().unwrap());
    let path = write_config(dir.path(), "c.json", &quadratic(0.5, 20, 1, &extra));
    assert!(run(&["run", "--config", s(&path)]).status.success());
    assert!(from_cfg.join("metrics.csv").exists());
    let env_out = dir.path().join("env_out");
    let st = bin().args(["run", "--config", s(&path)]).env("LDP_GRADTRACK_OUT", &env_out).output().unwrap().status;
    assert!(st.success());
    assert!(env_out.join("metrics.csv").exists());
}

#[test]
fn compare_noisy_tracker_beats_pushpull() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["compare", "--config", s(&repo("configs/quadratic_ring10.json")), "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert!(text.starts_with("algorithm,round,"));
    let ours = final_error(&text, "ldp_gradtrack");
    let base = final_error(&text, "pushpull_noisy");
    assert!(ours < base, "ldp_gradtrack {ours} vs pushpull_noisy {base}");
}

#[test]
fn compare_without_noise_both_converge() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "c.json", &quadratic(0.0, 5000, 4, ""));
    let out = run(&["compare", "--config", s(&path), "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    for alg in ["ldp_gradtrack", "pushpull_noisy"] {
        let e = final_error(&text, alg);
        assert!(e < 1e-2, "{alg}: {e}");
    }
}

#[test]
fn compare_single_repetition_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "c.json", &quadratic(1.0, 100, 1, ""));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["compare", "--config", s(&path), "--out", s(&a)]).status.success());
    assert!(run(&["compare", "--config", s(&path), "--out", s(&b)]).status.success());
    assert_eq!(fs::read(a.join("compare.csv")).unwrap(), fs::read(b.join("compare.csv")).unwrap());
}

fn budget(dir: &Path, cfg: &str, horizons: &str) -> Value {
    let path = write_config(dir, "b.json", cfg);
    let out = run(&["budget", "--config", s(&path), "--horizons", horizons, "--out", s(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_str(&fs::read_to_string(dir.join("budget.json")).unwrap()).unwrap()
}

/// `(eps_s, eps_theta, eps_total)` rows from budget.csv; std float parsing
/// round-trips exactly, so halving can be compared bit for bit.
fn eps_table(dir: &Path) -> Vec<(f64, f64, f64)> {
    let mut r = csv::Reader::from_path(dir.join("budget.csv")).unwrap();
    r.records()
        .map(Result::unwrap)
        .map(|rec| (rec[2].parse().unwrap(), rec[3].parse().unwrap(), rec[4].parse().unwrap()))
        .collect()
}

#[test]
fn budget_at_horizon_zero_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    budget(dir.path(), &quadratic(1.0, 10, 1, ""), "0");
    let t = eps_table(dir.path());
    assert_eq!(t.len(), 10);
    assert!(t.iter().all(|&(a, b, c)| a == 0.0 && b == 0.0 && c == 0.0));
    let csv = fs::read_to_string(dir.path().join("budget.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "horizon,learner,eps_s,eps_theta,eps_total,increment");
}

#[test]
fn doubling_noise_halves_every_budget() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    budget(a.path(), &quadratic(1.0, 10, 1, ""), "50,400");
    budget(b.path(), &quadratic(2.0, 10, 1, ""), "50,400");
    let (one, two) = (eps_table(a.path()), eps_table(b.path()));
    assert_eq!(one.len(), 20);
    for (x, y) in one.iter().zip(&two) {
        assert_eq!(y.0, x.0 / 2.0);
        assert_eq!(y.1, x.1 / 2.0);
        assert_eq!(y.2, x.2 / 2.0);
    }
}

#[test]
fn budget_increments_shrink_over_doubling_horizons() {
    let dir = tempfile::tempdir().unwrap();
    let v = budget(dir.path(), &quadratic(1.0, 10, 1, ""), "1000,2000,4000,8000");
    let reports = v["reports"].as_array().unwrap();
    let m = reports[0]["learners"].as_array().unwrap().len();
    for i in 0..m {
        let inc: Vec<f64> = reports.iter().map(|r| r["learners"][i]["increment"].as_f64().unwrap()).collect();
        assert!(inc.windows(2).all(|w| w[1] < w[0]), "learner {i}: {inc:?}");
    }
}

#[test]
fn budget_rejects_diagonal_free_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
        "graph": {"kind": "explicit", "r": [[-0.5, 0.5], [0.5, -0.5]], "c": [[0.0, 0.5], [0.0, -0.5]]},
        "problem": {"kind": "quadratic", "dim": 1},
        "noise": {"sigma0_zeta": 1.0, "sigma0_theta": 1.0, "varsigma_zeta": 0.55, "varsigma_theta": 0.55},
        "stepsize": {"lambda0": 1.0, "v": 0.61},
        "privacy": {"c_l": 1.0},
        "rounds": 10
    }"#;
    let path = write_config(dir.path(), "d.json", cfg);
    let out = run(&["budget", "--config", s(&path), "--horizons", "10", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "diagonal_free");
    assert!(err["message"].as_str().unwrap().contains("vacuous"));
}

#[test]
fn plot_single_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_config(dir.path(), "one.csv", "err\n1.0\n0.5\n0.25\n");
    let svg = dir.path().join("one.svg");
    let out = run(&["plot", s(&csv), "--out", s(&svg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("<polyline").count(), 1);
    assert!(text.contains(">round</text>") && text.contains(">value</text>") && text.contains(">err</text>"));
    let again = dir.path().join("again.svg");
    assert!(run(&["plot", s(&csv), "--out", s(&again)]).status.success());
    assert_eq!(fs::read(&svg).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn plot_header_only_has_no_data_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_config(dir.path(), "empty.csv", "round,avg_tracking_error\n");
    let out = run(&["plot", s(&csv), "--out", s(&dir.path().join("e.svg"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("no data rows"));
}

#[test]
fn plot_names_missing_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_config(dir.path(), "m.csv", "round,a\n0,1\n1,2\n");
    let out = run(&["plot", s(&csv), "--out", s(&dir.path().join("m.svg")), "--columns", "a,nope"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr_json(&out)["message"].as_str().unwrap().to_string();
    assert!(msg.contains("\"nope\"") && !msg.contains("\"a\""), "{msg}");
}

#[test]
fn plot_compare_csv_splits_by_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_config(
        dir.path(),
        "c.csv",
        "algorithm,round,avg_tracking_error\nldp_gradtrack,1,1.0\nldp_gradtrack,10,0.1\npushpull_noisy,1,1.0\npushpull_noisy,10,0.5\n",
    );
    let svg = dir.path().join("c.svg");
    let out = run(&["plot", s(&csv), "--out", s(&svg), "--columns", "avg_tracking_error", "--loglog"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("<polyline").count(), 2);
    assert!(text.contains("(ldp_gradtrack)") && text.contains("(pushpull_noisy)"));
}
