use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spherecov(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spherecov"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const MODEL: &str = r#"{
  "preset": {"model": "M1", "sigma2": [1, 1], "rho12": 0.5, "c11": 0.1, "c22": 0.2},
  "asymmetry": {"eta": 0.6, "alpha1": 1.5707963267948966, "alpha2": 1.5707963267948966}
}"#;

const INVALID_MODEL: &str = r#"{
  "preset": {"model": "M1", "sigma2": [1, 1], "rho12": 0.99, "c11": 0.05, "c22": 0.5}
}"#;

fn study_config(name: &str) -> String {
    format!(
        r#"{{
  "name": "{name}",
  "presets": ["M1"],
  "scenarios": [{{"rho12": 0.5, "eta": 0.6}}],
  "grid": {{"n_per_axis": 5}},
  "replicates": 3,
  "seed": 11,
  "fit": {{"budget": 300}}
}}"#
    )
}

#[test]
fn simulate_fit_cv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("model.json"), MODEL).unwrap();

    let out = spherecov(
        &[
            "--seed",
            "5",
            "--out-dir",
            "run",
            "simulate",
            "--model",
            "model.json",
            "--grid",
            "6",
        ],
        d,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(d.join("run/simulated.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 36);
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("run/simulated.json")).unwrap()).unwrap();
    assert_eq!(sidecar["seed"], 5);
    assert_eq!(sidecar["n_observations"], 72);

    let out = spherecov(
        &[
            "--out-dir",
            "run",
            "fit",
            "--data",
            "run/simulated.csv",
            "--model",
            "M1",
            "--variant",
            "asym-nonsep",
            "--starts",
            "1",
            "--budget",
            "400",
        ],
        d,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fitted: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(fitted["estimate"]["names"].as_array().unwrap().len(), 8);
    assert!(fitted["objective"].as_f64().unwrap().is_finite());

    let out = spherecov(
        &[
            "--out-dir",
            "run",
            "cv",
            "--data",
            "run/simulated.csv",
            "--fit",
            "run/fit.json",
        ],
        d,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let scores: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(scores["n"], 72);
    let points = fs::read_to_string(d.join("run/cv_points.csv")).unwrap();
    assert!(points.starts_with("index,var,observed,predicted,variance,error\n"));
    assert_eq!(points.lines().count(), 73);

    let out = spherecov(
        &[
            "--out-dir",
            "run",
            "cv",
            "--data",
            "run/simulated.csv",
            "--model",
            "model.json",
        ],
        d,
    );
    assert_eq!(code(&out), 0);
}

#[test]
fn check_psd_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("good.json"), MODEL).unwrap();
    fs::write(d.join("bad.json"), INVALID_MODEL).unwrap();
    let out = spherecov(&["check-psd", "--model", "good.json"], d);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["ok"], true);
    assert_eq!(
        report["psd"]["min_eigenvalues"].as_array().unwrap().len(),
        51
    );

    let out = spherecov(&["check-psd", "--model", "bad.json"], d);
    assert_eq!(code(&out), 2);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["ok"], false);
}

#[test]
fn invalid_models_are_refused_by_simulate() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), INVALID_MODEL).unwrap();
    let out = spherecov(&["simulate", "--model", "bad.json"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("simulated.csv").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&spherecov(&["fit", "--no-such-flag"], dir.path())), 1);
    assert_eq!(
        code(&spherecov(
            &["fit", "--data", "missing.csv", "--model", "M1"],
            dir.path()
        )),
        1
    );
    assert_eq!(
        code(&spherecov(
            &["fit", "--data", "x.csv", "--model", "M7"],
            dir.path()
        )),
        1
    );
    assert_eq!(
        code(&spherecov(
            &[
                "fit",
                "--data",
                "x.csv",
                "--model",
                "M1",
                "--cutoff-rad",
                "1",
                "--cutoff-km",
                "500"
            ],
            dir.path()
        )),
        1
    );
    assert_eq!(code(&spherecov(&[], dir.path())), 1);
    assert_eq!(code(&spherecov(&["--help"], dir.path())), 0);
}

#[test]
fn bad_data_rows_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("nan.csv"),
        "lon_deg,lat_deg,var,value\n0,10,1,0.5\n10,10,1,NaN\n",
    )
    .unwrap();
    let out = spherecov(&["fit", "--data", "nan.csv", "--model", "M1"], d);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}

#[test]
fn study_configs_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("unknown.json"),
        r#"{"presets": ["M1"], "scenarios": [{"rho12": 0.5, "eta": 0.1}], "replicate": 3}"#,
    )
    .unwrap();
    assert_eq!(
        code(&spherecov(&["score-study", "--config", "unknown.json"], d)),
        2
    );
    fs::write(d.join("zero.json"), study_config("zero")).unwrap();
    let out = spherecov(
        &["bias-study", "--config", "zero.json", "--replicates", "0"],
        d,
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn score_study_writes_tables_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), study_config("tiny")).unwrap();
    let a = spherecov(
        &["--out-dir", "a", "score-study", "--config", "cfg.json"],
        d,
    );
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let b = spherecov(
        &[
            "--out-dir",
            "b",
            "--threads",
            "1",
            "score-study",
            "--config",
            "cfg.json",
        ],
        d,
    );
    assert_eq!(code(&b), 0);
    let ja = fs::read(d.join("a/score_table.json")).unwrap();
    let jb = fs::read(d.join("b/score_table.json")).unwrap();
    assert_eq!(ja, jb);
    assert!(d.join("a/score_table.csv").exists());
    assert!(String::from_utf8_lossy(&a.stdout).contains("M1"));

    // a different seed gives different numbers
    let c = spherecov(
        &[
            "--out-dir",
            "c",
            "--seed",
            "12",
            "score-study",
            "--config",
            "cfg.json",
        ],
        d,
    );
    assert_eq!(code(&c), 0);
    assert_ne!(ja, fs::read(d.join("c/score_table.json")).unwrap());
}

#[test]
fn bias_study_writes_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), study_config("bias")).unwrap();
    let out = spherecov(
        &["--out-dir", "out", "bias-study", "--config", "cfg.json"],
        d,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("out/bias_report.json")).unwrap()).unwrap();
    assert_eq!(report["valid"], true);
    assert!(d.join("out/bias_estimates.csv").exists());
}

#[test]
fn pipeline_reports_four_models() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("model.json"), MODEL).unwrap();
    let out = spherecov(
        &[
            "--seed",
            "2",
            "simulate",
            "--model",
            "model.json",
            "--grid",
            "6",
        ],
        d,
    );
    assert_eq!(code(&out), 0);
    let out = spherecov(
        &[
            "--out-dir",
            "p",
            "pipeline",
            "--data",
            "simulated.csv",
            "--starts",
            "1",
            "--budget",
            "300",
        ],
        d,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("p/pipeline_report.json")).unwrap())
            .unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let params: Vec<u64> = rows
        .iter()
        .map(|r| r["n_params"].as_u64().unwrap())
        .collect();
    assert_eq!(params, vec![4, 5, 7, 8]);
}

#[test]
fn pipeline_rejects_short_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("short.csv"),
        "lon_deg,lat_deg,var,value\n0,10,1,0.5\n10,10,2,0.1\n",
    )
    .unwrap();
    assert_eq!(code(&spherecov(&["pipeline", "--data", "short.csv"], d)), 2);
}
