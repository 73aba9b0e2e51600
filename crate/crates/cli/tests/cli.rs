use std::path::Path;
use std::process::Command;

fn lmimpute(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lmimpute")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(
        &path,
        format!(
            r#"
seed = 3
n_splits = 1
strategies = ["median_mode", "mice+indicators"]
{extra}
[data]
kind = "synthetic"
n_episodes = 400

[imputer]
m = 2
maxit = 3
"#
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_summarize_and_impute() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = lmimpute(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.csv", "runtimes.csv", "curves.csv", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("split,strategy,landmark,metric,value,status"));

    std::fs::remove_file(out.join("summary.json")).unwrap();
    let o = lmimpute(&["summarize", "--in", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(out.join("summary.json").exists());

    let rows = dir.path().join("row.json");
    std::fs::write(
        &rows,
        r#"[{"ID": 1, "LM": 0, "age": 61, "icu": 0, "tpn": 0, "urea": 5.0, "temperature": null, "neutropenia": 0},
            {"ID": 1, "LM": 1, "age": null, "icu": 1, "tpn": 0, "urea": null, "temperature": 38.1, "neutropenia": null}]"#,
    )
    .unwrap();
    let model = out.join("models/split000_mice_indicators.imputer.json");
    let o = lmimpute(&["impute", "--model", model.to_str().unwrap(), "--row", rows.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["landmark"], 1);
    assert_eq!(v["completions"].as_array().unwrap().len(), 2);
    let urea_missing = v["columns"].as_array().unwrap().iter().position(|c| c == "urea_missing").unwrap();
    assert_eq!(v["mean"][urea_missing], 1.0);
}

#[test]
fn synthgen_output_feeds_a_file_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let cohort = dir.path().join("data/cohort.csv");
    let o = lmimpute(&["synthgen", "--config", &cfg, "--out", cohort.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("data/cohort.csv.schema.json").exists());

    let file_cfg = dir.path().join("file.json");
    std::fs::write(
        &file_cfg,
        r#"{"seed": 3, "n_splits": 1, "strategies": ["locf"], "data": {"kind": "file", "path": "data/cohort.csv"}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = lmimpute(&["run", "--config", file_cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn failed_cells_set_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[supermodel]\ninteraction = \"missing_column\"\n");
    let o = lmimpute(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(dir.path().join("o/metrics.csv").exists());
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "n_splits = 0\n");
    let o = lmimpute(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
}
