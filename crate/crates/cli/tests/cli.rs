use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_carmine"))
}

fn demo_csv() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo_snapshot.csv")
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.json");
    let text = format!(
        r#"{{
  "run_id": "t",
  "input": {input:?},
  "out_dir": "out",
  "som": {{"epochs": 15}}{extra}
}}"#,
        input = demo_csv().display().to_string(),
    );
    fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn full_run_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = run(bin().args(["run", "--config"]).arg(&cfg));
    assert!(out.status.success());
    let dir = tmp.path().join("out");
    let report: Value = serde_json::from_slice(&fs::read(dir.join("run_report.json")).unwrap()).unwrap();
    assert_eq!(report["class_counts"].as_object().unwrap().len(), 4);
    let stages: Vec<&str> = report["stages"].as_array().unwrap().iter().map(|s| s["stage"].as_str().unwrap()).collect();
    assert_eq!(stages, ["ingest", "clean", "discretize", "chi2", "som", "mine", "render"]);
    let fc = &report["filter_counts"];
    let chain: Vec<u64> = ["candidates", "after_confidence", "after_length", "after_support", "after_lift", "after_redundancy"]
        .iter()
        .map(|k| fc[k].as_u64().unwrap())
        .collect();
    assert!(chain.windows(2).all(|w| w[0] >= w[1]), "{chain:?}");

    let rules: Value = serde_json::from_slice(&fs::read(dir.join("rules.json")).unwrap()).unwrap();
    let high = rules
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["consequent"]["category"] == "high" && r["consequent"]["attribute"] == "DpM")
        .count();
    assert!(high > 0);

    for m in report["manifest"].as_array().unwrap() {
        let bytes = fs::read(dir.join(m["file"].as_str().unwrap())).unwrap();
        assert_eq!(bytes.len() as u64, m["bytes"].as_u64().unwrap());
    }
    assert!(!dir_contents(&dir).keys().any(|k| k.ends_with(".partial")));
}

#[test]
fn stage_composition_matches_run_and_reruns_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let whole = tmp.path().join("whole");
    let again = tmp.path().join("again");
    let staged = tmp.path().join("staged");
    for d in [&whole, &again] {
        assert!(run(bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(d)).status.success());
    }
    for stage in ["ingest", "clean", "discretize", "chi2", "som", "mine", "render"] {
        let out = run(bin().arg(stage).arg("--config").arg(&cfg).arg("--out").arg(&staged));
        assert!(out.status.success(), "{stage}");
    }
    let mut a = dir_contents(&whole);
    let mut b = dir_contents(&again);
    let c = dir_contents(&staged);
    a.remove("run_report.json");
    b.remove("run_report.json");
    assert_eq!(a.keys().collect::<Vec<_>>(), c.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        assert!(bytes == &c[name], "{name} differs between run and stages");
        assert!(bytes == &b[name], "{name} differs between reruns");
    }
}

#[test]
fn seed_flag_changes_som_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&a)).status.success());
    assert!(run(bin().args(["run", "--seed", "7", "--config"]).arg(&cfg).arg("--out").arg(&b)).status.success());
    assert_eq!(fs::read(a.join("rules.json")).unwrap(), fs::read(b.join("rules.json")).unwrap());
    assert_ne!(
        fs::read(a.join("som_covid_grid.json")).unwrap(),
        fs::read(b.join("som_covid_grid.json")).unwrap()
    );
}

#[test]
fn unknown_attribute_fails_before_any_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#", "outlier_columns": ["NoSuchColumn"]"#);
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NoSuchColumn"));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn invalid_config_values_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#", "mining": {"min_confidence": 1.5}"#);
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"not_a_key": 1}"#).unwrap();
    assert_eq!(bin().args(["run", "--config"]).arg(&cfg).output().unwrap().status.code(), Some(2));
}

#[test]
fn stage_input_schema_mismatch_names_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("small.csv");
    fs::write(&csv, "Country,Obesity\nA,1\nB,2\nC,3\n").unwrap();
    let out = bin()
        .args(["clean", "--out"])
        .arg(tmp.path().join("out"))
        .arg("--input")
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("clean") && err.contains("TpM") && err.contains("Obesity"), "{err}");
}

#[test]
fn missing_prior_stage_output_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin().args(["mine", "--out"]).arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("categorical.csv"));
}

#[test]
fn corrupt_intermediate_is_a_stage_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    for stage in ["ingest", "clean", "discretize"] {
        assert!(run(bin().arg(stage).arg("--config").arg(&cfg)).status.success());
    }
    fs::write(tmp.path().join("out/thresholds.json"), "{ not json").unwrap();
    let out = bin().args(["chi2", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("carmine: chi2:"));
}

fn discretized(tmp: &Path) -> PathBuf {
    let cfg = write_config(tmp, "");
    for stage in ["ingest", "clean", "discretize"] {
        assert!(run(bin().arg(stage).arg("--config").arg(&cfg)).status.success());
    }
    cfg
}

#[test]
fn chi2_single_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = discretized(tmp.path());
    let out = run(bin().args(["chi2", "--x", "Obesity", "--y", "DpM", "--config"]).arg(&cfg));
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&fs::read(tmp.path().join("out/chi2_Obesity_DpM.json")).unwrap()).unwrap();
    assert_eq!(v["x"], "Obesity");
    assert_eq!(v["y"], "DpM");
    assert_eq!(v["dof"], 6);
    assert!(v["statistic"].as_f64().unwrap() >= 0.0);
    let p = v["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn mine_with_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = discretized(tmp.path());
    let out = run(bin()
        .args([
            "mine",
            "--consequent",
            "DpM=high",
            "--min-conf",
            "0.9",
            "--min-len",
            "2",
            "--max-len",
            "5",
            "--min-support",
            "0.065",
            "--config",
        ])
        .arg(&cfg));
    assert!(out.status.success());
    let rules: Vec<Value> =
        serde_json::from_slice(&fs::read(tmp.path().join("out/rules.json")).unwrap()).unwrap();
    assert!(!rules.is_empty());
    for r in &rules {
        assert_eq!(r["consequent"]["category"], "high");
        assert!(r["confidence"].as_f64().unwrap() >= 0.9);
        assert!(r["support"].as_f64().unwrap() >= 0.065 - 1e-12);
        let len = r["antecedent"].as_array().unwrap().len() + 1;
        assert!((2..=5).contains(&len));
    }
    let table = fs::read_to_string(tmp.path().join("out/rules.txt")).unwrap();
    assert!(table.starts_with("antecedents\tconsequent\tsupport\tconfidence\tlift"));
}

#[test]
fn mine_rejects_mixed_consequent_attributes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = discretized(tmp.path());
    let out = bin()
        .args(["mine", "--consequent", "DpM=high", "--consequent", "CpM=high", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn version_and_help() {
    let v = bin().arg("--version").output().unwrap();
    assert!(v.status.success());
    assert!(String::from_utf8_lossy(&v.stdout).starts_with("carmine "));
    let h = bin().arg("--help").output().unwrap();
    assert!(h.status.success());
    let text = String::from_utf8_lossy(&h.stdout);
    for sub in ["run", "ingest", "clean", "discretize", "chi2", "som", "mine", "render"] {
        assert!(text.contains(sub), "{sub}");
    }
}
