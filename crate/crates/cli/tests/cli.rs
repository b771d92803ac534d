use std::path::Path;
use std::process::{Command, Output};

fn dics(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dics"));
    cmd.args(args).env_remove("DICS_OUT");
    if let Some(dir) = env_out {
        cmd.env("DICS_OUT", dir);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const CONSENSUS: &str = r#"{
  "kind": "consensus",
  "seed": 4,
  "repeat": 2,
  "topology": {"nodes": 5, "p": 0.7, "window": 2},
  "data": {"dim": 3},
  "consensus": {"steps": 60, "q": 0.5}
}"#;

const LINREG: &str = r#"{
  "kind": "linreg",
  "seed": 2,
  "topology": {"nodes": 4, "p": 0.8},
  "data": {"dim": 3, "samples_per_node": 10},
  "engine": {"kind": "svrg", "alpha": 0.01, "inner_steps": 20, "epochs": 3}
}"#;

const SPECTRA: &str = r#"{
  "kind": "spectra",
  "topology": {"nodes": 4, "p": 0.8, "window": 3},
  "data": {"dim": 2},
  "spectra": {"windows": 5}
}"#;

#[test]
fn spectra_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SPECTRA);
    let out = dir.path().join("out");
    let o = dics(&["spectra", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("spectra.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5 * 2);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("spectra.json")).unwrap()).unwrap();
    assert!(json["sigma_max"].as_f64().unwrap() < 1.0);
}

#[test]
fn missing_config_names_the_path() {
    let o = dics(&["consensus", "--config", "/nonexistent/c.json"], None);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("/nonexistent/c.json"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn unknown_flag_prints_usage() {
    let o = dics(&["consensus", "--bogus"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    let o = dics(&["frobnicate"], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad_json = write(dir.path(), "a.json", "{ not json");
    assert_eq!(dics(&["consensus", "--config", &bad_json], None).status.code(), Some(1));
    let unknown_key = write(dir.path(), "b.json", &CONSENSUS.replace("\"repeat\"", "\"repeats\""));
    assert_eq!(dics(&["consensus", "--config", &unknown_key], None).status.code(), Some(1));
    let wrong_kind = write(dir.path(), "c.json", LINREG);
    let o = dics(&["consensus", "--config", &wrong_kind], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("linreg"));
    let bad_q = write(dir.path(), "d.json", &CONSENSUS.replace("\"q\": 0.5", "\"q\": 1.5"));
    assert_eq!(dics(&["consensus", "--config", &bad_q], None).status.code(), Some(1));
    assert_eq!(dics(&["reproduce", "--suite", "nope"], None).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // the fixed horizon runs out before the requested steps
    let cfg = write(dir.path(), "c.json", &CONSENSUS.replace("\"window\": 2}", "\"window\": 2, \"horizon\": 10}"));
    let o = dics(&["consensus", "--config", &cfg, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizon"), "{}", stderr(&o));
}

#[test]
fn env_overrides_config_dir_and_flag_overrides_env() {
    let dir = tempfile::tempdir().unwrap();
    let in_config = dir.path().join("from_config");
    let text = CONSENSUS.replace("\"seed\": 4,", &format!("\"seed\": 4, \"out\": {:?},", in_config.to_str().unwrap()));
    let cfg = write(dir.path(), "c.json", &text);
    let env_dir = dir.path().join("from_env");
    let o = dics(&["consensus", "--config", &cfg], Some(&env_dir));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_dir.join("consensus_r0.csv").exists());
    assert!(env_dir.join("consensus_r1.csv").exists());
    assert!(env_dir.join("consensus_aggregate.csv").exists());
    assert!(!in_config.exists());
    let flag_dir = dir.path().join("from_flag");
    let o = dics(&["consensus", "--config", &cfg, "--out", flag_dir.to_str().unwrap()], Some(&env_dir));
    assert!(o.status.success());
    assert!(flag_dir.join("consensus_residual.svg").exists());
    let o = dics(&["consensus", "--config", &cfg], None);
    assert!(o.status.success());
    assert!(in_config.join("config.json").exists());
}

#[test]
fn optimize_is_deterministic_and_seed_flag_applies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", LINREG);
    let runs: Vec<String> = ["a", "b", "c"]
        .iter()
        .zip(["2", "2", "3"])
        .map(|(name, seed)| {
            let out = dir.path().join(name);
            let o = dics(&["optimize", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()], None);
            assert!(o.status.success(), "{}", stderr(&o));
            std::fs::read_to_string(out.join("linreg_r0.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_ne!(runs[0], runs[2]);
    let records = dics_core::harness::read_csv(&runs[0]).unwrap();
    assert_eq!(records.last().unwrap().t, 60);
}

#[test]
fn theory_without_config_uses_desk_instance() {
    let dir = tempfile::tempdir().unwrap();
    let o = dics(&["theory", "--out", dir.path().to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("theory.json")).unwrap()).unwrap();
    for key in ["sigma", "alpha", "T", "lambda", "lemma5_ok", "prop1_worst_ratio"] {
        assert!(!report[key].is_null(), "missing {key}");
    }
    let u = std::fs::read_to_string(dir.path().join("theory_u.csv")).unwrap();
    assert_eq!(u.lines().next().unwrap(), dics_core::harness::U_HEADER);
}
