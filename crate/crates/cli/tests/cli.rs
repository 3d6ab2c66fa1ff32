use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gridmech::fixtures;
use gridmech::model::MarketInstance;
use serde_json::Value;
use tempfile::TempDir;

fn gridmech(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridmech"))
        .args(args)
        .current_dir(dir)
        .env_remove("GRIDMECH_THREADS")
        .output()
        .expect("gridmech runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = gridmech(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn toy_dir() -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    ok(&["example", "toy-b", "--out", "i.json"], dir.path());
    let path = dir.path().join("i.json");
    (dir, path)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn without_manifest(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("manifest").expect("output carries a manifest");
    v
}

fn csv_body(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn example_writes_the_toy_instance() {
    let (_dir, path) = toy_dir();
    let inst = MarketInstance::from_json_path(&path).unwrap();
    assert_eq!(inst, fixtures::toy_b());
    let manifest = &read_json(&path)["manifest"];
    assert_eq!(manifest["command"], "example");
    assert_eq!(manifest["tool_version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn uplift_sweep_has_one_row_per_value() {
    let (dir, _) = toy_dir();
    let out = ok(
        &["sweep", "--param", "uplift", "--values", "0:100:5", "--mechanism", "piu", "--instance", "i.json"],
        dir.path(),
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# manifest {"));
    let body = csv_body(&text);
    let header: Vec<&str> = body[0].split(',').collect();
    assert_eq!(&header[..5], ["uplift", "total_ler_profit", "consumer_cost", "cer_profit", "system_cost"]);
    assert_eq!(body.len() - 1, 21);
    let first: Vec<f64> = body[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert!((first[4] - 2600.0).abs() < 1e-4);
    let last: Vec<&str> = body[21].split(',').collect();
    assert_eq!(last[0], "100");
}

#[test]
fn solved_reports_verify() {
    let (dir, _) = toy_dir();
    for mech in ["p", "pi", "piu", "mcp"] {
        ok(&["solve-eq", "--mechanism", mech, "--instance", "i.json", "--uplift", "0", "--out", "eq.json"], dir.path());
        let out = ok(&["verify", "--eq", "eq.json"], dir.path());
        let verdict: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(verdict["pass"], true, "{mech}: {verdict}");
    }
    ok(&["solve-eq", "--mechanism", "mcp", "--competition", "perfect", "--instance", "i.json", "--out", "eq.json"], dir.path());
    ok(&["verify", "--eq", "eq.json"], dir.path());
}

#[test]
fn piu_report_matches_the_toy_figures() {
    let (dir, _) = toy_dir();
    ok(&["solve-eq", "--mechanism", "piu", "--uplift", "5", "--instance", "i.json", "--out", "eq.json"], dir.path());
    let eq = read_json(&dir.path().join("eq.json"));
    let cap = eq["report"]["profile"]["investors"][0]["resource"]["capacity"].as_f64().unwrap();
    assert!((cap - 70.0).abs() < 1e-5);
    assert!((eq["report"]["system_cost"].as_f64().unwrap() - 2625.0).abs() < 1e-4);
}

fn corrupt(dir: &Path, edit: impl FnOnce(&mut Value)) -> i32 {
    ok(&["solve-eq", "--mechanism", "piu", "--uplift", "5", "--instance", "i.json", "--out", "eq.json"], dir);
    let mut eq = read_json(&dir.join("eq.json"));
    edit(&mut eq);
    std::fs::write(dir.join("bad.json"), serde_json::to_string(&eq).unwrap()).unwrap();
    gridmech(&["verify", "--eq", "bad.json"], dir).status.code().unwrap()
}

#[test]
fn corrupted_reports_exit_three() {
    let (dir, _) = toy_dir();
    let d = dir.path();
    assert_eq!(corrupt(d, |eq| eq["report"]["profits"][0]["profit"] = 9999.0.into()), 3);
    assert_eq!(
        corrupt(d, |eq| {
            let r = &mut eq["report"]["profile"]["investors"][0]["resource"];
            r["capacity"] = 60.0.into();
            r["market"] = serde_json::json!([[60.0]]);
        }),
        3
    );
    assert_eq!(corrupt(d, |eq| eq["report"]["prices"] = serde_json::json!([[1.0]])), 3);
    assert_eq!(corrupt(d, |eq| eq["report"]["profile"]["cer_output"] = serde_json::json!([[0.0]])), 3);
    std::fs::write(d.join("junk.json"), "{\"report\": 1}").unwrap();
    assert_eq!(gridmech(&["verify", "--eq", "junk.json"], d).status.code(), Some(3));
}

#[test]
fn usage_errors_exit_one() {
    let (dir, _) = toy_dir();
    let out = gridmech(&["solve-eq", "--instance", "i.json", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--mechanism") && err.contains("--uplift"), "{err}");
    assert_eq!(gridmech(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(gridmech(&["solve-eq", "--instance", "missing.json"], dir.path()).status.code(), Some(1));
    assert_eq!(gridmech(&["solve-eq", "--instance", "i.json", "--mechanism", "xyz"], dir.path()).status.code(), Some(1));
    assert_eq!(gridmech(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(gridmech(&["--version"], dir.path()).status.code(), Some(0));
}

#[test]
fn reruns_are_byte_identical_apart_from_manifests() {
    let (dir, _) = toy_dir();
    let d = dir.path();
    let sweep = ["sweep", "--param", "gamma", "--values", "0.5,0.8,1.0", "--mechanism", "pi", "--instance", "i.json"];
    let a = ok(&sweep, d).stdout;
    let b = ok(&sweep, d).stdout;
    let (a, b) = (String::from_utf8(a).unwrap(), String::from_utf8(b).unwrap());
    assert_eq!(csv_body(&a), csv_body(&b));

    let solve = ["solve-eq", "--mechanism", "pi", "--instance", "i.json"];
    let a: Value = serde_json::from_slice(&ok(&solve, d).stdout).unwrap();
    let b: Value = serde_json::from_slice(&ok(&solve, d).stdout).unwrap();
    assert_eq!(a["manifest"]["config_sha256"], b["manifest"]["config_sha256"]);
    assert_eq!(a["manifest"]["inputs"], b["manifest"]["inputs"]);
    assert_eq!(
        serde_json::to_string(&without_manifest(a)).unwrap(),
        serde_json::to_string(&without_manifest(b)).unwrap()
    );
}

#[test]
fn flags_override_the_config_file() {
    let (dir, _) = toy_dir();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), r#"{"mechanism": "piu", "uplift": 5.0, "threads": 2}"#).unwrap();
    let from_file: Value = serde_json::from_slice(&ok(&["solve-eq", "--config", "cfg.json", "--instance", "i.json"], d).stdout).unwrap();
    assert_eq!(from_file["report"]["mechanism"]["kind"], "piu");
    assert_eq!(from_file["report"]["mechanism"]["uplift"], 5.0);
    assert!(from_file["manifest"]["inputs"]["config"].is_string());

    let overridden: Value = serde_json::from_slice(
        &ok(&["solve-eq", "--config", "cfg.json", "--instance", "i.json", "--uplift", "0"], d).stdout,
    )
    .unwrap();
    assert!(overridden["report"]["mechanism"]["uplift"].is_null());

    std::fs::write(d.join("typo.json"), r#"{"mechansim": "p"}"#).unwrap();
    assert_eq!(gridmech(&["solve-eq", "--config", "typo.json", "--instance", "i.json"], d).status.code(), Some(1));
}

#[test]
fn thread_cap_comes_from_the_environment() {
    let (dir, _) = toy_dir();
    let out = Command::new(env!("CARGO_BIN_EXE_gridmech"))
        .args(["sweep", "--param", "uplift", "--values", "0,5", "--mechanism", "piu", "--instance", "i.json"])
        .current_dir(dir.path())
        .env("GRIDMECH_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    let bad = Command::new(env!("CARGO_BIN_EXE_gridmech"))
        .args(["example", "toy-b"])
        .env("GRIDMECH_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn surplus_ledger_has_fixed_columns() {
    let (dir, _) = toy_dir();
    let d = dir.path();
    ok(&["solve-eq", "--mechanism", "piu", "--uplift", "5", "--instance", "i.json", "--out", "eq.json"], d);
    for payer in ["consumers", "operator"] {
        let text = String::from_utf8(ok(&["surplus", "--eq", "eq.json", "--uplift-payer", payer], d).stdout).unwrap();
        assert!(text.lines().any(|l| l.starts_with("# conservation {") && l.contains("\"pass\":true")));
        let body = csv_body(&text);
        assert_eq!(body[0], "account,item,value");
        let profit: f64 = body
            .iter()
            .find(|l| l.starts_with("ler:vre,surplus,"))
            .and_then(|l| l.rsplit(',').next())
            .unwrap()
            .parse()
            .unwrap();
        assert!(profit.is_finite());
    }
}

#[test]
fn network_solves_run_on_a_single_bus() {
    let (dir, _) = toy_dir();
    let d = dir.path();
    std::fs::write(
        d.join("grid.json"),
        r#"{"buses": [{"id": "a", "demand_share": 1.0, "cer_share": 1.0}], "investor_bus": {"vre": "a"}}"#,
    )
    .unwrap();
    let so: Value = serde_json::from_slice(&ok(&["solve-so", "--instance", "i.json", "--topology", "grid.json"], d).stdout).unwrap();
    assert!((so["network"]["system_cost"].as_f64().unwrap() - 2600.0).abs() < 1e-4);
    let eq: Value = serde_json::from_slice(
        &ok(&["solve-eq", "--mechanism", "p", "--instance", "i.json", "--topology", "grid.json"], d).stdout,
    )
    .unwrap();
    assert!(eq["network"]["profits"][0]["profit"].as_f64().unwrap() > 0.0);
}

#[test]
fn synthetic_example_solves_the_social_optimum() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["example", "synthetic", "--seed", "3", "--scenarios", "4", "--out", "s.json"], d);
    let so: Value = serde_json::from_slice(&ok(&["solve-so", "--instance", "s.json"], d).stdout).unwrap();
    assert!(so["result"]["system_cost"].as_f64().unwrap() > 0.0);
}
