use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN1: &str = r#"{"d":1,"T":1,"nodes":[
  {"id":0,"parent":null,"t":0,"prices":[1.0]},
  {"id":1,"parent":0,"t":1,"prob":0.5,"prices":[2.0]},
  {"id":2,"parent":0,"t":1,"prob":0.5,"prices":[0.5]}],
 "cone":{"generators":[[1.0],[-1.0]]}}"#;

const BIN2: &str = r#"{"d":1,"T":1,"nodes":[
  {"id":0,"parent":null,"t":0,"prices":[1.0]},
  {"id":1,"parent":0,"t":1,"prob":0.5,"prices":[1.1]},
  {"id":2,"parent":0,"t":1,"prob":0.5,"prices":[0.5]}],
 "cone":{"generators":[[1.0]]}}"#;

const ARBITRAGE: &str = r#"{"d":1,"T":1,"nodes":[
  {"id":0,"parent":null,"t":0,"prices":[1.0]},
  {"id":1,"parent":0,"t":1,"prob":0.5,"prices":[2.0]},
  {"id":2,"parent":0,"t":1,"prob":0.5,"prices":[1.5]}],
 "cone":{"generators":[[1.0],[-1.0]]}}"#;

const CALL: &str = r#"{"values":{"1":1.0,"2":0.0}}"#;

struct Dir(TempDir);

impl Dir {
    fn new() -> Self {
        Dir(tempfile::tempdir().unwrap())
    }

    fn file(&self, name: &str, text: &str) -> PathBuf {
        let p = self.0.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }
}

fn dualmax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualmax")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn check_passes_on_bin1() {
    let d = Dir::new();
    let m = d.file("bin1.json", BIN1);
    let out = dualmax(&["check", s(&m)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["passes"], true);
    assert_eq!(v["endowment_bound"].as_f64(), Some(0.0));
    assert_eq!(v["asymptotic_elasticity"]["value"].as_f64(), Some(0.0));
    assert_eq!(v["inada"]["sup_slope"], "inf");
}

#[test]
fn check_rejects_arbitrage() {
    let d = Dir::new();
    let m = d.file("arb.json", ARBITRAGE);
    let out = dualmax(&["check", s(&m)]);
    assert_eq!(out.status.code(), Some(2));
    let v = json(&out);
    assert_eq!(v["passes"], false);
    assert_eq!(v["msup_found"], false);
    assert!(stderr(&out).contains("supermartingale measure"));
}

#[test]
fn check_flags_kink() {
    let d = Dir::new();
    let m = d.file("bin1.json", BIN1);
    let out = dualmax(&["check", s(&m), "--utility", "kink"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["inada"]["passes"], true);
    assert_eq!(v["nonsmooth"], true);
}

#[test]
fn solve_and_verify_round_trip() {
    let d = Dir::new();
    let m = d.file("bin1.json", BIN1);
    let u = d.file("log.json", r#"{"pieces":[{"knot":0.0,"kind":"log","coefficient":1.0}]}"#);
    let r = d.path("report.json");
    let out = dualmax(&["solve", s(&m), "--utility", s(&u), "--wealth", "1.0", "--tol", "1e-8", "--out", s(&r)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&fs::read_to_string(&r).unwrap()).unwrap();
    assert!(v["gap"].as_f64().unwrap() <= 1e-8);
    assert!((v["u"].as_f64().unwrap() - 0.5 * (9.0f64 / 8.0).ln()).abs() < 1e-8);
    assert!((v["X_star"]["1"].as_f64().unwrap() - 1.5).abs() < 1e-6);
    assert!((v["nu_star"]["2"].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-6);

    let out = dualmax(&["verify", s(&r)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let c = json(&out);
    assert!(c["primal_value_drift"].as_f64().unwrap() <= 1e-12);
    assert!(c["dual_value_drift"].as_f64().unwrap() <= 1e-12);
    assert_eq!(c["singular_pairing"].as_f64(), Some(0.0));
}

#[test]
fn tampered_report_fails_verification() {
    let d = Dir::new();
    let m = d.file("bin1.json", BIN1);
    let r = d.path("report.json");
    let out = dualmax(&["solve", s(&m), "--wealth", "1", "--out", s(&r)]);
    assert_eq!(out.status.code(), Some(0));
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&r).unwrap()).unwrap();
    for leaf in ["1", "2"] {
        let x = v["X_star"][leaf].as_f64().unwrap();
        v["X_star"][leaf] = Value::from(x * 1.01);
    }
    let t = d.file("tampered.json", &v.to_string());
    let out = dualmax(&["verify", s(&t)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("relation budget violated"), "{}", stderr(&out));
}

#[test]
fn wealth_below_bound() {
    let d = Dir::new();
    let m = d.file("bin1.json", BIN1);
    let c = d.file("call.json", CALL);
    let out = dualmax(&["solve", s(&m), "--claim", s(&c), "--wealth", "0.2"]);
    assert_eq!(out.status.code(), Some(2));
    let e = stderr(&out);
    assert!(e.contains("endowment bound 0.333"), "{e}");
}

#[test]
fn capped_utility_needs_force() {
    let d = Dir::new();
    let m = d.file("bin1.json", BIN1);
    let out = dualmax(&["solve", s(&m), "--utility", "capped", "--wealth", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("inada"));
    let out = dualmax(&["solve", s(&m), "--utility", "capped", "--wealth", "1", "--force"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(json(&out)["backend"], "lp");
}

#[test]
fn price_and_decompose() {
    let d = Dir::new();
    let m = d.file("bin1.json", BIN1);
    let c = d.file("call.json", CALL);
    let out = dualmax(&["price", s(&m), "--claim", s(&c)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    assert!((v["price"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-9);
    assert!((v["hedge"]["0"][0].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-9);
    assert_eq!(v["replicable_at_price"], true);
    assert_eq!(v["replicable_at_price_dual"], true);

    let m2 = d.file("bin2.json", BIN2);
    let c2 = d.file("c2.json", r#"{"values":{"1":0.1,"2":0.0}}"#);
    let out = dualmax(&["decompose", s(&m2), "--claim", s(&c2)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    assert!((v["V0"].as_f64().unwrap() - 1.0 / 12.0).abs() < 1e-9);
    assert!((v["nodes"]["0"]["H"][0].as_f64().unwrap() - 1.0 / 6.0).abs() < 1e-9);
    assert!(v["identity_residual"].as_f64().unwrap() < 1e-8);
}

#[test]
fn oracle_uses_report_layout() {
    let d = Dir::new();
    let m = d.file("bin1.json", BIN1);
    let r = d.path("brute.json");
    let out = dualmax(&["oracle", s(&m), "--wealth", "1", "--grid", "-1:2:3001", "--out", s(&r)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&fs::read_to_string(&r).unwrap()).unwrap();
    assert_eq!(v["backend"], "brute");
    assert!((v["u"].as_f64().unwrap() - 0.5 * (9.0f64 / 8.0).ln()).abs() < 1e-6);
    assert!((v["w"].as_f64().unwrap() - 0.5 * (9.0f64 / 8.0).ln()).abs() < 1e-6);
    let out = dualmax(&["verify", s(&r), "--tol", "1e-4"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn oracle_grid_outside_the_cone() {
    let d = Dir::new();
    let m = d.file("bin2.json", BIN2);
    let out = dualmax(&["oracle", s(&m), "--wealth", "1", "--grid", "-2:-1:50"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no grid point is feasible"));
}

#[test]
fn input_errors_exit_3() {
    let d = Dir::new();
    let bad = d.file("bad.json", "{\"d\": 1,\n \"T\": oops}");
    let out = dualmax(&["check", s(&bad)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("bad.json:2:"), "{}", stderr(&out));

    let out = dualmax(&["check", s(&d.path("missing.json"))]);
    assert_eq!(out.status.code(), Some(3));

    let m = d.file("bin1.json", BIN1);
    let out = dualmax(&["solve", s(&m), "--wealth", "1", "--tol", "0.5"]);
    assert_eq!(out.status.code(), Some(3));
    let out = dualmax(&["solve", s(&m), "--wealth", "1", "--backend", "lp"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn outputs_never_overwrite() {
    let d = Dir::new();
    let m = d.file("bin1.json", BIN1);
    let existing = d.file("out.json", "keep");
    let out = dualmax(&["check", s(&m), "--out", s(&existing)]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(fs::read_to_string(&existing).unwrap(), "keep");
}
