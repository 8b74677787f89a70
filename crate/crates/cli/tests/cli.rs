use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simbarrier"))
}

fn corpus(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(file)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("simbarrier-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn synth_composition_succeeds() {
    let out = run(&["synth", corpus("composition.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&out);
    assert_eq!(r["schema"], "simbarrier/report/1");
    assert_eq!(r["status"], "barrier_found");
    assert_eq!(r["verdict"]["result"], "verified");
    assert!(r["delta"].as_f64().unwrap() > 0.0);
}

#[test]
fn verify_reference_barrier() {
    let out = run(&[
        "verify",
        corpus("composition.json").to_str().unwrap(),
        "--barrier",
        corpus("barriers/composition-reference.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["verdict"]["result"], "verified");
}

#[test]
fn refuted_barrier_exits_one() {
    let out = run(&[
        "verify",
        corpus("lorenz.json").to_str().unwrap(),
        "--barrier",
        corpus("barriers/lorenz-reference.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["verdict"]["result"], "refuted");
}

#[test]
fn missing_section_is_reported() {
    let dir = scratch("missing");
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(corpus("composition.json")).unwrap()).unwrap();
    doc.as_object_mut().unwrap().remove("unsafe");
    let path = dir.join("p.json");
    std::fs::write(&path, doc.to_string()).unwrap();
    let out = run(&["synth", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unsafe: required section missing"), "{err}");
}

#[test]
fn bad_flag_value_exits_two() {
    let out = run(&["synth", corpus("composition.json").to_str().unwrap(), "--sigma", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn gen_scalable_matches_checked_in_file() {
    let out = run(&["gen", "--scalable", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let file = std::fs::read_to_string(corpus("scalable-2.json")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), file);
}

#[test]
fn report_barrier_round_trips_through_verify() {
    let dir = scratch("roundtrip");
    let report = dir.join("report.json");
    let out = run(&["synth", corpus("pendulum.json").to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let barrier = dir.join("barrier.json");
    let doc = serde_json::json!({"schema": "simbarrier/barrier/1", "barrier": r["barrier"]});
    std::fs::write(&barrier, doc.to_string()).unwrap();
    let out = run(&["verify", corpus("pendulum.json").to_str().unwrap(), "--barrier", barrier.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reports_are_deterministic_apart_from_timings() {
    let strip = |mut v: Value| {
        let obj = v.as_object_mut().unwrap();
        obj.remove("timings");
        obj.remove("verification");
        v
    };
    let path = corpus("ln-dynamics.json");
    let a = strip(json(&run(&["synth", path.to_str().unwrap(), "--seed", "3"])));
    let b = strip(json(&run(&["synth", path.to_str().unwrap(), "--seed", "3"])));
    assert_eq!(a, b);
}
