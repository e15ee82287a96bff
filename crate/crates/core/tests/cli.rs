use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hbar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hbar-sim")).args(args).output().unwrap()
}

fn reference_file() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data/reference_device.json")
        .to_string_lossy()
        .into_owned()
}

fn manifest(dir: &Path, name: &str) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join(format!("{name}.manifest.json"))).unwrap()).unwrap()
}

#[test]
fn validate_prints_summary() {
    let out = hbar(&["validate", "--device", &reference_file()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("qubit1 `q1`: omega_op 3.7778 GHz"));
    assert!(text.contains("qubit-qubit 2g 16.7 MHz"));
    assert!(text.contains("hash "));
}

#[test]
fn usage_errors_exit_2() {
    let out = hbar(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = hbar(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = hbar(&["chevron", "--qubit", "3", "--offsets", "0:1:2", "--durations", "0:1:2"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(hbar(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_device_exits_2_with_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(reference_file()).unwrap()).unwrap();
    v["qubit2"]["t2_us"] = Value::from(-1.0);
    std::fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
    let out = hbar(&["validate", "--device", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("qubit2.T2"));
}

#[test]
fn chevron_writes_grid_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = hbar(&[
        "chevron",
        "--qubit",
        "2",
        "--offsets",
        "0:110:3",
        "--durations",
        "0:1:5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("chevron.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "duration_us,offset_MHz=0,offset_MHz=55,offset_MHz=110");
    assert_eq!(csv.lines().count(), 6);
    let m = manifest(dir.path(), "chevron");
    assert_eq!(m["request"]["experiment"], "chevron");
    assert_eq!(m["options"]["decoherence"], true);
    assert_eq!(m["device_hash"].as_str().unwrap().len(), 64);
    assert!(m["truncation"].is_object());
}

#[test]
fn dephasing_clamp_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(reference_file()).unwrap()).unwrap();
    v["qubit2"]["t2_us"] = Value::from(3.0 * v["qubit2"]["t1_us"].as_f64().unwrap());
    std::fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
    let out = hbar(&[
        "chevron",
        "--device",
        path.to_str().unwrap(),
        "--qubit",
        "2",
        "--offsets",
        "0:0:1",
        "--durations",
        "0:0.1:2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let warnings = manifest(dir.path(), "chevron")["warnings"].clone();
    assert!(
        warnings.as_array().unwrap().iter().any(|w| w.as_str().unwrap().starts_with("qubit2")),
        "{warnings}"
    );
}

#[test]
fn replay_reproduces_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let out = hbar(&[
        "transfer",
        "--offsets",
        "0:20:3",
        "--durations",
        "0:0.2:3",
        "--out",
        first.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = first.join("transfer.manifest.json");
    let out = hbar(&["replay", "--manifest", m.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(first.join("transfer.csv")).unwrap(),
        std::fs::read(second.join("transfer.csv")).unwrap()
    );
}

#[test]
fn reference_output_matches_shipped_file() {
    let out = hbar(&["reference"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(out.stdout, std::fs::read(reference_file()).unwrap());
}
