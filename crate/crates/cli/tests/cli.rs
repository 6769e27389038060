use std::fs;
use std::path::Path;
use std::process::Command;

use clap::Parser;
use wf_simplex_cli::{parse_file, resolve, Command as Cmd, Flags};

fn wfsim(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_wfsim")).args(args).output().expect("binary runs")
}

fn flags(args: &[&str]) -> Flags {
    let mut v = vec!["wfsim"];
    v.extend_from_slice(args);
    Flags::parse_from(v)
}

fn only_file(dir: &Path, suffix: &str) -> std::path::PathBuf {
    let hits: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    assert_eq!(hits.len(), 1, "{hits:?}");
    hits[0].clone()
}

#[test]
fn empty_config_gives_defaults() {
    let cfg = resolve(&flags(&[]), parse_file("{}").unwrap()).unwrap();
    assert_eq!(cfg.command, Cmd::All);
    assert_eq!((cfg.params.d, cfg.params.n, cfg.params.max_degree), (2, 48, 6));
    assert_eq!((cfg.params.delta, cfg.params.seed), (0.25, 42));
}

#[test]
fn file_values_are_accepted() {
    let cfg = resolve(&flags(&[]), parse_file(r#"{"command": "spectrum", "d": 3, "N": 5}"#).unwrap()).unwrap();
    assert_eq!(cfg.command, Cmd::Spectrum);
    assert_eq!((cfg.params.d, cfg.params.max_degree), (3, 5));
}

#[test]
fn flags_override_file() {
    let cfg = resolve(&flags(&["--d", "1", "--seed", "7"]), parse_file(r#"{"d": 3, "seed": 9, "n": 24}"#).unwrap()).unwrap();
    assert_eq!((cfg.params.d, cfg.params.seed, cfg.params.n), (1, 7, 24));
}

#[test]
fn range_errors_name_the_key() {
    let e = resolve(&flags(&[]), parse_file(r#"{"d": 0}"#).unwrap()).unwrap_err();
    assert!(e.to_string().contains("`d`"), "{e}");
    let e = resolve(&flags(&["--delta", "0.7"]), parse_file("{}").unwrap()).unwrap_err();
    assert!(e.to_string().contains("`delta`"), "{e}");
}

#[test]
fn unknown_keys_and_commands_are_rejected() {
    let e = parse_file(r#"{"dd": 2}"#).unwrap_err();
    assert!(e.to_string().contains("dd"), "{e}");
    let e = parse_file(r#"{"command": "nope"}"#).unwrap_err();
    assert!(e.to_string().contains("nope"), "{e}");
    assert!(parse_file("{").is_err());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = wfsim(&["--command", "spectrum", "--d", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`d`"));
    let out = wfsim(&["--command", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"unknown": 1}"#).unwrap();
    let out = wfsim(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown"));
}

#[test]
fn spectrum_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let out = wfsim(&["--command", "spectrum", "--d", "2", "--N", "4", "--out", o]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(only_file(dir.path(), ".json")).unwrap()).unwrap();
    assert_eq!(json["data"]["spectrum"][0]["eigs"], serde_json::json!([[0, 1, 3], [-1, 1, 3], [-3, 1, 4], [-6, 1, 5]]));
    assert_eq!(json["config"]["command"], "spectrum");
    assert_eq!(json["config"]["N"], 4);
    assert_eq!(json["summary"]["pass"], true);
    let csv = fs::read_to_string(only_file(dir.path(), "Z.csv")).unwrap();
    assert!(csv.starts_with("# config: {"));
}

#[test]
fn artifacts_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = wfsim(&["--command", "chart-check", "--d", "2", "--out", d.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
    }
    for suffix in [".json", "Z.csv"] {
        let x = fs::read(only_file(a.path(), suffix)).unwrap();
        let y = fs::read(only_file(b.path(), suffix)).unwrap();
        // the output directory is part of the embedded config
        let strip = |v: Vec<u8>, p: &Path| String::from_utf8(v).unwrap().replace(p.to_str().unwrap(), "OUT");
        assert_eq!(strip(x, a.path()), strip(y, b.path()));
    }
}

#[test]
fn face_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = wfsim(&["--command", "face-check", "--d", "2", "--n", "32", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn eigenvalue_in_scan_fails_and_is_localized() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"command": "sector-scan", "d": 1, "n": 16, "lambdas": [[-1.0, 0.0]]}"#).unwrap();
    let out = wfsim(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let scan = fs::read_to_string(only_file(dir.path(), ".sector.csv")).unwrap();
    let failing: Vec<&str> = scan.lines().skip(2).filter(|l| !l.ends_with(',')).collect();
    assert_eq!(failing.len(), 1, "{scan}");
    assert!(failing[0].contains("-1.000000000000e0"));
}
