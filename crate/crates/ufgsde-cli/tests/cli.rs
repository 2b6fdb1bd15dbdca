use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn ufgsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ufgsde")).args(args).output().expect("binary runs")
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli");
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn satisfied_check_exits_zero_with_a_report() {
    let out = ufgsde(&["check", "--system", "sinfields", "--condition", "ufg", "--grid", "6"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out.stdout);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["command"], "check");
    assert_eq!(r["verdict"], "satisfied_on_samples");
    assert_eq!(r["records"].as_array().unwrap().len(), 36);
    assert_eq!(r["metadata"]["grid"], 6);
    assert!(r.get("error").is_none());
}

#[test]
fn violated_condition_exits_two() {
    let out = ufgsde(&[
        "check", "--system", "grushin", "--param", "k=-1", "--condition", "oac", "--lambda0", "0.5", "--grid", "5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let r = json(&out.stdout);
    assert_eq!(r["verdict"], "violated");
    assert!(r["worst_point"].is_array());
}

#[test]
fn suspect_ufg_verdict_exits_two() {
    let out = ufgsde(&["check", "--system", "non-ufg-psi", "--condition", "ufg", "--level", "3", "--grid", "16"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out.stdout)["verdict"], "suspect");
}

#[test]
fn usage_errors_exit_three_with_an_error_object() {
    let out = ufgsde(&["check", "--system", "nosuch", "--condition", "ufg"]);
    assert_eq!(out.status.code(), Some(3));
    let err = json(&out.stderr);
    assert_eq!(err["error"]["kind"], "usage");
    assert_eq!(err["error"]["exit_code"], 3);
    assert_eq!(json(&out.stdout), err);

    assert_eq!(ufgsde(&["check", "--no-such-flag"]).status.code(), Some(3));
    assert_eq!(ufgsde(&["simulate", "--system", "gbm", "--dt", "0", "--paths", "1"]).status.code(), Some(3));
    let bad_param = ufgsde(&["check", "--system", "grushin", "--param", "k", "--condition", "ufg"]);
    assert_eq!(bad_param.status.code(), Some(3));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(ufgsde(&["--help"]).status.code(), Some(0));
    assert_eq!(ufgsde(&["--version"]).status.code(), Some(0));
}

#[test]
fn out_file_matches_stdout() {
    let path = scratch("ranks.json");
    let args = ["ranks", "--system", "ufg-heisenberg", "--x0", "1,0,0", "--t", "0.5", "--paths", "5", "--seed", "9"];
    let stdout = ufgsde(&args);
    assert_eq!(stdout.status.code(), Some(0));
    let mut with_out = args.to_vec();
    with_out.extend(["--out", path.to_str().unwrap()]);
    let file = ufgsde(&with_out);
    assert_eq!(file.status.code(), Some(0));
    assert!(file.stdout.is_empty());
    assert_eq!(fs::read(&path).unwrap(), stdout.stdout);
}

#[test]
fn exported_catalog_system_round_trips() {
    let export = ufgsde(&["catalog", "show", "sine-ou", "--param", "k=2", "--export"]);
    assert_eq!(export.status.code(), Some(0));
    let path = scratch("sine-ou.sys");
    fs::write(&path, &export.stdout).unwrap();
    let common = ["--condition", "hc", "--grid", "5", "--box", "-1:1,4:5"];
    let from_catalog = ufgsde(&[&["check", "--system", "sine-ou", "--param", "k=2"][..], &common[..]].concat());
    let from_file = ufgsde(&[&["check", "--system", path.to_str().unwrap()][..], &common[..]].concat());
    assert_eq!(from_catalog.status.code(), from_file.status.code());
    let (a, b) = (json(&from_catalog.stdout), json(&from_file.stdout));
    assert_eq!(a["verdict"], b["verdict"]);
    assert_eq!(a["records"], b["records"]);
}

#[test]
fn file_systems_reject_parameters() {
    let path = scratch("ou.sys");
    fs::write(&path, "dim = 1\nnoise = 1\nvars = x\nV0 = [-x]\nV1 = [1]\n").unwrap();
    let out = ufgsde(&["check", "--system", path.to_str().unwrap(), "--param", "k=1", "--condition", "ufg"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn catalog_list_names_every_entry() {
    let out = ufgsde(&["catalog", "list"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ufgsde::catalog::names() {
        assert!(text.lines().any(|l| l.starts_with(&format!("{name}\t"))), "{name}");
    }
}

#[test]
fn simulate_writes_csv_and_is_seeded() {
    let args = ["simulate", "--system", "random-circles", "--x0", "1,0", "--t", "0.01", "--paths", "3", "--seed", "5"];
    let a = ufgsde(&args);
    let b = ufgsde(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("path_id,time,x1,x2"));
    assert_eq!(text.lines().count(), 1 + 3 * 11);
}

#[test]
fn fokker_planck_residual_of_the_catalog_density_passes() {
    let out = ufgsde(&["fpresidual", "--system", "circle-line"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out.stdout)["verdict"], "pass");
}
