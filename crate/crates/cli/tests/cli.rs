use std::path::Path;
use std::process::{Command, Output};

fn hdqkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdqkd"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL: &[&str] = &["--set", "dim=4", "--set", "total_rounds=1e9", "--set", "splitting_ratio=0.2"];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

#[test]
fn empty_grid_gives_header_only() {
    for axis in ["N", "v", "loss", "t_F"] {
        let o = hdqkd(&["sweep", "--axis", axis, "--grid", ""]);
        assert!(o.status.success(), "{axis}: {}", String::from_utf8_lossy(&o.stderr));
        let text = stdout(&o);
        assert_eq!(text.lines().count(), 1, "{axis}: {text}");
        assert!(text.contains("rate"));
    }
}

#[test]
fn observation_csv_round_trip_reproduces_reports() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("obs.csv");
    let obs_s = obs.to_str().unwrap();
    let first = hdqkd(&with_small(&[
        "keyrate",
        "--sample",
        "--seed",
        "7",
        "--regime",
        "fc,vc",
        "--write-observations",
        obs_s,
    ]));
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(Path::new(&obs).exists());
    let set = format!("observations={obs_s}");
    let second = hdqkd(&with_small(&["keyrate", "--regime", "fc,vc", "--set", &set]));
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    assert_eq!(stdout(&first), stdout(&second));
    assert_eq!(stdout(&first).lines().count(), 3);
}

#[test]
fn keyrate_is_deterministic_and_flags_win() {
    let a = hdqkd(&with_small(&["keyrate", "--sample", "--seed", "3"]));
    let b = hdqkd(&with_small(&["keyrate", "--sample", "--seed", "3"]));
    let c = hdqkd(&with_small(&["keyrate", "--sample", "--seed", "3", "--set", "visibility=0.9"]));
    assert_eq!(stdout(&a), stdout(&b));
    assert_ne!(stdout(&a), stdout(&c));
}

#[test]
fn json_lines_parse() {
    let o = hdqkd(&with_small(&["keyrate", "--format", "json-lines", "--regime", "fc,fq,vc,vq"]));
    assert!(o.status.success());
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[3]["regime"], "vq");
    let b = hdqkd(&["budget", "--format", "json-lines", "--regime", "fq"]);
    let v: serde_json::Value = serde_json::from_str(stdout(&b).trim()).unwrap();
    assert_eq!(v["regime"], "fq");
}

#[test]
fn budget_csv_has_rows_for_each_regime() {
    let o = hdqkd(&["budget", "--regime", "fc,vq"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("fc,eps_ev,")));
    assert!(text.lines().any(|l| l.starts_with("vq,eps_tilde,")));
}

#[test]
fn exit_codes() {
    assert_eq!(hdqkd(&["budget", "--set", "bogus=1"]).status.code(), Some(1));
    assert_eq!(hdqkd(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hdqkd(&["budget", "--config", "/nonexistent/cfg.toml"]).status.code(), Some(1));
    assert_eq!(hdqkd(&["sweep", "--axis", "v", "--grid", "0.9,abc"]).status.code(), Some(1));
    assert_eq!(hdqkd(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("obs.csv");
    std::fs::write(&bad, "witness,value,count\n0,0.5,10\n").unwrap();
    let set = format!("observations={}", bad.display());
    assert_eq!(hdqkd(&with_small(&["keyrate", "--set", &set])).status.code(), Some(1));
}

#[test]
fn selftest_passes() {
    let o = hdqkd(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).lines().skip(1).all(|l| l.contains(",true,")));
}

#[test]
fn simulate_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs.csv");
    let o = hdqkd(&[
        "simulate",
        "--set",
        "dim=4",
        "--set",
        "total_rounds=1e8",
        "--set",
        "splitting_ratio=0.3",
        "--set",
        "runs=5",
        "--set",
        "channel=\"rapid\"",
        "--threads",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data.len(), 6);
    assert!(text.contains("# acceptance_ratio="));
    assert!(text.contains("# varlen_rate="));
}
