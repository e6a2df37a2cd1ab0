use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn cdrift(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdrift"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cdrift(dir, args);
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(out.status.success(), "cdrift {args:?} failed:\n{stderr}");
    stderr
}

fn small_corpus() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", ".", "--posts", "1200", "--claims", "60"]);
    dir
}

#[test]
fn drift_without_cluster_exits_2() {
    let dir = small_corpus();
    let out = cdrift(dir.path(), &["drift"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cdrift cluster"));
}

#[test]
fn cluster_then_drift_writes_outputs_and_reruns_are_noops() {
    let dir = small_corpus();
    ok(dir.path(), &["run", "cluster"]);
    ok(dir.path(), &["run", "drift"]);
    let out = dir.path().join("out");
    for f in [
        "cluster/members.csv",
        "cluster/manifest.json",
        "drift/early_drift.csv",
        "drift/curve.csv",
        "drift/summary.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(out.join("config.resolved.toml").is_file());

    let before = std::fs::read(out.join("drift/early_drift.csv")).unwrap();
    let log = ok(dir.path(), &["run", "cluster", "drift"]);
    assert!(log.contains("cluster: inputs unchanged, skipping"), "{log}");
    assert!(log.contains("drift: inputs unchanged, skipping"), "{log}");
    assert_eq!(before, std::fs::read(out.join("drift/early_drift.csv")).unwrap());

    // a changed setting invalidates only the stages that read it
    let cfg = std::fs::read_to_string(dir.path().join("cdrift.toml")).unwrap();
    let cfg = cfg.replace("curve_max_days = 30", "curve_max_days = 10");
    std::fs::write(dir.path().join("short.toml"), cfg).unwrap();
    let log = ok(dir.path(), &["--config", "short.toml", "run", "cluster", "drift"]);
    assert!(log.contains("cluster: inputs unchanged, skipping"), "{log}");
    assert!(log.contains("drift: running"), "{log}");
}

#[test]
fn damaged_output_triggers_rerun() {
    let dir = small_corpus();
    ok(dir.path(), &["run", "cluster"]);
    let members = dir.path().join("out/cluster/members.csv");
    let good = std::fs::read(&members).unwrap();
    std::fs::write(&members, b"claim_id,post_id,created_at\n").unwrap();
    let log = ok(dir.path(), &["cluster"]);
    assert!(log.contains("cluster: running"), "{log}");
    assert_eq!(good, std::fs::read(&members).unwrap());
}

#[test]
fn full_run_is_reproducible() {
    let dir = small_corpus();
    ok(dir.path(), &["--out", "a", "run"]);
    ok(dir.path(), &["--out", "b", "--jobs", "2", "run"]);
    for f in [
        "report/report.md",
        "survive/models.json",
        "aat/mutations.csv",
        "psylex/mutations.csv",
    ] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
    let report = std::fs::read_to_string(dir.path().join("a/report/report.md")).unwrap();
    for section in [
        "## Claims",
        "## Early drift",
        "## Psycholinguistic mutation",
        "## Weibull AFT models",
    ] {
        assert!(report.contains(section), "{section} missing");
    }
}

#[test]
fn no_surviving_claims_is_reported() {
    let dir = small_corpus();
    let cfg = std::fs::read_to_string(dir.path().join("cdrift.toml")).unwrap();
    let cfg = cfg.replace("min_lifespan_days = 1.0", "min_lifespan_days = 100000.0");
    assert!(cfg.contains("100000"), "config layout changed:\n{cfg}");
    std::fs::write(dir.path().join("strict.toml"), cfg).unwrap();
    ok(dir.path(), &["--config", "strict.toml", "run"]);
    let report = std::fs::read_to_string(dir.path().join("out/report/report.md")).unwrap();
    assert!(report.contains("no claims passed filters"), "{report}");
}

#[test]
fn config_prints_resolved_settings() {
    let dir = small_corpus();
    let printed = cdrift(dir.path(), &["--seed", "9", "config"]);
    let text = String::from_utf8_lossy(&printed.stdout);
    assert!(text.contains("seed = 9"), "{text}");
    assert!(text.contains("threshold = 0.88"), "{text}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[cluster]\nthreshhold = 0.9\n").unwrap();
    let out = cdrift(dir.path(), &["--config", "bad.toml", "config"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshhold"));
}
