use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use contact_hj::reproduce::Example;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_contact-hj"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_in(cmd: &str, cfg: &str, out: &Path) -> Output {
    let c = config(cfg);
    run(&[
        cmd,
        "--config",
        c.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn every_example_reproduces_within_budget() {
    let tmp = tempfile::tempdir().unwrap();
    for ex in Example::ALL {
        let out = tmp.path().join(ex.name());
        let start = Instant::now();
        let o = run(&[
            "reproduce-example",
            ex.name(),
            "--out",
            out.to_str().unwrap(),
        ]);
        let secs = start.elapsed().as_secs_f64();
        assert_eq!(
            o.status.code(),
            Some(0),
            "{ex}: {}",
            String::from_utf8_lossy(&o.stdout)
        );
        assert!(secs < ex.budget_secs(), "{ex} took {secs:.1}s");
        let summary: serde_json::Value =
            serde_json::from_slice(&read(out.join("summary.json"))).unwrap();
        assert_eq!(summary["pass"], true);
        assert!(!out.join(".contact-hj.lock").exists());
    }
}

#[test]
fn shipped_configs_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (
            "solve-ergodic",
            "ergodic_strict_monotone.json",
            &["u.csv", "trace.csv", "summary.json"][..],
        ),
        (
            "solve-viscous",
            "viscous_prototype.json",
            &["u.csv", "summary.json", "plot.gp"][..],
        ),
        (
            "adjoint-measure",
            "adjoint_prototype.json",
            &["measure.csv", "trace.csv", "summary.json"][..],
        ),
        (
            "uniqueness-set",
            "uniqueness_prototype.json",
            &["u0.csv", "mask.csv", "measure.csv", "summary.json"][..],
        ),
        ("certify", "certify_classical.json", &["summary.json"][..]),
    ];
    for (cmd, cfg, files) in cases {
        let out = tmp.path().join(cmd);
        let o = run_in(cmd, cfg, &out);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{cmd}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        for f in files {
            assert!(out.join(f).is_file(), "{cmd} did not write {f}");
        }
    }
}

#[test]
fn outputs_are_bit_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    for (cmd, cfg, files) in [
        (
            "solve-ergodic",
            "ergodic_strict_monotone.json",
            &["u.csv", "summary.json"][..],
        ),
        (
            "adjoint-measure",
            "adjoint_prototype.json",
            &["measure.csv", "summary.json"][..],
        ),
    ] {
        let (a, b) = (
            tmp.path().join(format!("{cmd}-a")),
            tmp.path().join(format!("{cmd}-b")),
        );
        assert!(run_in(cmd, cfg, &a).status.success());
        assert!(run_in(cmd, cfg, &b).status.success());
        for f in files {
            assert_eq!(read(a.join(f)), read(b.join(f)), "{cmd}: {f} differs");
        }
    }
}

#[test]
fn seed_selects_adjoint_sources() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config("adjoint_prototype.json");
    let summary = |seed: &str| {
        let out = tmp.path().join(seed);
        let o = run(&[
            "adjoint-measure",
            "--config",
            c.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert!(o.status.success());
        read(out.join("summary.json"))
    };
    assert_ne!(summary("1"), summary("2"));
}

#[test]
fn locked_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join(".contact-hj.lock"), "").unwrap();
    let o = run(&[
        "reproduce-example",
        "ex4",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("locked"));
    assert!(!tmp.path().join("summary.json").exists());
}

#[test]
fn usage_errors_exit_two() {
    let o = run(&["solve-everything"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "reproduce-example",
        "ex9",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("strict-monotone"));
}

#[test]
fn config_errors_exit_two_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(
        &cfg,
        "{\n  \"model\": {\"family\": \"prototype\", \"potential\": \"zero\"},\n  \"solver\": {\"dampng\": 0.5},\n  \"grid\": {\"dim\": 1, \"n\": 64}\n}\n",
    )
    .unwrap();
    let o = run(&[
        "solve-ergodic",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("did you mean `damping`"), "{err}");

    let o = run(&[
        "certify",
        "--config",
        tmp.path().join("missing.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_certificate_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"family": "classical", "potential": "zero"}, "grid": {"dim": 1, "n": 64},
            "initial": {"expr": "sin(2*pi*x)"}, "solver": {"certify_tol": 1e-3}}"#,
    )
    .unwrap();
    let out = tmp.path().join("o");
    let o = run(&[
        "certify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let summary: serde_json::Value =
        serde_json::from_slice(&read(out.join("summary.json"))).unwrap();
    assert_eq!(summary["pass"], false);
}
