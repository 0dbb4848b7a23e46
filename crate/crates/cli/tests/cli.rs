use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn areal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_areal")).args(args).output().unwrap()
}

fn demo(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("demo").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn demo_fit_then_summarize_and_export() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().join("fit");
    let r = areal(&["fit", "--config", s(&demo("demo.toml")), "--output", s(&dir), "--threads", "1"]);
    let stderr = String::from_utf8_lossy(&r.stderr);
    assert!(r.status.success(), "{stderr}");
    assert!(stderr.lines().all(|l| l.starts_with("level=") && l.contains(" msg=\"")), "{stderr}");
    for f in [
        "manifest.json",
        "fixed_effects.csv",
        "hyperparameters.csv",
        "random_effects.csv",
        "cells.csv",
        "trend.csv",
        "trend.svg",
        "waic.json",
        "draws.csv",
        "regions.geojson",
        "config.toml",
    ] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let cells = std::fs::read_to_string(dir.join("cells.csv")).unwrap();
    assert_eq!(
        cells.lines().next().unwrap(),
        "area_id,year,rho_mean,rho_sd,rho_q025,rho_q975,lambda_mean,exceed_prob"
    );
    assert_eq!(cells.lines().count(), 51);

    let r = areal(&["summarize", "--draws", s(&dir.join("draws.csv")), "--parameters", "woodland,Precision for Year"]);
    assert!(r.status.success());
    let table = String::from_utf8(r.stdout).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(2).unwrap().starts_with("Precision for Year,"));

    let exported = out.path().join("export");
    std::fs::create_dir_all(&exported).unwrap();
    std::fs::copy(dir.join("draws.csv"), exported.join("draws.csv")).unwrap();
    let r = areal(&["export", "--config", s(&demo("demo.toml")), "--output", s(&exported), "--threshold", "1.2"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let again = std::fs::read_to_string(exported.join("cells.csv")).unwrap();
    assert_eq!(again.lines().count(), 51);
    assert_ne!(again, cells);
}

#[test]
fn validation_errors_exit_2_without_writing() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().join("never");
    let r = areal(&[
        "fit",
        "--config",
        s(&demo("demo.toml")),
        "--panel",
        "/nonexistent/panel.csv",
        "--output",
        s(&dir),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!dir.exists());
    let stderr = String::from_utf8_lossy(&r.stderr);
    assert!(stderr.contains("level=error") && stderr.contains("does not exist"), "{stderr}");
    assert_eq!(areal(&["fit", "--bogus"]).status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible() {
    let out = tempfile::tempdir().unwrap();
    let (a, b) = (out.path().join("a"), out.path().join("b"));
    for d in [&a, &b] {
        let r = areal(&["simulate", "--config", s(&demo("simulate.toml")), "--output", s(d)]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for f in ["panel.csv", "adjacency.csv", "truth.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    // The bundled demo panel is this simulation.
    assert_eq!(std::fs::read(a.join("panel.csv")).unwrap(), std::fs::read(demo("panel.csv")).unwrap());
}
