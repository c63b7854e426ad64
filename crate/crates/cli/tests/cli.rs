use std::path::Path;
use std::process::Command;

fn sbmlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sbmlab"))
}

fn write_config(dir: &Path, replicas: usize) -> std::path::PathBuf {
    let path = dir.join("simulate.json");
    let text = format!(
        r#"{{"experiment": {{"kind": "simulate", "mu": [{{"x": 0.5, "mass": 1.0}}]}}, "seed": 9, "replicas": {replicas}}}"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_writes_identical_outputs_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 300);
    for sub in ["a", "b"] {
        let status = sbmlab()
            .args(["simulate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(sub))
            .args(["--threads", "2"])
            .output()
            .unwrap()
            .status;
        assert!(status.success());
    }
    for file in ["samples.csv", "report.csv", "report.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    assert!(dir.path().join("a/timing.json").exists());
}

#[test]
fn seed_override_changes_the_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 50);
    for (sub, seed) in [("a", "1"), ("b", "2")] {
        let out = dir.path().join(sub);
        assert!(sbmlab().arg("simulate").arg("--config").arg(&cfg).arg("--out").arg(&out).args(["--seed", seed]).output().unwrap().status.success());
    }
    let a = std::fs::read(dir.path().join("a/samples.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/samples.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn zero_replicas_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0);
    let out = sbmlab().arg("simulate").arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
}

#[test]
fn subcommand_must_match_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 10);
    let out = sbmlab().arg("moments").arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn verify_kernels_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = sbmlab().args(["verify", "--suite", "kernels", "--seed", "3", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
