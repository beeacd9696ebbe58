use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chernoff"))
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = r#"
name = "small"
[grid]
lower = [-6.0]
upper = [6.0]
counts = [481]
[operator]
kind = "nisio"
controls = [{ sigma = 0.5 }, { sigma = 1.0 }]
[payoff]
kind = "capped_abs"
cap = 1.0
[run]
t = 0.5
levels = [2, 3, 4]
[reference]
kind = "oracle"
level = 10
[checks]
property_pairs = 50
"#;

#[test]
fn gheat_lipschitz_writes_four_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bundled("gheat_lipschitz.cfg");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["errors.csv", "rate_report.json", "bound_report.json", "manifest.json"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let csv = dir.path().join("errors.csv");
    let o = run(&["rates", csv.to_str().unwrap(), "--gamma", "0.25"]);
    assert_eq!(o.status.code(), Some(0));
    let fit: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(fit["verdict"], "pass");
}

#[test]
fn clt_sublinear_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bundled("clt_sublinear.cfg");
    let o = run(&["run", cfg.to_str().unwrap(), "-o", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rate_report.json")).unwrap()).unwrap();
    assert_eq!(report["rate"]["verdict"], "pass");
    assert_eq!(report["cross_check"]["pass"], true);
}

#[test]
fn malformed_config_lists_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[grid]\nlower = [0.0]\nupper = [-1.0]\ncounts = [10]\n[run]\nt = -2.0\nlevels = [3]\n").unwrap();
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    for field in ["operator: missing", "payoff: missing", "reference: missing"] {
        assert!(err.contains(field), "{err}");
    }
    std::fs::write(&cfg, SMALL.replace("t = 0.5", "t = -0.5")).unwrap();
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run.t"));
}

#[test]
fn auxiliary_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let cfg = cfg.to_str().unwrap();

    let o = run(&["check-invariants", cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["pass"], true);

    let o = run(&["bounds", cfg]);
    assert_eq!(o.status.code(), Some(0));
    let bounds: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    // No smoothness assumption: the general exponent 1/6 applies.
    assert!((bounds[0]["gamma"].as_f64().unwrap() - 1.0 / 6.0).abs() < 1e-15);

    let o = run(&["kernel-constants"]);
    assert!(stdout(&o).starts_with("k,l,value\n"));

    let o = run(&["run", cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(dir.path().join("small.out").join("manifest.json").is_file());
}

#[test]
fn coarse_oracle_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("coarse.cfg");
    std::fs::write(&cfg, SMALL.replace("level = 10", "level = 7")).unwrap();
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stdout(&o).contains("oracle uncertainty"));
}

#[test]
fn bad_worker_count_is_a_config_error() {
    let o = bin().arg("kernel-constants").env("CHERNOFF_WORKERS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    let o = bin().arg("kernel-constants").env("CHERNOFF_WORKERS", "2").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}
