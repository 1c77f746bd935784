//! Black-box tests of the `allencahn` binary: exit codes, output files,
//! and byte-level determinism of the CSV artifacts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_allencahn"))
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

const SPATIAL_TINY: &str = r#"
levels = [2, 4]
reference_n = 8
t_horizon = 0.02
steps = 2
m_paths = 2
p_list = [2.0]
q_list = [2.0]
"#;

#[test]
fn simulate_writes_snapshots_mesh_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "sim.toml",
        r#"
        n = 2
        steps = 2
        t_horizon = 0.01
        "#,
    );
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
        "--dump-mesh",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    for j in 0..=2 {
        let snap = out_dir.join(format!("snapshot-p0-j{j:06}.csv"));
        let text = fs::read_to_string(&snap).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("# n=2,"), "snapshot header: {first}");
        assert_eq!(text.lines().count(), 2, "one interior dof on n=2");
    }
    assert!(out_dir.join("mesh.txt").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 12);
    assert_eq!(summary["paths"].as_array().unwrap().len(), 1);
}

#[test]
fn spatial_study_writes_artifacts_and_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "study.toml", SPATIAL_TINY);
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = tmp.path().join(name);
        let out = run(&[
            "spatial-study",
            "--config",
            &cfg,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
        for f in ["errors.csv", "report.json", "rates.svg"] {
            assert!(out_dir.join(f).exists(), "{f} missing");
        }
        csvs.push(fs::read(out_dir.join("errors.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1], "errors.csv differs between identical runs");
    let head = String::from_utf8(csvs[0].clone()).unwrap();
    assert!(head.starts_with("level,h,tau,p,q,error,ci_low,ci_high\n"));
}

#[test]
fn seed_override_changes_the_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "study.toml", SPATIAL_TINY);
    let mut csvs = Vec::new();
    for (name, seed) in [("s1", "1"), ("s2", "2")] {
        let out_dir = tmp.path().join(name);
        let out = run(&[
            "spatial-study",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
        csvs.push(fs::read(out_dir.join("errors.csv")).unwrap());
    }
    assert_ne!(csvs[0], csvs[1], "different seeds gave identical errors");
}

#[test]
fn unmet_acceptance_threshold_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "study.toml",
        &format!("{SPATIAL_TINY}\n[acceptance]\nmin_slope = 1.9\n"),
    );
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "spatial-study",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    // Two levels cannot produce a slope fit, so the threshold is unmet.
    assert_eq!(code(&out), 1, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("errors.csv").exists(), "artifacts still written");
}

#[test]
fn temporal_study_with_linear_oracle_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "temporal.toml",
        r#"
        n0 = 2
        levels = [1, 2, 3]
        ref_level = 4
        t_horizon = 1e-4
        m_paths = 4
        p_list = [2.0]
        q_list = [2.0]
        reference = "exact-linear"
        [model]
        cubic = false
        "#,
    );
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "temporal-study",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["kind"], "temporal");
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn probe_writes_pinned_csv_header() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "probe.toml",
        r#"
        n = 2
        j_list = [4, 8]
        p = 4.0
        q = 4.0
        m_paths = 4
        t_horizon = 0.25
        "#,
    );
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "probe-regularity",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("probe.csv")).unwrap();
    assert!(csv.starts_with("J,n,p,q,lhs_estimate,rhs_norm,ratio,M_paths,ci_low,ci_high\n"));
    assert_eq!(csv.lines().count(), 3, "one row per J");
}

#[test]
fn bad_configs_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    let out = run(&["simulate", "--config", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    let cfg = write_cfg(tmp.path(), "bad.toml", "n = 2\nsteps = 2\nbogus_knob = 1\n");
    let out = run(&["simulate", "--config", &cfg]);
    assert_eq!(code(&out), 2, "unknown keys must be rejected");
}
