use std::path::Path;
use std::process::{Command, Output};

fn rwre(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_rwre"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(["--workers", "2"])
        .args(args)
        .output()
        .unwrap()
}

const SMALL: &str = r#"
schema_version = 1
seed = 3

[run]
sizes = [64]
environments = 1
replicas = 40
theory_sites = 2000
"#;

#[test]
fn theory_on_constant_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{SMALL}\n[env]\nkind = \"finite-discrete\"\natoms = [0.75]\nweights = [1.0]\n");
    let out = rwre(dir.path(), &config, &["theory"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let speed: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("v_P"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((speed - 0.5).abs() < 1e-12);
    for f in ["theory.json", "psi.csv", "gamma.csv", "manifest.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn env_and_simulate_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    assert!(rwre(dir.path(), SMALL, &["env"]).status.success());
    let out = rwre(dir.path(), SMALL, &["simulate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    assert!(o.join("env_0.bin").exists());
    assert!(o.join("moments.json").exists());
    let rows = std::fs::read_to_string(o.join("replicas_env_0_n64.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 40 * 3);
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = rwre(dir.path(), "schema_version = 1\n[run]\nsizes = []\n", &["theory"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn verify_subset_reports_and_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let config = "schema_version = 1\n[verify]\npreset = \"smoke\"\nchecks = [\"AC-2\", \"AC-10\"]\n";
    let out = rwre(dir.path(), config, &["verify"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("AC-")).count(), 2, "{stdout}");
    assert_eq!(out.status.success(), stdout.contains("overall PASS"));
    assert!(dir.path().join("out/verify_report.json").exists());
}
