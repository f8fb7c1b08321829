use std::path::Path;
use std::process::{Command, Output};

use clusterfuse::config;
use clusterfuse_core::pipeline::ScenarioConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clusterfuse"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn shipped_scenario() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios/default.toml")
        .display()
        .to_string()
}

#[test]
fn shipped_scenario_is_the_builtin_one() {
    let loaded = config::load(Path::new(&shipped_scenario())).unwrap();
    assert_eq!(loaded, ScenarioConfig::builtin());
}

#[test]
fn simulate_writes_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.csv");
    let o = run(&[
        "--config",
        &shipped_scenario(),
        "--out",
        out.to_str().unwrap(),
        "simulate",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header: Vec<_> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 3 + 3 * 3 + 3);
    assert_eq!(header[0], "k");
    assert_eq!(*header.last().unwrap(), "fused_trace");
    assert_eq!(lines.count(), 100);
}

#[test]
fn seed_flag_changes_output_and_json_parses() {
    let a = run(&["--seed", "1", "simulate"]);
    let b = run(&["--seed", "2", "simulate"]);
    assert!(a.status.success() && b.status.success());
    assert_ne!(a.stdout, b.stdout);

    let j = run(&["--seed", "1", "--format", "json", "simulate"]);
    let v: serde_json::Value = serde_json::from_slice(&j.stdout).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 100);
    assert_eq!(rows[0]["k"], 1);
}

#[test]
fn rmse_has_a_column_set_per_method() {
    let o = run(&["rmse", "--runs", "3", "--methods", "smf,sk"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "k,smf_rmse_cluster_1,smf_rmse_cluster_2,smf_rmse_cluster_3,smf_rmse_fused,\
         sk_rmse_cluster_1,sk_rmse_cluster_2,sk_rmse_cluster_3,sk_rmse_fused"
    );
    assert_eq!(text.lines().count(), 101);
}

#[test]
fn complexity_reports_hand_values_and_crossover() {
    let o = run(&["complexity"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l == "smf,2,1,10,1,125"));
    assert!(text.lines().any(|l| l == "bsf,2,1,1,3,216"));
    assert!(text.lines().any(|l| l == "ssf,2,1,1,3,208"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("from 3"));
}

#[test]
fn missing_config_exits_1_naming_the_path() {
    let o = run(&["--config", "/definitely/not/here.toml", "simulate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/definitely/not/here.toml"));
}

#[test]
fn invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[scenario]\nhorizon = 0\n").unwrap();
    let o = run(&["--config", path.to_str().unwrap(), "simulate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon"));
}

#[test]
fn numerical_failure_exits_2() {
    // the transition matrix overflows
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("degenerate.toml");
    std::fs::write(&path, "[scenario]\nhorizon = 3\nh = 1e200\n").unwrap();
    let o = run(&["--config", path.to_str().unwrap(), "simulate"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn equivalence_reports_every_check() {
    let o = run(&["equivalence", "--measurement-cases", "50", "--state-cases", "20"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<_> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 1 + 9 + 4);
    let failing: Vec<_> = rows.iter().filter(|r| r.ends_with(",false")).collect();
    // exit 3 exactly when some check fails
    assert_eq!(o.status.code() == Some(3), !failing.is_empty());
    for r in &rows {
        if !r.starts_with("ssf_vs_bsf") {
            assert!(r.ends_with(",true"), "{r}");
        }
    }
}
