use std::process::Command;

fn cpricing() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cpricing"))
}

#[test]
fn simulate_writes_baseline_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = cpricing()
        .args(["simulate", "--scenario", "single", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("converged: true"));
    let sim = dir.path().join("simulate");
    for f in ["baseline.json", "baseline_day.csv", "convergence.csv", "snapshot.json"] {
        assert!(sim.join(f).is_file(), "missing {f}");
    }
    let day = std::fs::read_to_string(sim.join("baseline_day.csv")).unwrap();
    assert!(day.starts_with("day,bottleneck,slot,inflow,queue,wait,toll"));
}

#[test]
fn bad_arguments_fail() {
    let unknown = cpricing().args(["simulate", "--bogus"]).output().unwrap();
    assert!(!unknown.status.success());

    let dir = tempfile::tempdir().unwrap();
    let missing = cpricing()
        .args(["simulate", "--scenario", "no_such_scenario.toml", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("does not exist"));
}
