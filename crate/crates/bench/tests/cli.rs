use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

const CONFIG: &str = r#"
name = "cli"
n = 200
runs = 3
seed = 4

[environment]
kind = "k_armed"
K = 3
gap = 0.2
sigma = 1.0

[[algorithm]]
algorithm = "code"
delta = 0.05

[[algorithm]]
algorithm = "linucb"
lambda = 1.0
"#;

#[test]
fn run_then_plot_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cli.toml"), CONFIG).unwrap();
    let out = bench(&["run", "--config", "cli.toml", "--out", "res", "--runs", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("CODE") && stdout.contains("LinUCB"), "{stdout}");
    for f in ["raw.csv", "aggregate.csv", "regret.svg", "interpretability.svg"] {
        assert!(dir.path().join("res").join(f).exists(), "{f} missing");
    }
    let raw = std::fs::read_to_string(dir.path().join("res/raw.csv")).unwrap();
    assert!(raw.lines().skip(1).all(|l| l.split(',').nth(1).is_some_and(|r| r == "0" || r == "1")));

    let out = bench(&["plot", "--in", "res"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), CONFIG.replace("n = 200", "n = 0")).unwrap();
    let out = bench(&["run", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn missing_files_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(&["run", "--config", "nope.toml"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let out = bench(&["plot", "--in", "nothing_here"], dir.path());
    assert_eq!(out.status.code(), Some(3));

    std::fs::create_dir(dir.path().join("res")).unwrap();
    std::fs::write(dir.path().join("res/raw.csv"), "algorithm,run,round,regret_cum,q_cum\nCODE,0,x,1,1\n").unwrap();
    let out = bench(&["plot", "--in", "res"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn list_configs_reads_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.toml"), CONFIG).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bench"))
        .arg("list-configs")
        .env("BENCH_CONFIG_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("a.toml"));
}
