//! Smoke tests for the command-line interface: argument handling, the
//! model-free run path, and trace round-tripping through the binary.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_planact"));
    // Keep the harness hermetic even if the outer environment sets a seed.
    c.env_remove("PLANACT_SEED");
    c
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("planact-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["gen-data", "pretrain", "train-coarse", "train-fine", "eval", "run", "replay"] {
        assert!(text.contains(sub), "--help is missing {sub}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let unknown_sub = bin().arg("frobnicate").output().unwrap();
    assert_eq!(unknown_sub.status.code(), Some(2));

    let unknown_flag = bin().args(["run", "--task", "clean-table", "--bogus"]).output().unwrap();
    assert_eq!(unknown_flag.status.code(), Some(2));
}

#[test]
fn bad_task_name_is_a_runtime_error() {
    let out = bin()
        .args(["run", "--oracle-planner", "--task", "no-such-task"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("no-such-task"), "stderr should name the bad task: {err}");
}

#[test]
fn oracle_run_writes_a_replayable_trace() {
    let trace = tmp("oracle-run.trace");
    let out = bin()
        .args(["run", "--oracle-planner", "--task", "place-into-bin", "--seed", "3"])
        .arg("--trace")
        .arg(&trace)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("status: DoneSuccess"), "unexpected run output: {stdout}");

    let replay = bin().arg("replay").arg("--trace").arg(&trace).output().unwrap();
    assert!(
        replay.status.success(),
        "replay failed: {}",
        String::from_utf8_lossy(&replay.stderr)
    );
    assert!(String::from_utf8(replay.stdout).unwrap().contains("replay ok"));
}

#[test]
fn seed_env_var_overrides_the_flag() {
    let a = bin()
        .args(["run", "--oracle-planner", "--task", "place-into-bin", "--seed", "3"])
        .env("PLANACT_SEED", "9")
        .output()
        .unwrap();
    assert!(a.status.success());
    let err = String::from_utf8(a.stderr).unwrap();
    assert!(err.contains("seed=9"), "expected the env seed in the log: {err}");
}

#[test]
fn config_file_sections_may_be_partial() {
    let cfg = tmp("partial.toml");
    std::fs::write(&cfg, "seed = 21\n\n[eval]\ntrials = 3\n").unwrap();
    let out = bin()
        .arg("--config")
        .arg(&cfg)
        .args(["run", "--oracle-planner", "--task", "place-into-bin"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "run with config failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("seed=21"), "expected the config seed in the log: {err}");
}
