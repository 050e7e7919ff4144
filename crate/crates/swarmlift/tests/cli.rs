//! End-to-end checks of the command-line surface: every subcommand is
//! exercised through the real binary, including the documented exit codes
//! (0 success, 2 config, 3 I/O, 4 runtime).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swarmlift"))
}

/// Overrides that shrink training to well under a second.
const TINY: &[&str] = &[
    "--override",
    "marl.envs=2",
    "--override",
    "marl.rollouts=8",
    "--override",
    "marl.total_env_steps=32",
    "--override",
    "marl.hidden=[16,16]",
    "--override",
    "marl.minibatches=2",
    "--override",
    "env.episode_duration=0.5",
];

fn tiny_train(out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("train")
        .args(["--out", out.to_str().unwrap(), "--seed", "3", "--quiet"])
        .args(TINY)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn train_writes_manifest_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_train(dir.path(), &[]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let manifest: toml::Table = std::fs::read_to_string(dir.path().join("manifest.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(manifest["subcommand"].as_str().unwrap(), "train");
    assert_eq!(manifest["seed"].as_str().unwrap(), "3");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 16);

    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("iteration,env_steps"));
    assert_eq!(metrics.lines().count(), 3, "header + two iterations");
    assert!(dir.path().join("checkpoint_final.ckpt").exists());
}

#[test]
fn override_is_reflected_in_the_run_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_train(dir.path(), &["--override", "marl.envs=8"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let manifest: toml::Table = std::fs::read_to_string(dir.path().join("manifest.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(manifest["config"]["marl"]["envs"].as_integer().unwrap(), 8);
}

#[test]
fn missing_config_file_exits_with_config_code() {
    let out = bin()
        .args(["train", "--config", "/definitely/not/here.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("cannot read config"));
}

#[test]
fn unknown_override_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_train(dir.path(), &["--override", "marl.bogus=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("unknown field"));
}

#[test]
fn eval_runs_the_default_scenario_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let train = tiny_train(dir.path(), &[]);
    assert!(train.status.success(), "{}", stderr_of(&train));

    let eval_dir = dir.path().join("eval");
    let ckpt = dir.path().join("checkpoint_final.ckpt");
    let out = bin()
        .arg("eval")
        .args(["--checkpoint", ckpt.to_str().unwrap()])
        .args(["--out", eval_dir.to_str().unwrap()])
        .args(["--override", "eval.settle=0.2", "--override", "eval.duration=0.5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    // Default scenario is the full-pose setpoint step; both the summary
    // metrics and the per-run time series must exist.
    assert!(stdout_of(&out).contains("setpoint_step"));
    assert!(eval_dir.join("metrics.csv").exists());
    assert!(eval_dir.join("series_0.csv").exists());
}

#[test]
fn eval_rejects_a_checkpoint_config_team_size_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let train = tiny_train(dir.path(), &[]);
    assert!(train.status.success(), "{}", stderr_of(&train));

    let ckpt = dir.path().join("checkpoint_final.ckpt");
    let out = bin()
        .arg("eval")
        .args(["--checkpoint", ckpt.to_str().unwrap()])
        .args(["--override", "system.n_mavs=4"])
        .args(["--out", dir.path().join("eval").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("mismatch"));
}

#[test]
fn inspect_reports_dimensions_and_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let train = tiny_train(dir.path(), &[]);
    assert!(train.status.success(), "{}", stderr_of(&train));

    let ckpt = dir.path().join("checkpoint_final.ckpt");
    let out = bin().arg("inspect").arg(&ckpt).output().unwrap();
    assert!(out.status.success());
    let text = stdout_of(&out);
    // Three MAVs with three stacked partial frames observe 135 dims.
    assert!(text.contains("135 dims per agent"), "{text}");
    assert!(text.contains("135 -> 16 -> 16 -> 6"), "{text}");
    assert!(text.contains("config hash"), "{text}");

    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = bin().arg("inspect").arg(&garbage).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr_of(&out).contains("checkpoint"));
}

#[test]
fn export_merges_runs_and_an_empty_dir_says_so() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("runs");
    let train = tiny_train(&run.join("a"), &[]);
    assert!(train.status.success(), "{}", stderr_of(&train));

    let out = bin().arg("export").arg(&run).output().unwrap();
    assert!(out.status.success());
    let summary = run.join("export/training_summary.csv");
    assert!(summary.exists());
    let first = std::fs::read_to_string(&summary).unwrap();
    assert!(first.lines().count() == 2, "{first}");

    // Re-export is idempotent even though the export dir now exists.
    let out = bin().arg("export").arg(&run).output().unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&summary).unwrap(), first);

    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = bin().arg("export").arg(&empty).output().unwrap();
    assert!(out.status.success());
    assert!(stdout_of(&out).contains("nothing to export"));
}

#[test]
fn sample_configs_parse_and_train() {
    for name in ["configs/desk.toml", "configs/paper.toml"] {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(name);
        let dir = tempfile::tempdir().unwrap();
        let out = tiny_train(dir.path(), &["--config", path.to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", stderr_of(&out));
    }
}
