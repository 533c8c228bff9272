//! Command-surface tests: exit codes, artifact layout, overrides, and
//! stream determinism, driven through the actual binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tandem"))
}

fn small_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(
        &path,
        format!(
            r#"
seed = 11
metric_flush_interval = 5

[world]
num_concepts = 2
num_attributes = 2
values_per_attribute = 3
text_len = 2
grid_positions = 8
codebook_size = 4
text_vocab = 6
human_fraction = 0.5
candidates_per_task = 3
seed = 21

[policy]
init_scale = 0.1

[hyper]
group_size = 3
steps = 24
t_total = 4
{extra}
"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn missing_config_exits_with_usage_code() {
    let out = bin().args(["train", "--config", "/nonexistent/nope.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("config not found"), "stderr: {stderr}");
}

#[test]
fn invalid_config_field_exits_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), "bad.toml", "");
    let out = bin()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--set", "world.grid_positions=9"]) // not divisible by A=2
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not divisible"));
}

#[test]
fn zero_steps_run_succeeds_with_empty_stream() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), "zero.toml", "");
    let out_dir = tmp.path().join("out");
    let out = bin()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--set", "hyper.steps=0"])
        .args(["--set", format!("output_dir={:?}", out_dir.display()).as_str()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(out_dir.join("metrics.jsonl")).unwrap(), "");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 0);
}

#[test]
fn run_artifacts_are_complete_and_replays_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), "run.toml", "inner_epochs = 2\n[dgs]\nmax_attempts_per_group = 12\n");
    let run = |out_dir: &Path| {
        let out = bin()
            .args(["train", "--config"])
            .arg(&config)
            .args(["--set", "checkpoint_interval=10"])
            .args(["--set", format!("output_dir={:?}", out_dir.display()).as_str()])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    };
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    run(&dir_a);
    run(&dir_b);

    for name in ["concepts.jsonl", "metrics.jsonl", "policy-final.ckpt"] {
        let a = fs::read(dir_a.join(name)).unwrap();
        let b = fs::read(dir_b.join(name)).unwrap();
        assert!(!a.is_empty(), "{name} is empty");
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    // The config echo differs only in the injected output_dir.
    let echo = |dir: &Path| {
        let mut c: tandem_core::RunConfig = toml::from_str(
            &fs::read_to_string(dir.join("config.resolved.toml")).unwrap(),
        )
        .unwrap();
        c.output_dir = None;
        c
    };
    assert_eq!(echo(&dir_a), echo(&dir_b));
    assert!(dir_a.join("policy-step-000010.ckpt").exists());
    assert!(dir_a.join("policy-step-000020.ckpt").exists());
    assert_eq!(fs::read_to_string(dir_a.join("concepts.jsonl")).unwrap().lines().count(), 2);
    assert_eq!(fs::read_to_string(dir_a.join("metrics.jsonl")).unwrap().lines().count(), 24);

    // The checkpoint is loadable and the final record parses.
    let file = fs::File::open(dir_a.join("policy-final.ckpt")).unwrap();
    tandem_core::Policy::read_checkpoint(std::io::BufReader::new(file)).unwrap();
}

#[test]
fn verify_mills_passes_and_reports_the_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let csv_path = tmp.path().join("mills.csv");
    let out = bin()
        .args(["verify", "--suite", "mills", "--out"])
        .arg(&csv_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(&csv_path).unwrap();
    let lambda0 = csv
        .lines()
        .find(|l| l.contains("lambda(0)"))
        .expect("lambda(0) row present");
    let value: f64 = lambda0.split(',').nth(2).unwrap().parse().unwrap();
    assert!((value - 0.7978845608).abs() < 1e-4);
}

#[test]
fn verify_rejects_unknown_suites_listing_options() {
    let out = bin().args(["verify", "--suite", "bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("theorem1") && stderr.contains("stability"), "stderr: {stderr}");
}

#[test]
fn injected_failure_flips_the_exit_code_and_flags_the_row() {
    let out = bin()
        .args(["verify", "--suite", "mills", "--inject-failure"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("injected,forced-failure") && stdout.contains("false"));
}

#[test]
fn compare_of_identical_configs_reports_unit_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), "same.toml", "");
    let csv = tmp.path().join("convergence.csv");
    let out = bin()
        .args(["compare", "--a"])
        .arg(&config)
        .arg("--b")
        .arg(&config)
        .args(["--target", "0.05", "--out"])
        .arg(&csv)
        .env("TANDEM_OUTPUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ratio a/b = 1.0000"), "stdout: {stdout}");
    assert!(fs::read_to_string(&csv).unwrap().lines().count() > 20);
}

#[test]
fn compare_reports_unreached_targets_without_failing() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), "unreach.toml", "");
    let out = bin()
        .args(["compare", "--a"])
        .arg(&config)
        .arg("--b")
        .arg(&config)
        .args(["--target", "5.0"])
        .env("TANDEM_OUTPUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("unreached"));
}

#[test]
fn compare_rejects_mismatched_worlds() {
    let tmp = tempfile::tempdir().unwrap();
    let a = small_config(tmp.path(), "a.toml", "");
    let b_path = tmp.path().join("b.toml");
    let mut text = fs::read_to_string(&a).unwrap();
    text = text.replace("codebook_size = 4", "codebook_size = 8");
    fs::write(&b_path, text).unwrap();
    let out = bin()
        .args(["compare", "--a"])
        .arg(&a)
        .arg("--b")
        .arg(&b_path)
        .args(["--target", "0.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("share the same [world]"));
}
