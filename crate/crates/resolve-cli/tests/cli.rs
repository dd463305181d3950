//! Smoke tests for the `resolve` binary: every subcommand end-to-end at
//! tiny scale, exercising the gen-data → train → eval → plot flow on a
//! temporary directory.

use std::path::Path;
use std::process::{Command, Output};

fn resolve(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resolve"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) -> String {
    assert!(
        out.status.success(),
        "{what} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn gen_data_train_eval_plot_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let out = resolve(
        &["gen-data", "--task", "pairwise", "--variant", "a", "--out", "dump"],
        dir,
    );
    assert_ok(&out, "gen-data");
    let pairs = std::fs::read_to_string(dir.join("dump/pairs.tsv")).unwrap();
    assert_eq!(pairs.lines().count(), 64 * 64 + 1, "header + one row per pair");
    assert!(dir.join("dump/objects.tsv").exists());

    let out = resolve(
        &[
            "train",
            "--task",
            "pairwise",
            "--variant",
            "a",
            "--f32",
            "--set",
            "run_id=smoke",
            "--set",
            "train_sizes=16",
            "--set",
            "n_seeds=1",
            "--set",
            "epochs=2",
            "--set",
            "d=64",
            "--set",
            "d_model=8",
            "--set",
            "head_hidden=8",
        ],
        dir,
    );
    let stdout = assert_ok(&out, "train");
    assert!(stdout.contains("accuracy"), "aggregate line missing: {stdout}");
    let run_dir = dir.join("runs/smoke");
    assert!(run_dir.join("metrics.csv").exists());
    assert!(run_dir.join("config.txt").exists());

    // run directories are immutable: a second identical run must refuse
    let out = resolve(
        &[
            "train", "--task", "pairwise", "--variant", "a", "--set", "run_id=smoke",
        ],
        dir,
    );
    assert!(!out.status.success(), "duplicate run_id must be rejected");

    let ckpt = run_dir.join("model_size16_seed0.ckpt");
    let out = resolve(&["eval", ckpt.to_str().unwrap()], dir);
    let stdout = assert_ok(&out, "eval");
    assert!(stdout.contains("accuracy:"), "eval output: {stdout}");

    let metrics = run_dir.join("metrics.csv");
    let out = resolve(
        &["plot", metrics.to_str().unwrap(), "--out", "curves.svg"],
        dir,
    );
    assert_ok(&out, "plot");
    let svg = std::fs::read_to_string(dir.join("curves.svg")).unwrap();
    assert!(svg.contains("<svg"), "plot did not write an SVG");
}

#[test]
fn bench_and_gradcheck_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let out = resolve(&["bench", "--n", "8", "--d", "256", "--reps", "1"], tmp.path());
    let stdout = assert_ok(&out, "bench");
    assert!(stdout.contains("packed == dense: true"), "bench output: {stdout}");

    let out = resolve(&["gradcheck", "--instances", "1"], tmp.path());
    let stdout = assert_ok(&out, "gradcheck");
    assert!(stdout.contains("variant_a_end_to_end"), "gradcheck output: {stdout}");
    assert!(!stdout.contains("FAIL"), "gradcheck output: {stdout}");
}

#[test]
fn rejects_bad_arguments() {
    let tmp = tempfile::tempdir().unwrap();
    // no task/variant and no config file
    let out = resolve(&["train"], tmp.path());
    assert!(!out.status.success());
    // unknown config key
    let out = resolve(
        &["train", "--task", "pairwise", "--variant", "a", "--set", "nonsense=1"],
        tmp.path(),
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nonsense"), "error should name the bad key: {err}");
}
