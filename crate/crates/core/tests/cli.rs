//! Black-box checks of the installed binary: exit codes, error wording, and
//! a small end-to-end run. Exit code 0 is success, 1 an input problem, 2 a
//! runtime failure.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetriever"))
        .arg("--workdir")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY_CONFIG: &str = "\
seed = 11
[synth]
entities = 24
questions = 30
[encoder]
dim = 8
[stage1]
epochs = 1
batch_size = 16
lr = 0.3
[stage2]
epochs = 1
batch_size = 16
lr = 0.2
[stage3]
epochs = 1
batch_size = 8
[eval]
holdout = 5
";

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let help = run_in(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["synth", "pipeline", "search", "eval"] {
        assert!(text.contains(sub), "help does not mention {sub}");
    }
    assert_eq!(run_in(dir.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(run_in(dir.path(), &["search"]).status.code(), Some(1));
    assert_eq!(
        run_in(dir.path(), &["search", "--query", "x", "--group", "I_Nope"]).status.code(),
        Some(1)
    );
}

#[test]
fn missing_artifacts_exit_one_and_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["stats"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("missing artifact"), "unexpected stderr: {err}");
    assert!(err.contains("corpus.jsonl"), "unexpected stderr: {err}");
}

#[test]
fn config_problems_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = run_in(dir.path(), &["--config", missing.to_str().unwrap(), "synth"]);
    assert_eq!(out.status.code(), Some(1));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "no_such_key = true\n").unwrap();
    let out = run_in(dir.path(), &["--config", bad.to_str().unwrap(), "synth"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bad.toml"));
}

#[test]
fn held_lock_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(".lock"), "").unwrap();
    let out = run_in(dir.path(), &["synth"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("locked"), "unexpected stderr: {}", stderr(&out));
}

#[test]
fn tiny_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pipeline.toml");
    fs::write(&cfg, TINY_CONFIG).unwrap();
    let cfg = cfg.to_str().unwrap();

    let out = run_in(dir.path(), &["--config", cfg, "pipeline"]);
    assert_eq!(out.status.code(), Some(0), "pipeline failed: {}", stderr(&out));
    for artifact in
        ["corpus.jsonl", "pairs.jsonl", "vocab.tsv", "encoder.bin", "index.hgix", "metrics.json"]
    {
        assert!(dir.path().join(artifact).is_file(), "missing {artifact}");
    }
    // the lock must be gone once the run is over
    assert!(!dir.path().join(".lock").exists());

    let out = run_in(dir.path(), &["--config", cfg, "search", "--query", "zi vabeba", "--k", "3"]);
    assert_eq!(out.status.code(), Some(0), "search failed: {}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 3, "unexpected search output: {text}");

    // re-running a single step over existing artifacts succeeds
    let out = run_in(dir.path(), &["--config", cfg, "eval"]);
    assert_eq!(out.status.code(), Some(0), "eval failed: {}", stderr(&out));
}
