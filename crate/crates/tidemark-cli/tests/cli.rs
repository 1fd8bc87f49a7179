//! Contract tests for the command-line surface: every verb has --help,
//! exit codes distinguish usage from runtime failures, commands are
//! deterministic under --seed, and nothing is written outside the declared
//! output directory.

use std::path::Path;
use std::process::{Command, Output};

fn tidemark() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tidemark"));
    // A pristine working directory per invocation makes stray writes visible.
    let scratch = Box::leak(Box::new(tempfile::tempdir().unwrap()));
    cmd.current_dir(scratch.path());
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn tidemark")
}

fn assert_code(out: &Output, want: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "{what}: expected exit {want}, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

const VERBS: &[&str] = &[
    "make-corpus",
    "train",
    "evaluate",
    "grad-check",
    "codec-probe",
    "report",
];

#[test]
fn every_verb_offers_help() {
    let out = run(tidemark().arg("--help"));
    assert_code(&out, 0, "top-level --help");
    for verb in VERBS {
        let out = run(tidemark().args([verb, "--help"]));
        assert_code(&out, 0, &format!("{verb} --help"));
        assert!(
            String::from_utf8_lossy(&out.stdout).contains("Usage:"),
            "{verb} --help should print usage"
        );
    }
}

#[test]
fn usage_errors_exit_one() {
    // Missing required arguments.
    let out = run(tidemark().arg("train"));
    assert_code(&out, 1, "train with no arguments");
    // Unknown flag.
    let out = run(tidemark().args(["grad-check", "--bogus"]));
    assert_code(&out, 1, "unknown flag");
    // Unknown codec name is a configuration error.
    let out = run(tidemark().args(["codec-probe", "--codec", "wavpack"]));
    assert_code(&out, 1, "unknown codec");
    // Unknown override key.
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out = run(tidemark().args([
        "make-corpus",
        "--out-dir",
        corpus.to_str().unwrap(),
        "--count",
        "2",
    ]));
    assert_code(&out, 0, "make-corpus");
    let out = run(tidemark().args([
        "train",
        "--manifest",
        corpus.join("train_manifest.json").to_str().unwrap(),
        "--out-dir",
        dir.path().join("run").to_str().unwrap(),
        "--override",
        "training.warp_factor=3",
    ]));
    assert_code(&out, 1, "unknown override key");
}

#[test]
fn runtime_failures_exit_two() {
    let out = run(tidemark().args([
        "evaluate",
        "--checkpoint",
        "/nonexistent/checkpoint.tmrk",
        "--manifest",
        "/nonexistent/manifest.json",
        "--out-dir",
        "/tmp/never-created-by-this-test",
    ]));
    assert_code(&out, 2, "evaluate with missing checkpoint");
}

#[test]
fn make_corpus_is_deterministic_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let out = run(tidemark().args([
            "make-corpus",
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--count",
            "3",
            "--seed",
            "9",
        ]));
        assert_code(&out, 0, "make-corpus");
    }
    for name in ["train_0000.wav", "train_0001.wav", "train_0002.wav"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name} differs between identically seeded runs"
        );
    }
}

fn tiny_train(corpus_manifest: &Path, out_dir: &Path, extra: &[&str]) -> Output {
    let mut cmd = tidemark();
    cmd.args([
        "train",
        "--manifest",
        corpus_manifest.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--seed",
        "3",
        "--override",
        "training.epochs=1",
        "--override",
        "training.steps_per_epoch=2",
        "--override",
        "training.batch_size=2",
        "--override",
        "training.crop_len=4096",
        "--override",
        "model.gen_width=16",
        "--override",
        "model.detector.widths=[4,8,8]",
        "--override",
        "model.mel.n_fft=512",
        "--override",
        "model.mel.win_length=512",
        "--override",
        "model.mel.n_mels=32",
    ]);
    cmd.args(extra);
    run(&mut cmd)
}

#[test]
fn train_and_evaluate_are_deterministic_and_self_contained() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out = run(tidemark().args([
        "make-corpus",
        "--out-dir",
        corpus.to_str().unwrap(),
        "--count",
        "4",
        "--seed",
        "21",
    ]));
    assert_code(&out, 0, "make-corpus");
    let manifest = corpus.join("train_manifest.json");

    let corpus_before = dir_listing(&corpus);
    let (run_a, run_b) = (dir.path().join("run_a"), dir.path().join("run_b"));
    for out_dir in [&run_a, &run_b] {
        let out = tiny_train(&manifest, out_dir, &[]);
        assert_code(&out, 0, "train");
    }
    assert_eq!(
        std::fs::read(run_a.join("metrics.jsonl")).unwrap(),
        std::fs::read(run_b.join("metrics.jsonl")).unwrap(),
        "identically seeded training produced different metrics logs"
    );
    assert_eq!(
        corpus_before,
        dir_listing(&corpus),
        "training must not touch the corpus directory"
    );

    let (eval_a, eval_b) = (dir.path().join("eval_a"), dir.path().join("eval_b"));
    for out_dir in [&eval_a, &eval_b] {
        let out = run(tidemark().args([
            "evaluate",
            "--checkpoint",
            run_a.join("checkpoint.tmrk").to_str().unwrap(),
            "--manifest",
            manifest.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--repetitions",
            "2",
            "--crop-len",
            "2048",
            "--seed",
            "7",
            "--codec",
            "none",
        ]));
        assert_code(&out, 0, "evaluate");
    }
    for name in ["report.csv", "report.json", "scores.json"] {
        assert_eq!(
            std::fs::read(eval_a.join(name)).unwrap(),
            std::fs::read(eval_b.join(name)).unwrap(),
            "{name} differs between identically seeded evaluations"
        );
    }

    // Re-rendering from stored scores reproduces the report bit-exactly.
    let rerender = dir.path().join("rerender");
    let out = run(tidemark().args([
        "report",
        "--scores",
        eval_a.join("scores.json").to_str().unwrap(),
        "--out-dir",
        rerender.to_str().unwrap(),
    ]));
    assert_code(&out, 0, "report");
    for name in ["report.csv", "report.json"] {
        assert_eq!(
            std::fs::read(eval_a.join(name)).unwrap(),
            std::fs::read(rerender.join(name)).unwrap(),
            "{name} differs after re-rendering from raw scores"
        );
    }
}

#[test]
fn grad_check_passes() {
    let out = run(tidemark().args(["grad-check", "--seed", "5"]));
    assert_code(&out, 0, "grad-check");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("ste_identity_gradient_deviation=0.0"),
        "straight-through check line missing: {stdout}"
    );
}

#[test]
fn commands_leave_the_working_directory_alone() {
    let scratch = tempfile::tempdir().unwrap();
    let corpus = scratch.path().join("corpus");
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tidemark"));
    let cwd = tempfile::tempdir().unwrap();
    cmd.current_dir(cwd.path());
    cmd.args([
        "make-corpus",
        "--out-dir",
        corpus.to_str().unwrap(),
        "--count",
        "2",
    ]);
    assert_code(&run(&mut cmd), 0, "make-corpus");
    assert_eq!(
        dir_listing(cwd.path()),
        Vec::<String>::new(),
        "make-corpus wrote into the working directory"
    );
}

fn dir_listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let len = e.metadata().map(|m| m.len()).unwrap_or(0);
            format!("{} {len}", e.file_name().to_string_lossy())
        })
        .collect();
    names.sort();
    names
}
