use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn docembed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docembed"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&docembed(&["--help"])), 0);
    assert_eq!(code(&docembed(&["--version"])), 0);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = docembed(&["frobnicate"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("Usage"));
    assert_eq!(code(&docembed(&[])), 1);
}

#[test]
fn unknown_config_key_is_usage_error() {
    let out = docembed(&["show-config", "--set", "no_such_key=1"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("no_such_key"));
}

#[test]
fn env_overrides_flags_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("p.conf");
    fs::write(&conf, "steps = 11\ntop_k = 5\nbatch_size = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_docembed"))
        .args(["show-config", "--config", p(&conf), "--set", "steps=12", "--set", "top_k=6"])
        .env("DOCEMBED_STEPS", "13")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("steps = 13\n"));
    assert!(text.contains("top_k = 6\n"));
    assert!(text.contains("batch_size = 3\n"));
}

#[test]
fn eval_before_train_names_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = docembed(&["eval", "--work-dir", p(dir.path())]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("encoder.ckpt"), "{err}");
    assert!(err.contains("train"), "{err}");
}

#[test]
fn ingest_without_corpus_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = docembed(&["ingest", "--work-dir", p(dir.path()), "--set", &format!("corpus={}", p(&missing))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope.jsonl"));
}

#[test]
fn stages_run_in_order_and_rerun_identically() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path();
    assert_eq!(code(&docembed(&["synth-data", "--work-dir", p(work), "--seed", "3"])), 0);
    let conf = work.join("synth.conf");
    let stage = |name: &str| {
        let out = docembed(&[name, "--config", p(&conf), "--set", "steps=10"]);
        assert_eq!(code(&out), 0, "{name} failed: {}", stderr(&out));
    };
    for name in ["ingest", "embed-aux", "build-index", "mine-triplets", "mine-topics", "pack", "train", "eval"] {
        stage(name);
    }
    let report = fs::read_to_string(work.join("eval_report.txt")).unwrap();
    for key in ["mined_triplet_accuracy=", "cluster_ari=", "topic_probe_accuracy="] {
        assert!(report.contains(key), "{report}");
    }

    let snapshot = |names: &[&str]| -> Vec<Vec<u8>> { names.iter().map(|n| fs::read(work.join(n)).unwrap()).collect() };
    let outputs = ["documents.jsonl", "triplets.jsonl", "topics.jsonl", "vocab.txt", "packed.jsonl", "encoder.ckpt"];
    let before = snapshot(&outputs);
    for name in ["ingest", "embed-aux", "build-index", "mine-triplets", "mine-topics", "pack", "train"] {
        stage(name);
    }
    assert!(before == snapshot(&outputs), "re-running stages changed their outputs");
}

#[test]
fn synth_e2e_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = docembed(&["synth-e2e", "--work-dir", p(dir.path()), "--seed", "5", "--set", "e2e_steps=20"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let ra = fs::read_to_string(a.path().join("report.txt")).unwrap();
    let rb = fs::read_to_string(b.path().join("report.txt")).unwrap();
    assert!(ra.contains("trained.story_ari="));
    assert_eq!(ra, rb);
}
