use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tofner::corpus::io::read_mrc_jsonl;
use tofner::pipeline::{PipelineTrace, StageName};

fn tofner(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tofner"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic suite plus a run.toml shrunk for speed.
fn suite(dir: &Path) {
    let out = tofner(&["make-synthetic", "--out", p(dir), "--sentences", "20"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut toml = fs::read_to_string(dir.join("run.toml")).unwrap();
    toml.push_str("d_model = 16\nlayers = 1\nff_width = 32\nmlm_epochs = 1\nmrc_epochs = 1\nner_epochs = 1\n");
    fs::write(dir.join("run.toml"), toml).unwrap();
}

fn first_sentences(src: &Path, dst: &Path, n: usize) {
    let text = fs::read_to_string(src).unwrap();
    let blocks: Vec<&str> = text.split("\n\n").filter(|b| !b.trim().is_empty()).take(n).collect();
    assert_eq!(blocks.len(), n);
    fs::write(dst, blocks.join("\n\n") + "\n").unwrap();
}

fn trace(run: &Path) -> PipelineTrace {
    serde_json::from_str(&fs::read_to_string(run.join("trace.json")).unwrap()).unwrap()
}

#[test]
fn ner2mrc_emits_one_record_per_type() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    let ten = dir.path().join("ten.conll");
    first_sentences(&dir.path().join("s_ner.conll"), &ten, 10);
    let mrc = dir.path().join("ten.jsonl");
    let out = tofner(&["convert", "ner2mrc", "--input", p(&ten), "--output", p(&mrc)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("40 MRC examples"), "{}", stdout(&out));
    let records = read_mrc_jsonl(&fs::read_to_string(&mrc).unwrap()).unwrap();
    assert_eq!(records.len(), 40);
    assert!(records.iter().any(|r| !r.answers.is_empty()));
}

#[test]
fn stripped_input_gives_empty_answers() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    let ten = dir.path().join("ten.conll");
    first_sentences(&dir.path().join("s_ner.conll"), &ten, 10);
    let stripped = dir.path().join("stripped.conll");
    let mrc = dir.path().join("stripped.jsonl");
    assert!(tofner(&["convert", "strip-labels", "--input", p(&ten), "--output", p(&stripped)])
        .status
        .success());
    assert!(tofner(&["convert", "ner2mrc", "--input", p(&stripped), "--output", p(&mrc)])
        .status
        .success());
    let records = read_mrc_jsonl(&fs::read_to_string(&mrc).unwrap()).unwrap();
    assert_eq!(records.len(), 40);
    assert!(records.iter().all(|r| r.answers.is_empty()));
}

#[test]
fn bad_squad_offset_names_the_example() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("squad.json");
    fs::write(
        &input,
        r#"{"data":[{"paragraphs":[{"context":"Paris is in France","qas":[
            {"id":"good-1","question":"where","answers":[{"text":"France","answer_start":12}]},
            {"id":"broken-7","question":"what","answers":[{"text":"Paris","answer_start":4}]}
        ]}]}]}"#,
    )
    .unwrap();
    let output = dir.path().join("out.jsonl");
    let out = tofner(&["convert", "normalize-mrc", "--input", p(&input), "--output", p(&output)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("broken-7"), "{}", stderr(&out));
    assert!(!output.exists());
}

#[test]
fn eval_on_identical_files_prints_perfect_f1() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    let gold = dir.path().join("t_test.conll");
    let out = tofner(&["eval", "--gold", p(&gold), "--pred", p(&gold)]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("1.0000    1.0000    1.0000"), "{text}");

    let out = tofner(&["eval", "--gold", p(&gold), "--pred", p(&gold), "--json"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["runs"][0]["f1"], 1.0);
}

#[test]
fn eval_exits_zero_on_a_poor_score() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    let gold = dir.path().join("t_test.conll");
    let empty = dir.path().join("empty.conll");
    assert!(tofner(&["convert", "strip-labels", "--input", p(&gold), "--output", p(&empty)])
        .status
        .success());
    let out = tofner(&["eval", "--gold", p(&gold), "--pred", p(&empty), "--json"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["runs"][0]["f1"], 0.0);
}

#[test]
fn baseline_training_runs_three_stages() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    let run = dir.path().join("baseline");
    let out = tofner(&[
        "train",
        "--config",
        p(&dir.path().join("run.toml")),
        "--mode",
        "ADAPTABERT_BASELINE",
        "--out",
        p(&run),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("run complete"));
    let t = trace(&run);
    assert!(t.complete);
    assert_eq!(t.stage_names(), vec![StageName::Mlm, StageName::Ner, StageName::Predict]);
    assert!(run.join("predictions.conll").is_file());
    assert!(run.join("config.json").is_file());
}

#[test]
fn two_iterations_show_two_loops() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    let run = dir.path().join("tof");
    let out = tofner(&[
        "train",
        "--config",
        p(&dir.path().join("run.toml")),
        "--iterations",
        "2",
        "--out",
        p(&run),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let names = trace(&run).stage_names();
    let loops: Vec<_> = names
        .iter()
        .filter(|s| matches!(s, StageName::NerLoop(_)))
        .collect();
    assert_eq!(loops, vec![&StageName::NerLoop(1), &StageName::NerLoop(2)]);
    assert!(stdout(&out).contains("MRC_LOOP_2"));
}

#[test]
fn env_override_reaches_the_run() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    let run = dir.path().join("env");
    let out = Command::new(env!("CARGO_BIN_EXE_tofner"))
        .args(["train", "--config", p(&dir.path().join("run.toml")), "--out", p(&run)])
        .env("RUST_LOG", "warn")
        .env("TOF_MODE", "TOF_MRC_ONLY")
        .env("TOF_SEED", "77")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let t = trace(&run);
    assert_eq!(t.seed, 77);
    assert_eq!(t.stage_names().len(), 4);
}

#[test]
fn interrupted_training_resumes() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    let cfg = dir.path().join("run.toml");
    let full = dir.path().join("full");
    let cut = dir.path().join("cut");
    assert!(tofner(&["train", "--config", p(&cfg), "--out", p(&full)]).status.success());
    let out = tofner(&["train", "--config", p(&cfg), "--out", p(&cut), "--stop-after", "3"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("stopped after 3 stages"));
    assert!(!cut.join("predictions.conll").exists());
    let out = tofner(&["resume", "--run-dir", p(&cut)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read(full.join("predictions.conll")).unwrap(),
        fs::read(cut.join("predictions.conll")).unwrap()
    );
}

#[test]
fn predict_uses_a_stage_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    let run = dir.path().join("run");
    assert!(tofner(&["train", "--config", p(&dir.path().join("run.toml")), "--out", p(&run)])
        .status
        .success());
    let ckpt = run.join("checkpoints").join("07_NER_LOOP_1.json");
    let output = dir.path().join("pred.conll");
    let input = dir.path().join("t_test.conll");
    let out = tofner(&["predict", "--checkpoint", p(&ckpt), "--input", p(&input), "--output", p(&output)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = tofner(&["eval", "--gold", p(&input), "--pred", p(&output)]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn validation_problems_are_listed_together() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "s_ner = \"missing.conll\"\nmode = \"nope\"\n").unwrap();
    let out = tofner(&["train", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("missing.conll"), "{err}");
    assert!(err.contains("nope"), "{err}");
    assert!(err.contains("output directory"), "{err}");
}

#[test]
fn reusing_a_run_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    suite(dir.path());
    let cfg = dir.path().join("run.toml");
    let run = dir.path().join("once");
    let args = ["train", "--config", p(&cfg), "--mode", "ADAPTABERT_BASELINE", "--out", p(&run)];
    assert!(tofner(&args).status.success());
    let again = tofner(&args);
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr(&again).contains("resume"), "{}", stderr(&again));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(tofner(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tofner(&["eval", "--gold", "x"]).status.code(), Some(1));
    assert_eq!(tofner(&["--help"]).status.code(), Some(0));
    assert_eq!(tofner(&["--version"]).status.code(), Some(0));
}
