use std::path::Path;
use std::process::{Command, Output};

fn sample() -> String {
    format!("{}/data/sample_corpus.jsonl", env!("CARGO_MANIFEST_DIR"))
}

fn discourse(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_discourse"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CONVO_LEXICON_DIR")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).trim().to_string()
}

fn manifest(cwd: &Path, run: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(cwd.join(run).join("manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = discourse(tmp.path(), &["stats", "--corpus", "nope.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("runs/run-0001").exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = discourse(tmp.path(), &["stats", "--corpus", &sample(), "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stats_writes_numbered_runs_with_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let first = discourse(tmp.path(), &["stats", "--corpus", &sample()]);
    let second = discourse(tmp.path(), &["stats", "--corpus", &sample()]);
    assert!(first.status.success());
    assert_eq!(stdout(&first), "runs/run-0001");
    assert_eq!(stdout(&second), "runs/run-0002");
    let m = manifest(tmp.path(), "runs/run-0001");
    assert_eq!(m["command"], "stats");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(m["outputs"].as_array().unwrap().iter().any(|o| o == "stats.json"));
}

#[test]
fn config_supplies_flags_and_explicit_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("cfg.json");
    std::fs::write(
        &config,
        serde_json::json!({"corpus": sample(), "replicates": 50, "seed": 3}).to_string(),
    )
    .unwrap();
    let out = discourse(
        tmp.path(),
        &["adaptability", "--config", config.to_str().unwrap(), "--seed", "9", "--out-dir", "o"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(tmp.path(), &stdout(&out));
    assert_eq!(m["seeds"]["bootstrap"], 9);
    assert_eq!(m["config"]["replicates"], 50);
}

#[test]
fn malformed_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("cfg.json");
    std::fs::write(&config, "[1, 2]").unwrap();
    let out = discourse(tmp.path(), &["stats", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_model_file_is_a_pipeline_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("model.json"), "{\"not\": \"a model\"}").unwrap();
    let out = discourse(tmp.path(), &["decode", "--corpus", &sample(), "--model", "model.json"]);
    assert_eq!(out.status.code(), Some(1));
}
