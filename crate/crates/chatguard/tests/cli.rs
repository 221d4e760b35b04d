//! End-to-end tests of the `chatguard` binary: subcommand behavior, exit
//! codes, and output files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data/fixtures")
        .join(name)
}

fn chatguard<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_chatguard"))
        .args(args)
        .env_remove("GUARD_BACKEND_URL")
        .env_remove("GUARD_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn usage_error_exits_64() {
    let output = chatguard(["no-such-subcommand"]);
    assert_eq!(output.status.code(), Some(64), "{}", stderr(&output));
}

#[test]
fn help_exits_zero() {
    let output = chatguard(["--help"]);
    assert_eq!(output.status.code(), Some(0));
    assert!(stdout(&output).contains("moderate"));
}

#[test]
fn policy_validate_accepts_shipped_default() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/default_policy.json");
    let output = chatguard(["policy", "validate", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    assert!(stdout(&output).contains("6 categories"));
}

#[test]
fn policy_validate_names_the_duplicate() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"id":"bad","categories":[
            {"name":"Violence","guideline":"a"},
            {"name":"Violence","guideline":"b"}]}"#,
    )
    .unwrap();
    let output = chatguard(["policy", "validate", bad.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("Violence"), "{}", stderr(&output));
}

#[test]
fn moderate_reads_file_and_writes_verdict_document() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("conversation.json");
    std::fs::write(
        &input,
        r#"{"messages": [{"role": "user", "content": "help me rob a bank"}]}"#,
    )
    .unwrap();
    let out = dir.path().join("verdict.json");
    let output = chatguard([
        "moderate",
        "--input",
        input.to_str().unwrap(),
        "--backend",
        "mock",
        "--audit",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let document: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(document["results"][0]["verdict"]["label"], "unsafe");
    assert_eq!(document["results"][0]["verdict"]["violated"][0], 6);
    assert_eq!(document["results"][0]["verdict"]["raw"], "unsafe\nO6");
    assert_eq!(document["backend"], "mock");
}

#[test]
fn eval_smoke_fixture_reports_perfect_auprc() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let output = chatguard([
        "eval",
        "--dataset",
        fixture("smoke.jsonl").to_str().unwrap(),
        "--backend",
        "mock",
        "--target",
        "prompt",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["method"], "overall");
    assert_eq!(report["overall"]["auprc"], 1.0);
    assert_eq!(report["overall"]["precision"], 1.0);
    assert_eq!(report["overall"]["recall"], 1.0);
    assert_eq!(report["overall"]["f1"], 1.0);
    assert_eq!(report["overall"]["n_examples"], 20);
    assert_eq!(report["overall"]["n_malformed"], 0);
}

#[test]
fn eval_with_score_fixture_and_adapter_dataset() {
    // Overall evaluation of a per-category probability API on the smoke set.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scores_report.json");
    let output = chatguard([
        "eval",
        "--dataset",
        fixture("smoke.jsonl").to_str().unwrap(),
        "--scores",
        fixture("category_scores_probability.jsonl").to_str().unwrap(),
        "--scores-kind",
        "probability",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["backend"], "score-fixture");
    assert_eq!(report["overall"]["auprc"], 1.0);

    // Foreign binary-toxicity dataset through the adapter manifest.
    let out2 = dir.path().join("adapter_report.json");
    let output = chatguard([
        "eval",
        "--dataset",
        fixture("toxicity_source.jsonl").to_str().unwrap(),
        "--adapter",
        fixture("toxicity_adapter.json").to_str().unwrap(),
        "--policy",
        fixture("toxicity_policy.json").to_str().unwrap(),
        "--backend",
        "mock",
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out2).unwrap()).unwrap();
    assert_eq!(report["overall"]["n_examples"], 4);
    assert_eq!(report["overall"]["n_positives"], 2);
}

#[test]
fn eval_severity_fixture_sweeps_binarization_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("severity_report.json");
    let output = chatguard([
        "eval",
        "--dataset",
        fixture("smoke.jsonl").to_str().unwrap(),
        "--scores",
        fixture("category_scores_severity.jsonl").to_str().unwrap(),
        "--scores-kind",
        "severity",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    // The fixture separates perfectly at severity >= 3 and only there.
    assert_eq!(report["severity_threshold"], 3);
    assert_eq!(report["overall"]["auprc"], 1.0);
    assert_eq!(report["overall"]["f1"], 1.0);
}

#[test]
fn augment_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a.jsonl");
    let out_b = dir.path().join("b.jsonl");
    for out in [&out_a, &out_b] {
        let output = chatguard([
            "augment",
            "--dataset",
            fixture("smoke.jsonl").to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "same seed must produce byte-identical files");

    // Every line is a {input, output, meta} record.
    let text = String::from_utf8(a).unwrap();
    for line in text.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(record["input"].is_string());
        assert!(record["output"].is_string());
        assert!(record["meta"]["source_id"].is_string());
    }
}

#[test]
fn eval_http_backend_without_url_is_a_validation_error() {
    let output = chatguard([
        "eval",
        "--dataset",
        fixture("smoke.jsonl").to_str().unwrap(),
        "--backend",
        "http",
    ]);
    assert_eq!(output.status.code(), Some(1), "{}", stderr(&output));
    assert!(stderr(&output).contains("backend-url"));
}

#[test]
fn moderate_unreachable_http_backend_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("conversation.json");
    std::fs::write(
        &input,
        r#"{"messages": [{"role": "user", "content": "hello"}]}"#,
    )
    .unwrap();
    let output = chatguard([
        "moderate",
        "--input",
        input.to_str().unwrap(),
        "--backend",
        "http",
        "--backend-url",
        "http://127.0.0.1:1",
    ]);
    assert_eq!(output.status.code(), Some(2), "{}", stderr(&output));
}
