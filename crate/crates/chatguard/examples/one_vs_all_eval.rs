//! Per-category evaluation, two ways.
//!
//! 1-vs-all drives the promptable classifier with one single-category
//! subset task per category; positives of other categories count as
//! negatives. 1-vs-benign is the variant for fixed-taxonomy score APIs:
//! other categories' positives are dropped so only benign negatives
//! remain, which makes it an optimistic upper bound.
//!
//! ```bash
//! cargo run -p chatguard --example one_vs_all_eval
//! ```

use std::path::PathBuf;

use chatguard::backend::{FixtureScoreAdapter, MockBackend, ScoreKind};
use chatguard::eval::{
    evaluate_one_vs_all, evaluate_one_vs_benign, load_dataset, EvalConfig,
};
use chatguard::policy::builtin_policy;

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixtures");
    let dataset = load_dataset(fixtures.join("smoke.jsonl")).unwrap();
    let policy = builtin_policy();
    let config = EvalConfig::default();

    let mock = MockBackend::new();
    let one_vs_all = evaluate_one_vs_all(&mock, &dataset, policy, &config)
        .await
        .unwrap();
    println!("1-vs-all (mock classifier, subset tasks):");
    for (k, report) in &one_vs_all {
        println!(
            "  {k} {:<36} AUPRC {:.3}  ({} positives / {} examples)",
            policy.get(*k).unwrap().name,
            report.auprc,
            report.n_positives,
            report.n_examples
        );
    }

    let adapter = FixtureScoreAdapter::from_jsonl_path(
        "probability-fixture",
        ScoreKind::Probability,
        fixtures.join("category_scores_probability.jsonl"),
    )
    .unwrap();
    let one_vs_benign = evaluate_one_vs_benign(&adapter, &dataset, policy, &config, None).unwrap();
    println!("\n1-vs-benign (per-category score API, max-all scores):");
    for (k, report) in &one_vs_benign {
        println!(
            "  {k} {:<36} AUPRC {:.3}  ({} positives / {} examples)",
            policy.get(*k).unwrap().name,
            report.auprc,
            report.n_positives,
            report.n_examples
        );
    }
}
