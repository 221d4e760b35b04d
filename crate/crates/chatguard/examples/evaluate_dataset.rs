//! Evaluate a classifier on an annotated dataset: category statistics, a
//! seeded 3:1 train/eval split, and the overall binary metrics (AUPRC plus
//! P/R/F1 at threshold 0.5).
//!
//! ```bash
//! cargo run -p chatguard --example evaluate_dataset
//! ```

use std::path::PathBuf;

use chatguard::backend::MockBackend;
use chatguard::eval::{
    category_stats, evaluate_overall_binary, load_dataset, render_text_table, split_dataset,
    EvalConfig, ModelUnderTest,
};
use chatguard::policy::builtin_policy;
use chatguard::prompt::Target;

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixtures/smoke.jsonl");
    let dataset = load_dataset(&path).expect("shipped fixture is well-formed");
    let policy = builtin_policy();

    println!("loaded {} examples from {}\n", dataset.len(), path.display());
    println!("{}", category_stats(&dataset, policy).to_text_table());

    let (train, eval) = split_dataset(dataset.clone(), 42);
    println!("3:1 split with seed 42: {} train / {} eval\n", train.len(), eval.len());

    let mock = MockBackend::new();
    for target in [Target::Prompt, Target::Response] {
        let report = evaluate_overall_binary(
            &ModelUnderTest::Completion(&mock),
            &dataset,
            policy,
            &EvalConfig::for_target(target),
        )
        .await
        .expect("fixture has positives");
        println!(
            "{target} classification: AUPRC {:.3}, P {:.3} / R {:.3} / F1 {:.3} at {:.1} ({} malformed)",
            report.auprc, report.precision, report.recall, report.f1, report.threshold,
            report.n_malformed
        );
        println!("{}", render_text_table(&[("Overall".to_string(), &report)]));
    }
}
