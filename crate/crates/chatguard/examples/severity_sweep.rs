//! Binarize an integer-severity moderation API against gold labels.
//!
//! APIs that return severities 0..=6 per category instead of probabilities
//! can't feed a PR curve directly. The sweep tries every threshold,
//! binarizes max severity against it, and keeps the threshold with the
//! highest average precision (smallest on ties).
//!
//! ```bash
//! cargo run -p chatguard --example severity_sweep
//! ```

use std::path::PathBuf;

use chatguard::backend::{
    binarize_severity_sweep, CategoryScoreProvider, FixtureScoreAdapter, ScoreKind,
};
use chatguard::eval::load_dataset;
use chatguard::parse::Label;

fn main() {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixtures");
    let dataset = load_dataset(fixtures.join("smoke.jsonl")).unwrap();
    let adapter = FixtureScoreAdapter::from_jsonl_path(
        "severity-fixture",
        ScoreKind::Severity,
        fixtures.join("category_scores_severity.jsonl"),
    )
    .unwrap();

    let pairs: Vec<_> = dataset
        .iter()
        .map(|example| {
            let scores = adapter.scores_for(example.id()).unwrap();
            let gold = example.prompt_label() == Label::Unsafe;
            (scores, gold)
        })
        .collect();

    let sweep = binarize_severity_sweep(&pairs).unwrap();
    println!(
        "chosen threshold: {} (average precision {:.3})",
        sweep.threshold, sweep.average_precision
    );
    println!("binarized predictions:");
    for (example, score) in dataset.iter().zip(&sweep.binary_scores) {
        println!(
            "  {}  max-severity-as-binary {:>3}  gold {}",
            example.id(),
            score,
            example.prompt_label()
        );
    }
}
