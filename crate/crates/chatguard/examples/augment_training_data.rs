//! Build an instruction-format fine-tuning file from an annotated dataset.
//!
//! Per example and target the pipeline applies, with configurable
//! probabilities: dropping unviolated categories, emitting an extra
//! flipped-to-safe view, and a fresh category-index shuffle per record.
//! Identical seeds produce byte-identical files.
//!
//! ```bash
//! cargo run -p chatguard --example augment_training_data
//! ```

use std::path::PathBuf;

use chatguard::augment::{emit_training_records, write_training_records, AugmentConfig};
use chatguard::eval::load_dataset;
use chatguard::policy::builtin_policy;

fn main() {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixtures");
    let dataset = load_dataset(fixtures.join("smoke.jsonl")).unwrap();

    let config = AugmentConfig {
        seed: 7,
        ..Default::default()
    };
    let run = emit_training_records(&dataset, builtin_policy(), &config).unwrap();
    println!(
        "emitted {} records from {} examples ({} units skipped, {} flips skipped)\n",
        run.records.len(),
        dataset.len(),
        run.skipped_units,
        run.skipped_flips
    );

    let shuffled = run
        .records
        .iter()
        .find(|r| r.meta.transforms.iter().any(|t| t == "drop_unviolated"))
        .unwrap_or(&run.records[0]);
    println!("=== sample record (transforms: {:?}) ===", shuffled.meta.transforms);
    println!("--- input ---\n{}", shuffled.input);
    println!("--- output ---\n{}\n", shuffled.output);

    let out = std::env::temp_dir().join("chatguard_training.jsonl");
    let file = std::fs::File::create(&out).unwrap();
    write_training_records(&run.records, std::io::BufWriter::new(file)).unwrap();
    println!("wrote {}", out.display());
}
