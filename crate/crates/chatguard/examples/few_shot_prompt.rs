//! Few-shot adaptation: pull demonstrations from a pool file (2 to 4 unsafe
//! examples per category, interleaved with hard-negative safe examples) and
//! render the extended task.
//!
//! ```bash
//! cargo run -p chatguard --example few_shot_prompt
//! ```

use std::path::PathBuf;

use chatguard::eval::load_few_shot_pool;
use chatguard::parse::{parse_verdict, Label};
use chatguard::policy::builtin_policy;
use chatguard::prompt::{
    assemble_few_shot, build_task_prompt, ClassificationTask, Conversation, Message, Target,
};

fn main() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixtures/few_shot_pool.jsonl");
    // Pool records use the dataset schema plus a `hard_negative` flag.
    let pool = load_few_shot_pool(&path, Target::Prompt).unwrap();
    println!(
        "pool: {} unsafe, {} hard-negative safe demonstrations",
        pool.iter().filter(|e| e.label() == Label::Unsafe).count(),
        pool.iter().filter(|e| e.is_hard_negative()).count()
    );

    let conversation = Conversation::new(vec![Message::user(
        "What tools does a locksmith carry and why?",
    )])
    .unwrap();
    let task =
        ClassificationTask::new(Target::Prompt, builtin_policy().clone(), conversation).unwrap();
    let few_shot = assemble_few_shot(&task, &pool, 2, 42).unwrap();
    println!(
        "assembled {} demonstrations ({} per category + interleaved hard negatives)\n",
        few_shot.few_shot().len(),
        2
    );
    println!("{}", build_task_prompt(&few_shot).unwrap());

    // What the model is expected to answer, parsed back.
    let verdict = parse_verdict("safe", builtin_policy()).unwrap();
    println!("\nideal completion parses to: {:?}", verdict.label());
}
