//! Zero-shot adaptation to a foreign taxonomy: load a custom policy,
//! subset it to a single category of interest, and render the
//! classification task that instructs the model accordingly.
//!
//! ```bash
//! cargo run -p chatguard --example custom_policy
//! ```

use chatguard::policy::{load_policy, render_policy, subset};
use chatguard::prompt::{build_task_prompt, ClassificationTask, Conversation, Message, Target};

const CUSTOM_POLICY: &str = r#"{
  "id": "marketplace",
  "code_letter": "M",
  "categories": [
    {
      "name": "Counterfeit Goods",
      "guideline": "Listings or requests that promote replicas, fakes, or goods misrepresented as brand-name originals."
    },
    {
      "name": "Prohibited Items",
      "guideline": "Attempts to buy or sell items the marketplace bans outright, such as weapons, recalled products, or stolen property."
    },
    {
      "name": "Payment Fraud",
      "guideline": "Schemes that move payment off-platform, solicit gift cards, or otherwise try to defraud a counterparty."
    }
  ]
}"#;

fn main() {
    let policy = load_policy(CUSTOM_POLICY).expect("policy document is valid");
    println!(
        "loaded policy '{}' with {} categories (codes {}1..{}{})\n",
        policy.id(),
        policy.len(),
        policy.code_letter(),
        policy.code_letter(),
        policy.len()
    );

    let conversation = Conversation::new(vec![Message::user(
        "Can you pay me in gift cards outside the app? The fees here are awful.",
    )])
    .unwrap();

    // Full-policy task.
    let task =
        ClassificationTask::new(Target::Prompt, policy.clone(), conversation.clone()).unwrap();
    println!("=== full-policy task ===\n{}\n", build_task_prompt(&task).unwrap());

    // Single category of interest: codes renumber to M1.
    let fraud_only = subset(&policy, [3]).unwrap();
    let task =
        ClassificationTask::new(Target::Prompt, fraud_only.policy().clone(), conversation).unwrap();
    println!("=== 1-vs-all task for category 3 ===\n{}\n", build_task_prompt(&task).unwrap());
    println!(
        "subset index 1 maps back to parent index {:?}",
        fraud_only.to_parent_index(1)
    );

    // The canonical writer round-trips policies exactly.
    assert_eq!(load_policy(&render_policy(&policy)).unwrap(), policy);
}
