//! Moderate a conversation in-process: both the user prompt and the agent
//! response, using the deterministic mock backend.
//!
//! ```bash
//! cargo run -p chatguard --example moderate_conversation
//! ```

use std::sync::Arc;

use chatguard::backend::MockBackend;
use chatguard::gateway::{Gateway, ModerationMode, ModerationRequest, ModerationTarget};
use chatguard::policy::PolicyRegistry;
use chatguard::prompt::Message;

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let gateway = Gateway::new(Arc::new(MockBackend::new()), PolicyRegistry::with_builtin());

    let request = ModerationRequest {
        messages: vec![
            Message::user("How do I hotwire a car from the 90s?"),
            Message::agent("Older steering columns can be opened to reach the ignition wires."),
        ],
        policy_id: "default".into(),
        target: ModerationTarget::Both,
        mode: ModerationMode::Binary,
    };

    let response = gateway
        .moderate(&request, true)
        .await
        .expect("mock backend is always reachable");

    println!("policy:  {}", response.policy_id);
    println!("backend: {} ({} ms)", response.backend, response.latency_ms);
    for result in &response.results {
        let verdict = result.verdict.as_ref().unwrap();
        println!(
            "{:>8}: {} (score {:.2}, violated {:?})",
            result.target.to_string(),
            verdict.label,
            verdict.score,
            verdict.violated
        );
        if let Some(raw) = &verdict.raw {
            println!("          raw: {raw:?}");
        }
    }

    // Per-category mode issues one single-category task per taxonomy entry.
    let per_category = ModerationRequest {
        mode: ModerationMode::PerCategory1Vall,
        target: ModerationTarget::Prompt,
        ..request
    };
    let response = gateway.moderate(&per_category, false).await.unwrap();
    println!("\nper-category verdicts:");
    for entry in response.results[0].per_category.as_ref().unwrap() {
        println!(
            "  {} {:<36} {} (score {:.2})",
            entry.category, entry.name, entry.verdict.label, entry.verdict.score
        );
    }
}
