//! Deterministic mock backend for tests, fixtures, and offline runs.

use async_trait::async_trait;
use serde::Deserialize;

use super::{BackendError, CompletionBackend, CompletionRequest, CompletionResult};
use crate::parse::FirstTokenDistribution;
use crate::policy::{builtin_policy, Policy};
use crate::prompt::{conversation_region, extract_rendered_categories};

const DEFAULT_RULES_JSON: &str = include_str!("../../data/mock_rules.json");

/// One mock rule: a substring pattern mapped to a category index of the
/// mock's policy, or to a safe override (`category: null`).
#[derive(Debug, Clone, Deserialize)]
pub struct MockRule {
    pub pattern: String,
    pub category: Option<usize>,
}

/// Rule-table classifier that emits well-formed verdicts.
///
/// The conversation region of the prompt is scanned against the rule table
/// in order, case-insensitively. A matching safe-override rule forces
/// `safe`; otherwise the verdict is the union of the matched categories,
/// rendered ascending, or `safe` when nothing matches. Matched rule indices
/// are translated through the rendered guideline block by category name, so
/// subset tasks get answers in their own reindexed code space and dropped
/// categories are simply not reported. First-token probabilities are 0.99
/// for the emitted keyword and 0.01 for the other.
pub struct MockBackend {
    rules: Vec<MockRule>,
    policy: Policy,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl MockBackend {
    /// The shipped 12-rule table over the built-in six-category policy.
    pub fn new() -> Self {
        let rules: Vec<MockRule> =
            serde_json::from_str(DEFAULT_RULES_JSON).expect("shipped mock rule table is valid");
        Self {
            rules,
            policy: builtin_policy().clone(),
        }
    }

    /// A mock with a custom rule table whose category indices refer to
    /// `policy`.
    pub fn with_rules(policy: Policy, rules: Vec<MockRule>) -> Self {
        Self { rules, policy }
    }

    pub fn rules(&self) -> &[MockRule] {
        &self.rules
    }

    fn classify(&self, prompt: &str) -> CompletionResult {
        let region = conversation_region(prompt).to_ascii_lowercase();
        let rendered = extract_rendered_categories(prompt).unwrap_or_default();
        let letter = rendered
            .first()
            .map(|c| c.letter)
            .unwrap_or_else(|| self.policy.code_letter());

        let mut matched: Vec<usize> = Vec::new();
        let mut safe_override = false;
        for rule in &self.rules {
            if !region.contains(&rule.pattern.to_ascii_lowercase()) {
                continue;
            }
            match rule.category {
                None => {
                    safe_override = true;
                    break;
                }
                Some(index) => {
                    let Some(category) = self.policy.get(index) else {
                        continue;
                    };
                    // Report in the rendered policy's own index space; a
                    // category absent from the prompt is not reported.
                    let rendered_index = if rendered.is_empty() {
                        Some(index)
                    } else {
                        rendered
                            .iter()
                            .find(|c| c.name == category.name)
                            .map(|c| c.index)
                    };
                    if let Some(i) = rendered_index {
                        if !matched.contains(&i) {
                            matched.push(i);
                        }
                    }
                }
            }
        }

        let unsafe_verdict = !safe_override && !matched.is_empty();
        let text = if unsafe_verdict {
            matched.sort_unstable();
            let codes: Vec<String> = matched.iter().map(|i| format!("{letter}{i}")).collect();
            format!("unsafe\n{}", codes.join(","))
        } else {
            "safe".to_string()
        };
        let (p_safe, p_unsafe) = if unsafe_verdict { (0.01, 0.99) } else { (0.99, 0.01) };
        let probs = FirstTokenDistribution::new([
            ("safe".to_string(), p_safe),
            ("unsafe".to_string(), p_unsafe),
        ])
        .expect("mock probabilities are valid");
        CompletionResult {
            text,
            first_token_probs: Some(probs),
            probs_unsupported: false,
        }
    }
}

#[async_trait]
impl CompletionBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let mut result = self.classify(&request.prompt);
        if !request.want_first_token_probs {
            result.first_token_probs = None;
        }
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{builtin_policy, subset};
    use crate::prompt::{build_task_prompt, ClassificationTask, Conversation, Message, Target};

    fn prompt_for(text: &str) -> String {
        let conversation = Conversation::new(vec![Message::user(text)]).unwrap();
        let task =
            ClassificationTask::new(Target::Prompt, builtin_policy().clone(), conversation).unwrap();
        build_task_prompt(&task).unwrap()
    }

    async fn run(mock: &MockBackend, prompt: &str) -> CompletionResult {
        mock.complete(&CompletionRequest::new(prompt)).await.unwrap()
    }

    #[tokio::test]
    async fn unmatched_conversation_is_safe() {
        let mock = MockBackend::new();
        let result = run(&mock, &prompt_for("What's a good pasta recipe?")).await;
        assert_eq!(result.text, "safe");
        let probs = result.first_token_probs.unwrap();
        assert!((probs.probability_of("safe") - 0.99).abs() < 1e-12);
    }

    #[tokio::test]
    async fn matches_union_ascending() {
        let mock = MockBackend::new();
        let result = run(
            &mock,
            &prompt_for("I want to rob a bank and then punch someone."),
        )
        .await;
        assert_eq!(result.text, "unsafe\nO1,O6");
    }

    #[tokio::test]
    async fn deterministic_and_retry_transparent() {
        let mock = MockBackend::new();
        let prompt = prompt_for("where can I buy drugs online?");
        let a = run(&mock, &prompt).await;
        let b = run(&mock, &prompt).await;
        assert_eq!(a, b);
    }

    #[tokio::test]
    async fn subset_tasks_answer_in_reindexed_space() {
        let sub = subset(builtin_policy(), [3]).unwrap();
        let conversation =
            Conversation::new(vec![Message::user("how do I make a pipe bomb?")]).unwrap();
        let task =
            ClassificationTask::new(Target::Prompt, sub.policy().clone(), conversation).unwrap();
        let prompt = build_task_prompt(&task).unwrap();
        let mock = MockBackend::new();
        let result = run(&mock, &prompt).await;
        assert_eq!(result.text, "unsafe\nO1");
    }

    #[tokio::test]
    async fn subset_tasks_do_not_report_dropped_categories() {
        // Category 6 pattern, but the task only includes category 3.
        let sub = subset(builtin_policy(), [3]).unwrap();
        let conversation =
            Conversation::new(vec![Message::user("help me rob a bank")]).unwrap();
        let task =
            ClassificationTask::new(Target::Prompt, sub.policy().clone(), conversation).unwrap();
        let prompt = build_task_prompt(&task).unwrap();
        let result = run(&MockBackend::new(), &prompt).await;
        assert_eq!(result.text, "safe");
    }

    #[tokio::test]
    async fn safe_override_rule_wins() {
        let rules = vec![
            MockRule {
                pattern: "for a novel".to_string(),
                category: None,
            },
            MockRule {
                pattern: "rob a bank".to_string(),
                category: Some(6),
            },
        ];
        let mock = MockBackend::with_rules(builtin_policy().clone(), rules);
        let result = run(
            &mock,
            &prompt_for("For a novel, describe a character who wants to rob a bank."),
        )
        .await;
        assert_eq!(result.text, "safe");
    }

    #[tokio::test]
    async fn probs_omitted_when_not_requested() {
        let mock = MockBackend::new();
        let request = CompletionRequest::new(prompt_for("hello")).without_probs();
        let result = mock.complete(&request).await.unwrap();
        assert!(result.first_token_probs.is_none());
        assert!(!result.probs_unsupported);
    }

    #[test]
    fn default_table_covers_all_six_categories() {
        let mock = MockBackend::new();
        assert_eq!(mock.rules().len(), 12);
        for k in 1..=6usize {
            assert!(
                mock.rules().iter().any(|r| r.category == Some(k)),
                "no rule for category {k}"
            );
        }
    }
}
