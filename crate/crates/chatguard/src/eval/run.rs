//! Evaluation drivers: overall binary, per-category 1-vs-all, and
//! per-category 1-vs-benign.
//!
//! Backend calls fan out concurrently up to a configured limit; a failed or
//! malformed completion is scored 0 and counted, never aborting the run.
//! Reports aggregate in example-id order, so runs over the same inputs are
//! byte-identical.

use std::collections::BTreeMap;

use futures::stream::{self, StreamExt};

use super::metrics::{metrics_report, MetricsReport, ScoredPrediction};
use super::{AnnotatedExample, EvalError};
use crate::backend::{
    aggregate_max_all, CategoryScoreProvider, CompletionBackend, CompletionRequest,
};
use crate::parse::{parse_verdict, score_from_first_token, Label};
use crate::policy::{subset, Policy};
use crate::prompt::{build_task_prompt, ClassificationTask, Target};

/// The system under evaluation: either an LLM-style completion backend
/// driven through rendered tasks, or a fixed-taxonomy API returning
/// per-category scores.
pub enum ModelUnderTest<'a> {
    Completion(&'a dyn CompletionBackend),
    PerCategory(&'a dyn CategoryScoreProvider),
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub target: Target,
    pub threshold: f64,
    pub concurrency: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            target: Target::Prompt,
            threshold: 0.5,
            concurrency: 8,
        }
    }
}

impl EvalConfig {
    pub fn for_target(target: Target) -> Self {
        Self {
            target,
            ..Self::default()
        }
    }
}

fn gold_labels(
    dataset: &[AnnotatedExample],
    target: Target,
) -> Result<Vec<super::Annotation>, EvalError> {
    dataset
        .iter()
        .map(|example| {
            example
                .annotation(target)
                .ok_or_else(|| EvalError::MissingResponseAnnotation {
                    id: example.id().to_string(),
                })
        })
        .collect()
}

/// Classifies one example with a task policy, returning a scored or
/// malformed prediction. Never fails: backend and parse errors degrade to
/// malformed.
async fn classify_example(
    backend: &dyn CompletionBackend,
    task_policy: &Policy,
    example: &AnnotatedExample,
    target: Target,
    gold: bool,
) -> ScoredPrediction {
    let Some(conversation) = example.conversation().truncate_for_target(target) else {
        return ScoredPrediction::malformed(example.id(), gold);
    };
    let task = match ClassificationTask::new(target, task_policy.clone(), conversation) {
        Ok(task) => task,
        Err(_) => return ScoredPrediction::malformed(example.id(), gold),
    };
    let prompt = match build_task_prompt(&task) {
        Ok(prompt) => prompt,
        Err(_) => return ScoredPrediction::malformed(example.id(), gold),
    };
    let result = match backend.complete(&CompletionRequest::new(prompt)).await {
        Ok(result) => result,
        Err(_) => return ScoredPrediction::malformed(example.id(), gold),
    };
    let verdict = match parse_verdict(&result.text, task_policy) {
        Ok(verdict) => verdict,
        Err(_) => return ScoredPrediction::malformed(example.id(), gold),
    };
    let score = score_from_first_token(result.first_token_probs.as_ref(), Some(verdict.label()))
        .expect("label fallback always yields a score");
    ScoredPrediction::scored(example.id(), score.clamp(0.0, 1.0), gold)
        .expect("clamped score lies in [0, 1]")
}

async fn classify_all(
    backend: &dyn CompletionBackend,
    task_policy: &Policy,
    dataset: &[AnnotatedExample],
    golds: &[bool],
    target: Target,
    concurrency: usize,
) -> Vec<ScoredPrediction> {
    let mut preds: Vec<ScoredPrediction> = stream::iter(
        dataset
            .iter()
            .zip(golds)
            .map(|(example, &gold)| classify_example(backend, task_policy, example, target, gold)),
    )
    .buffer_unordered(concurrency.max(1))
    .collect()
    .await;
    preds.sort_by(|a, b| a.example_id().cmp(b.example_id()));
    preds
}

/// Overall binary evaluation.
///
/// Completion backends run the full-policy task per example and read the
/// score off the first token; per-category-score backends aggregate their
/// own category scores with max-all. Gold is the example's prompt or
/// response label per the configured target.
pub async fn evaluate_overall_binary(
    model: &ModelUnderTest<'_>,
    dataset: &[AnnotatedExample],
    policy: &Policy,
    config: &EvalConfig,
) -> Result<MetricsReport, EvalError> {
    for example in dataset {
        example.validate_against(policy)?;
    }
    let annotations = gold_labels(dataset, config.target)?;
    let golds: Vec<bool> = annotations.iter().map(|a| a.label == Label::Unsafe).collect();

    let preds = match model {
        ModelUnderTest::Completion(backend) => {
            classify_all(*backend, policy, dataset, &golds, config.target, config.concurrency)
                .await
        }
        ModelUnderTest::PerCategory(provider) => {
            let mut preds: Vec<ScoredPrediction> = dataset
                .iter()
                .zip(&golds)
                .map(|(example, &gold)| score_with_provider(*provider, example, gold))
                .collect();
            preds.sort_by(|a, b| a.example_id().cmp(b.example_id()));
            preds
        }
    };
    metrics_report(&preds, config.threshold)
}

fn score_with_provider(
    provider: &dyn CategoryScoreProvider,
    example: &AnnotatedExample,
    gold: bool,
) -> ScoredPrediction {
    let scores = match provider.scores_for(example.id()) {
        Ok(scores) => scores,
        Err(_) => return ScoredPrediction::malformed(example.id(), gold),
    };
    match aggregate_max_all(&scores) {
        Ok(score) => ScoredPrediction::scored(example.id(), score.clamp(0.0, 1.0), gold)
            .expect("clamped score lies in [0, 1]"),
        Err(_) => ScoredPrediction::malformed(example.id(), gold),
    }
}

/// Per-category evaluation for promptable classifiers.
///
/// For each category `k`, the classifier is instructed via a single-category
/// subset task to flag only violations of `k`. Gold is set membership in
/// the example's violated categories; everything else — including other
/// categories' positives — counts negative. Categories without positive
/// examples report no metric.
pub async fn evaluate_one_vs_all(
    backend: &dyn CompletionBackend,
    dataset: &[AnnotatedExample],
    policy: &Policy,
    config: &EvalConfig,
) -> Result<BTreeMap<usize, MetricsReport>, EvalError> {
    for example in dataset {
        example.validate_against(policy)?;
    }
    let annotations = gold_labels(dataset, config.target)?;

    let mut reports = BTreeMap::new();
    for k in 1..=policy.len() {
        let task_policy = subset(policy, [k])
            .expect("index k lies within the policy")
            .into_policy();
        let golds: Vec<bool> = annotations.iter().map(|a| a.violated.contains(&k)).collect();
        let preds = classify_all(
            backend,
            &task_policy,
            dataset,
            &golds,
            config.target,
            config.concurrency,
        )
        .await;
        match metrics_report(&preds, config.threshold) {
            Ok(report) => {
                reports.insert(k, report);
            }
            Err(EvalError::NoPositives) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(reports)
}

/// Per-category evaluation for fixed-taxonomy APIs.
///
/// For each task `k`, positives of other categories are dropped, leaving
/// only benign negatives; every kept example scores as the max over the
/// API's own category scores (no cross-taxonomy mapping). This removes
/// hard negatives, so it upper-bounds the 1-vs-all reading. `tasks`
/// restricts which target categories to evaluate (default: all).
pub fn evaluate_one_vs_benign(
    provider: &dyn CategoryScoreProvider,
    dataset: &[AnnotatedExample],
    policy: &Policy,
    config: &EvalConfig,
    tasks: Option<&[usize]>,
) -> Result<BTreeMap<usize, MetricsReport>, EvalError> {
    for example in dataset {
        example.validate_against(policy)?;
    }
    let annotations = gold_labels(dataset, config.target)?;
    let task_indices: Vec<usize> = match tasks {
        Some(list) => {
            for &k in list {
                if !policy.contains_index(k) {
                    return Err(EvalError::CategoryOutOfRange {
                        id: "<task list>".into(),
                        index: k,
                        policy: policy.id().to_string(),
                        len: policy.len(),
                    });
                }
            }
            list.to_vec()
        }
        None => (1..=policy.len()).collect(),
    };

    // One score per example, shared by every task.
    let scored: Vec<ScoredPrediction> = dataset
        .iter()
        .map(|example| score_with_provider(provider, example, false))
        .collect();

    let mut reports = BTreeMap::new();
    for &k in &task_indices {
        let mut preds = Vec::new();
        for (i, annotation) in annotations.iter().enumerate() {
            let positive = annotation.violated.contains(&k);
            let benign = annotation.label == Label::Safe;
            if !positive && !benign {
                continue;
            }
            let base = &scored[i];
            preds.push(if base.is_malformed() {
                ScoredPrediction::malformed(base.example_id(), positive)
            } else {
                ScoredPrediction::scored(base.example_id(), base.score(), positive)
                    .expect("score already validated")
            });
        }
        preds.sort_by(|a, b| a.example_id().cmp(b.example_id()));
        match metrics_report(&preds, config.threshold) {
            Ok(report) => {
                reports.insert(k, report);
            }
            Err(EvalError::NoPositives) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(reports)
}
