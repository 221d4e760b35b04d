//! Pluggable classifier backends.
//!
//! Two backend shapes exist. [`CompletionBackend`] covers LLM-style
//! classifiers driven through rendered task text (the HTTP client in
//! [`http`], the deterministic mock in [`mock`]). [`CategoryScoreProvider`]
//! covers fixed-taxonomy moderation APIs that return one score per category
//! of their own taxonomy; those scores are aggregated with
//! [`aggregate_max_all`] or, for integer severities, binarized via
//! [`binarize_severity_sweep`].

pub mod http;
pub mod mock;

use std::collections::BTreeMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::metrics::{average_precision, ScoredPrediction};
use crate::parse::FirstTokenDistribution;

pub use http::{HttpBackend, HttpBackendConfig};
pub use mock::{MockBackend, MockRule};

#[derive(Debug, Error)]
pub enum BackendError {
    /// The backend could not be reached (connect error or timeout).
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    /// The backend answered with a non-success status.
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    /// The response arrived but could not be interpreted.
    #[error("backend response invalid: {0}")]
    InvalidResponse(String),
}

/// Errors from score aggregation and severity binarization.
#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("no category scores present")]
    EmptyScores,
    #[error("expected {expected:?} scores, got {got:?}")]
    WrongKind { expected: ScoreKind, got: ScoreKind },
    #[error("score {value} for category {name:?} outside the valid range")]
    OutOfRange { name: String, value: f64 },
    #[error("no positive gold labels; average precision undefined")]
    NoPositives,
}

/// A completion request. Decoding is deterministic: temperature is pinned
/// to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    pub want_first_token_probs: bool,
    pub temperature: f64,
}

impl CompletionRequest {
    /// A request with the defaults used throughout the crate: 32 new
    /// tokens, first-token probabilities requested, temperature 0.
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_new_tokens: 32,
            want_first_token_probs: true,
            temperature: 0.0,
        }
    }

    pub fn without_probs(mut self) -> Self {
        self.want_first_token_probs = false;
        self
    }

    pub fn with_max_new_tokens(mut self, max_new_tokens: u32) -> Self {
        self.max_new_tokens = max_new_tokens.max(1);
        self
    }
}

/// A completion result. `first_token_probs` is present when probabilities
/// were requested and the backend supports them; `probs_unsupported` flags
/// the requested-but-unsupported case so callers can tell it apart from
/// "not requested".
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub first_token_probs: Option<FirstTokenDistribution>,
    pub probs_unsupported: bool,
}

/// Contract for LLM-style classifier backends.
///
/// Implementations must be safe for concurrent requests and, with
/// deterministic decoding, retry-transparent: an identical request yields
/// an identical result.
#[async_trait]
pub trait CompletionBackend: Send + Sync {
    fn name(&self) -> &str;

    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError>;

    /// Reachability probe used by the gateway health endpoint.
    async fn healthy(&self) -> bool {
        true
    }
}

/// What a per-category score means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Probabilities in `[0, 1]`.
    Probability,
    /// Integer severities in `0..=6`.
    Severity,
}

/// Per-category scores from a fixed-taxonomy moderation API, keyed by the
/// API's own category names (passed through verbatim, never mapped onto the
/// local taxonomy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScores {
    kind: ScoreKind,
    entries: BTreeMap<String, f64>,
}

impl CategoryScores {
    pub fn probability(entries: BTreeMap<String, f64>) -> Result<Self, ScoreError> {
        for (name, &value) in &entries {
            if !(0.0..=1.0).contains(&value) {
                return Err(ScoreError::OutOfRange {
                    name: name.clone(),
                    value,
                });
            }
        }
        Ok(Self {
            kind: ScoreKind::Probability,
            entries,
        })
    }

    pub fn severity(entries: BTreeMap<String, u8>) -> Result<Self, ScoreError> {
        let mut out = BTreeMap::new();
        for (name, value) in entries {
            if value > 6 {
                return Err(ScoreError::OutOfRange {
                    name,
                    value: value as f64,
                });
            }
            out.insert(name, value as f64);
        }
        Ok(Self {
            kind: ScoreKind::Severity,
            entries: out,
        })
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn entries(&self) -> &BTreeMap<String, f64> {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn max_value(&self) -> Option<f64> {
        self.entries.values().copied().fold(None, |acc, v| {
            Some(match acc {
                None => v,
                Some(m) => m.max(v),
            })
        })
    }
}

/// Per-category-score backend: returns the API's scores for one example.
///
/// Reference adapters are fixture-backed (see [`FixtureScoreAdapter`]);
/// live API clients implement the same interface.
pub trait CategoryScoreProvider: Send + Sync {
    fn name(&self) -> &str;

    fn scores_for(&self, example_id: &str) -> Result<CategoryScores, BackendError>;
}

/// Collapses per-category probability scores into one binary score by
/// taking the maximum: the classifier flags content when any of its own
/// categories fires.
pub fn aggregate_max_all(scores: &CategoryScores) -> Result<f64, ScoreError> {
    if scores.kind() != ScoreKind::Probability {
        return Err(ScoreError::WrongKind {
            expected: ScoreKind::Probability,
            got: scores.kind(),
        });
    }
    scores.max_value().ok_or(ScoreError::EmptyScores)
}

/// Result of a severity-threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeveritySweep {
    /// The chosen threshold in `1..=6` (smallest on ties).
    pub threshold: u8,
    /// Binarized scores (0.0 / 1.0) for the chosen threshold, in input order.
    pub binary_scores: Vec<f64>,
    /// Average precision achieved at the chosen threshold.
    pub average_precision: f64,
}

/// Binarizes integer-severity outputs against gold labels.
///
/// For each threshold `t` in 1..=6, an example counts positive when its
/// maximum severity reaches `t`; the threshold with the highest average
/// precision wins, ties resolving to the smallest threshold (which
/// maximizes recall at equal AP).
pub fn binarize_severity_sweep(
    dataset: &[(CategoryScores, bool)],
) -> Result<SeveritySweep, ScoreError> {
    if !dataset.iter().any(|(_, gold)| *gold) {
        return Err(ScoreError::NoPositives);
    }
    let mut max_severities = Vec::with_capacity(dataset.len());
    for (scores, _) in dataset {
        if scores.kind() != ScoreKind::Severity {
            return Err(ScoreError::WrongKind {
                expected: ScoreKind::Severity,
                got: scores.kind(),
            });
        }
        max_severities.push(scores.max_value().ok_or(ScoreError::EmptyScores)?);
    }

    let mut best: Option<SeveritySweep> = None;
    for threshold in 1..=6u8 {
        let binary_scores: Vec<f64> = max_severities
            .iter()
            .map(|&s| if s >= threshold as f64 { 1.0 } else { 0.0 })
            .collect();
        let preds: Vec<ScoredPrediction> = binary_scores
            .iter()
            .zip(dataset)
            .enumerate()
            .map(|(i, (&score, (_, gold)))| {
                ScoredPrediction::scored(i.to_string(), score, *gold)
                    .expect("binary scores lie in [0, 1]")
            })
            .collect();
        let ap = average_precision(&preds).expect("positives checked above");
        let better = match &best {
            None => true,
            Some(b) => ap > b.average_precision,
        };
        if better {
            best = Some(SeveritySweep {
                threshold,
                binary_scores,
                average_precision: ap,
            });
        }
    }
    Ok(best.expect("six thresholds were swept"))
}

/// Fixture-backed per-category-score adapter.
///
/// Records are one JSON object per line: `{"id": string, "scores":
/// {category: number}}`. The file's kind (probability vs. severity) is
/// declared at load time and every record is validated against it.
#[derive(Debug, Clone)]
pub struct FixtureScoreAdapter {
    name: String,
    by_id: std::collections::HashMap<String, CategoryScores>,
}

#[derive(Deserialize)]
struct FixtureRecord {
    id: String,
    scores: BTreeMap<String, serde_json::Number>,
}

impl FixtureScoreAdapter {
    pub fn from_jsonl_str(
        name: impl Into<String>,
        kind: ScoreKind,
        contents: &str,
    ) -> Result<Self, BackendError> {
        let mut by_id = std::collections::HashMap::new();
        for (lineno, line) in contents.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: FixtureRecord = serde_json::from_str(line).map_err(|e| {
                BackendError::InvalidResponse(format!("fixture line {}: {e}", lineno + 1))
            })?;
            let scores = match kind {
                ScoreKind::Probability => {
                    let entries: BTreeMap<String, f64> = record
                        .scores
                        .iter()
                        .map(|(k, v)| (k.clone(), v.as_f64().unwrap_or(f64::NAN)))
                        .collect();
                    CategoryScores::probability(entries)
                }
                ScoreKind::Severity => {
                    let mut entries = BTreeMap::new();
                    for (k, v) in &record.scores {
                        let value = v.as_u64().ok_or_else(|| {
                            BackendError::InvalidResponse(format!(
                                "fixture line {}: severity for {k:?} is not an integer",
                                lineno + 1
                            ))
                        })?;
                        let value = u8::try_from(value).map_err(|_| {
                            BackendError::InvalidResponse(format!(
                                "fixture line {}: severity {value} too large",
                                lineno + 1
                            ))
                        })?;
                        entries.insert(k.clone(), value);
                    }
                    CategoryScores::severity(entries)
                }
            }
            .map_err(|e| {
                BackendError::InvalidResponse(format!("fixture line {}: {e}", lineno + 1))
            })?;
            by_id.insert(record.id, scores);
        }
        Ok(Self {
            name: name.into(),
            by_id,
        })
    }

    pub fn from_jsonl_path(
        name: impl Into<String>,
        kind: ScoreKind,
        path: impl AsRef<std::path::Path>,
    ) -> Result<Self, BackendError> {
        let contents = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Unavailable(format!("fixture unreadable: {e}")))?;
        Self::from_jsonl_str(name, kind, &contents)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

impl CategoryScoreProvider for FixtureScoreAdapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn scores_for(&self, example_id: &str) -> Result<CategoryScores, BackendError> {
        self.by_id.get(example_id).cloned().ok_or_else(|| {
            BackendError::InvalidResponse(format!("no scores recorded for example {example_id:?}"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prob(pairs: &[(&str, f64)]) -> CategoryScores {
        CategoryScores::probability(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
            .unwrap()
    }

    fn sev(pairs: &[(&str, u8)]) -> CategoryScores {
        CategoryScores::severity(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()).unwrap()
    }

    #[test]
    fn max_all_takes_the_maximum() {
        let scores = prob(&[("a", 0.2), ("b", 0.9), ("c", 0.4)]);
        assert_eq!(aggregate_max_all(&scores).unwrap(), 0.9);
        assert_eq!(aggregate_max_all(&prob(&[("a", 0.0), ("b", 0.0)])).unwrap(), 0.0);
        assert_eq!(aggregate_max_all(&prob(&[("a", 0.7)])).unwrap(), 0.7);
    }

    #[test]
    fn max_all_rejects_empty_and_severity() {
        assert!(matches!(
            aggregate_max_all(&prob(&[])),
            Err(ScoreError::EmptyScores)
        ));
        assert!(matches!(
            aggregate_max_all(&sev(&[("a", 3)])),
            Err(ScoreError::WrongKind { .. })
        ));
    }

    #[test]
    fn score_validation() {
        assert!(CategoryScores::probability([("a".to_string(), 1.5)].into()).is_err());
        assert!(CategoryScores::severity([("a".to_string(), 7u8)].into()).is_err());
    }

    #[test]
    fn sweep_perfect_separation_picks_smallest_threshold() {
        let dataset = vec![(sev(&[("x", 6)]), true), (sev(&[("x", 0)]), false)];
        let sweep = binarize_severity_sweep(&dataset).unwrap();
        // Every threshold separates {6, 0} perfectly; ties break low.
        assert_eq!(sweep.threshold, 1);
        assert_eq!(sweep.average_precision, 1.0);
        assert_eq!(sweep.binary_scores, vec![1.0, 0.0]);
    }

    #[test]
    fn sweep_all_zero_severities() {
        let dataset = vec![(sev(&[("x", 0)]), true), (sev(&[("x", 0)]), false)];
        let sweep = binarize_severity_sweep(&dataset).unwrap();
        assert_eq!(sweep.threshold, 1);
        // All-zero predictions tie-group everything: AP equals prevalence.
        assert!((sweep.average_precision - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sweep_requires_positives() {
        assert!(matches!(
            binarize_severity_sweep(&[]),
            Err(ScoreError::NoPositives)
        ));
        let dataset = vec![(sev(&[("x", 6)]), false)];
        assert!(matches!(
            binarize_severity_sweep(&dataset),
            Err(ScoreError::NoPositives)
        ));
    }

    #[test]
    fn fixture_adapter_roundtrip() {
        let adapter = FixtureScoreAdapter::from_jsonl_str(
            "probability-fixture",
            ScoreKind::Probability,
            "{\"id\":\"e1\",\"scores\":{\"toxicity\":0.9,\"threat\":0.1}}\n",
        )
        .unwrap();
        let scores = adapter.scores_for("e1").unwrap();
        assert_eq!(aggregate_max_all(&scores).unwrap(), 0.9);
        assert!(adapter.scores_for("missing").is_err());
    }

    #[test]
    fn fixture_adapter_rejects_fractional_severities() {
        let result = FixtureScoreAdapter::from_jsonl_str(
            "severity-fixture",
            ScoreKind::Severity,
            "{\"id\":\"e1\",\"scores\":{\"hate\":2.5}}\n",
        );
        assert!(result.is_err());
    }
}
