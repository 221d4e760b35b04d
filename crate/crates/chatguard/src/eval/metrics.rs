//! The metric engine: average precision, PR curves, threshold metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// One `(gold label, predicted score)` pair feeding the PR-curve engine.
///
/// `malformed` marks predictions whose completion did not follow the
/// verdict grammar (or whose backend call failed); those always score 0 —
/// a non-detection — and are tallied separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    example_id: String,
    score: f64,
    gold: bool,
    malformed: bool,
}

impl ScoredPrediction {
    pub fn scored(example_id: impl Into<String>, score: f64, gold: bool) -> Result<Self, EvalError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(EvalError::InvalidScore(score));
        }
        Ok(Self {
            example_id: example_id.into(),
            score,
            gold,
            malformed: false,
        })
    }

    /// A malformed (or failed) prediction: scored 0, counted as such.
    pub fn malformed(example_id: impl Into<String>, gold: bool) -> Self {
        Self {
            example_id: example_id.into(),
            score: 0.0,
            gold,
            malformed: true,
        }
    }

    pub fn example_id(&self) -> &str {
        &self.example_id
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn gold(&self) -> bool {
        self.gold
    }

    pub fn is_malformed(&self) -> bool {
        self.malformed
    }
}

/// A point on the precision-recall curve at one score threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

fn sorted_descending(preds: &[ScoredPrediction]) -> Vec<&ScoredPrediction> {
    let mut sorted: Vec<&ScoredPrediction> = preds.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    sorted
}

/// Walks the predictions in descending score order, yielding one
/// `(threshold, tp, predicted_positives)` triple per distinct score, with
/// all equal-scored examples entering together.
fn threshold_groups(preds: &[ScoredPrediction]) -> Vec<(f64, usize, usize)> {
    let sorted = sorted_descending(preds);
    let mut out = Vec::new();
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].score;
        let mut j = i;
        while j < sorted.len() && sorted[j].score == score {
            if sorted[j].gold {
                tp += 1;
            }
            seen += 1;
            j += 1;
        }
        out.push((score, tp, seen));
        i = j;
    }
    out
}

/// Step-wise average precision with tie grouping:
/// `AP = Σ (R_n − R_{n−1}) · P_n` over descending distinct score
/// thresholds, `R_0 = 0`. No interpolation.
pub fn average_precision(preds: &[ScoredPrediction]) -> Result<f64, EvalError> {
    let n_pos = preds.iter().filter(|p| p.gold).count();
    if n_pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (_, tp, seen) in threshold_groups(preds) {
        let precision = tp as f64 / seen as f64;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// The PR curve as explicit points, one per distinct score threshold in
/// descending order.
pub fn precision_recall_curve(preds: &[ScoredPrediction]) -> Result<Vec<PrPoint>, EvalError> {
    let n_pos = preds.iter().filter(|p| p.gold).count();
    if n_pos == 0 {
        return Err(EvalError::NoPositives);
    }
    Ok(threshold_groups(preds)
        .into_iter()
        .map(|(threshold, tp, seen)| PrPoint {
            threshold,
            precision: tp as f64 / seen as f64,
            recall: tp as f64 / n_pos as f64,
        })
        .collect())
}

/// Precision, recall, and F1 with positives predicted at `score >= threshold`.
///
/// Conventions: precision is 0 when nothing is predicted positive; F1 is 0
/// when precision + recall is 0.
pub fn pr_f1_at_threshold(
    preds: &[ScoredPrediction],
    threshold: f64,
) -> Result<(f64, f64, f64), EvalError> {
    let n_pos = preds.iter().filter(|p| p.gold).count();
    if n_pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let tp = preds.iter().filter(|p| p.score >= threshold && p.gold).count();
    let predicted = preds.iter().filter(|p| p.score >= threshold).count();
    let precision = if predicted == 0 {
        0.0
    } else {
        tp as f64 / predicted as f64
    };
    let recall = tp as f64 / n_pos as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

/// An evaluation report: AUPRC, threshold metrics, counts, the PR curve,
/// and (for per-category methodologies) a breakdown keyed by 1-based
/// category index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auprc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub n_examples: usize,
    pub n_positives: usize,
    pub n_malformed: usize,
    pub pr_curve: Vec<PrPoint>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_category: BTreeMap<usize, MetricsReport>,
}

/// Assembles a [`MetricsReport`] from predictions.
///
/// A run whose outputs are all malformed reports AUPRC 0 (the classifier
/// produced nothing usable), not the tie-group prevalence the raw formula
/// would give.
pub fn metrics_report(
    preds: &[ScoredPrediction],
    threshold: f64,
) -> Result<MetricsReport, EvalError> {
    let n_examples = preds.len();
    let n_positives = preds.iter().filter(|p| p.gold).count();
    let n_malformed = preds.iter().filter(|p| p.malformed).count();
    if n_positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let all_malformed = n_malformed == n_examples;
    let auprc = if all_malformed {
        0.0
    } else {
        average_precision(preds)?
    };
    let pr_curve = if all_malformed {
        Vec::new()
    } else {
        precision_recall_curve(preds)?
    };
    let (precision, recall, f1) = pr_f1_at_threshold(preds, threshold)?;
    Ok(MetricsReport {
        auprc,
        precision,
        recall,
        f1,
        threshold,
        n_examples,
        n_positives,
        n_malformed,
        pr_curve,
        per_category: BTreeMap::new(),
    })
}

/// Renders reports as a plain-text table: one row per labeled report,
/// columns AUPRC / P / R / F1 at the report's threshold.
pub fn render_text_table(rows: &[(String, &MetricsReport)]) -> String {
    let name_width = rows
        .iter()
        .map(|(name, _)| name.len())
        .chain(["Category".len()])
        .max()
        .unwrap_or(8);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<name_width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>6}  {:>9}\n",
        "Category", "AUPRC", "P", "R", "F1", "N", "Malformed"
    ));
    for (name, report) in rows {
        out.push_str(&format!(
            "{:<name_width$}  {:>7.3}  {:>7.3}  {:>7.3}  {:>7.3}  {:>6}  {:>9}\n",
            name,
            report.auprc,
            report.precision,
            report.recall,
            report.f1,
            report.n_examples,
            report.n_malformed
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn preds(pairs: &[(f64, bool)]) -> Vec<ScoredPrediction> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(score, gold))| ScoredPrediction::scored(format!("e{i}"), score, gold).unwrap())
            .collect()
    }

    #[test]
    fn perfect_separation_gives_one() {
        let p = preds(&[(0.9, true), (0.8, true), (0.1, false), (0.2, false)]);
        assert!((average_precision(&p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interleaved_example_matches_hand_computation() {
        // Thresholds 0.9, 0.6, 0.4 give contributions 0.5·1 + 0·0.5 + 0.5·(2/3).
        let p = preds(&[(0.9, true), (0.6, false), (0.4, true)]);
        assert!((average_precision(&p).unwrap() - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn all_negative_is_undefined() {
        let p = preds(&[(0.9, false), (0.1, false)]);
        assert!(matches!(average_precision(&p), Err(EvalError::NoPositives)));
    }

    #[test]
    fn threshold_metrics() {
        let p = preds(&[(0.6, true), (0.4, false)]);
        assert_eq!(pr_f1_at_threshold(&p, 0.5).unwrap(), (1.0, 1.0, 1.0));

        let p = preds(&[(0.6, true), (0.7, false), (0.2, true)]);
        assert_eq!(pr_f1_at_threshold(&p, 0.5).unwrap(), (0.5, 0.5, 0.5));

        // Nothing predicted positive: all-zero convention.
        let p = preds(&[(0.1, true), (0.2, false)]);
        assert_eq!(pr_f1_at_threshold(&p, 0.5).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn all_malformed_reports_zero_auprc() {
        let preds: Vec<ScoredPrediction> = (0..4)
            .map(|i| ScoredPrediction::malformed(format!("e{i}"), i % 2 == 0))
            .collect();
        let report = metrics_report(&preds, 0.5).unwrap();
        assert_eq!(report.auprc, 0.0);
        assert_eq!(report.n_malformed, 4);
    }

    #[test]
    fn curve_points_descend_thresholds() {
        let p = preds(&[(0.9, true), (0.6, false), (0.4, true)]);
        let curve = precision_recall_curve(&p).unwrap();
        assert_eq!(curve.len(), 3);
        assert!(curve.windows(2).all(|w| w[0].threshold > w[1].threshold));
        assert_eq!(curve.last().unwrap().recall, 1.0);
    }

    proptest! {
        // Permuting equal-scored examples never changes AP.
        #[test]
        fn tie_invariance(golds in proptest::collection::vec(any::<bool>(), 2..10)) {
            prop_assume!(golds.iter().any(|&g| g));
            let tied = preds(&golds.iter().map(|&g| (0.5, g)).collect::<Vec<_>>());
            let mut reversed = tied.clone();
            reversed.reverse();
            prop_assert_eq!(
                average_precision(&tied).unwrap(),
                average_precision(&reversed).unwrap()
            );
        }

        // Threshold 0 predicts everything positive, so recall is 1.
        #[test]
        fn threshold_zero_full_recall(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..12),
            golds in proptest::collection::vec(any::<bool>(), 1..12)
        ) {
            let n = scores.len().min(golds.len());
            prop_assume!(golds[..n].iter().any(|&g| g));
            let p = preds(&scores[..n].iter().zip(&golds[..n]).map(|(&s, &g)| (s, g)).collect::<Vec<_>>());
            let (_, recall, _) = pr_f1_at_threshold(&p, 0.0).unwrap();
            prop_assert_eq!(recall, 1.0);
        }

        // Raising a positive's score never decreases AP.
        #[test]
        fn raising_positive_score_monotone(
            scores in proptest::collection::vec(0.0f64..=1.0, 3..10),
            golds in proptest::collection::vec(any::<bool>(), 3..10),
            bump in 0.0f64..=0.5
        ) {
            let n = scores.len().min(golds.len());
            prop_assume!(golds[..n].iter().any(|&g| g));
            let base: Vec<(f64, bool)> = scores[..n].iter().zip(&golds[..n]).map(|(&s, &g)| (s, g)).collect();
            let ap0 = average_precision(&preds(&base)).unwrap();
            let pos_index = golds[..n].iter().position(|&g| g).unwrap();
            let mut raised = base.clone();
            raised[pos_index].0 = (raised[pos_index].0 + bump).min(1.0);
            let ap1 = average_precision(&preds(&raised)).unwrap();
            prop_assert!(ap1 >= ap0 - 1e-9);
        }

        // Removing a gold-negative example never decreases AP.
        #[test]
        fn removing_negative_monotone(
            scores in proptest::collection::vec(0.0f64..=1.0, 3..10),
            golds in proptest::collection::vec(any::<bool>(), 3..10),
        ) {
            let n = scores.len().min(golds.len());
            prop_assume!(golds[..n].iter().any(|&g| g));
            prop_assume!(golds[..n].iter().any(|&g| !g));
            let base: Vec<(f64, bool)> = scores[..n].iter().zip(&golds[..n]).map(|(&s, &g)| (s, g)).collect();
            let ap0 = average_precision(&preds(&base)).unwrap();
            let neg_index = golds[..n].iter().position(|&g| !g).unwrap();
            let mut reduced = base.clone();
            reduced.remove(neg_index);
            let ap1 = average_precision(&preds(&reduced)).unwrap();
            prop_assert!(ap1 >= ap0 - 1e-9);
        }
    }
}
