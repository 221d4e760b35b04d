//! Verdict parsing and first-token scoring.
//!
//! Classifier completions follow a two-line grammar: the first line is
//! `safe` or `unsafe`; when unsafe, a second line lists the violated
//! category codes (`O1,O3`). Anything else is a malformed output, which
//! evaluation treats as a non-detection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::Policy;

#[derive(Debug, Error)]
pub enum ParseError {
    /// The completion did not follow the verdict grammar.
    #[error("malformed output ({reason}): {raw:?}")]
    MalformedOutput { reason: String, raw: String },
    /// No probability signal and no label to fall back on.
    #[error("no safe/unsafe signal available to derive a score")]
    NoSignal,
    /// A verdict was constructed with inconsistent fields.
    #[error("invalid verdict: {0}")]
    InvalidVerdict(String),
    /// A first-token distribution carried out-of-range probabilities.
    #[error("invalid first-token distribution: {0}")]
    InvalidDistribution(String),
}

/// Binary safety label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Safe,
    Unsafe,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Safe => "safe",
            Label::Unsafe => "unsafe",
        })
    }
}

/// A parsed classifier verdict.
///
/// `violated` holds 1-based indices in the index space of the policy the
/// task was rendered with (a subset task reports subset indices). `score`
/// is the probability of `unsafe` in `[0, 1]`; `raw` preserves the original
/// completion text for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    label: Label,
    violated: BTreeSet<usize>,
    score: f64,
    raw: String,
}

impl Verdict {
    pub fn new(
        label: Label,
        violated: BTreeSet<usize>,
        score: f64,
        raw: impl Into<String>,
    ) -> Result<Self, ParseError> {
        match label {
            Label::Safe if !violated.is_empty() => {
                return Err(ParseError::InvalidVerdict(
                    "safe verdict must have no violated categories".into(),
                ))
            }
            Label::Unsafe if violated.is_empty() => {
                return Err(ParseError::InvalidVerdict(
                    "unsafe verdict must name at least one violated category".into(),
                ))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(ParseError::InvalidVerdict(format!(
                "score {score} outside [0, 1]"
            )));
        }
        Ok(Self {
            label,
            violated,
            score,
            raw: raw.into(),
        })
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn violated(&self) -> &BTreeSet<usize> {
        &self.violated
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    /// Same verdict with the score replaced (e.g. by a first-token reading).
    pub fn with_score(mut self, score: f64) -> Result<Self, ParseError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(ParseError::InvalidVerdict(format!(
                "score {score} outside [0, 1]"
            )));
        }
        self.score = score;
        Ok(self)
    }
}

fn malformed(reason: impl Into<String>, raw: &str) -> ParseError {
    ParseError::MalformedOutput {
        reason: reason.into(),
        raw: raw.to_string(),
    }
}

/// Label-only score fallback: unsafe maps to 1.0, safe to 0.0.
pub fn label_fallback_score(label: Label) -> f64 {
    match label {
        Label::Safe => 0.0,
        Label::Unsafe => 1.0,
    }
}

/// Parses a raw completion into a verdict.
///
/// Accepts, after trimming surrounding whitespace and BOM: exactly `safe`,
/// or `unsafe` followed by one line of comma-separated category codes. The
/// safe/unsafe keyword is case-insensitive; codes are case-sensitive, must
/// use the policy's code letter, and must index a category of the policy.
/// Duplicate codes collapse; order does not matter. The returned verdict's
/// score is the label fallback (0 or 1) until a probability reading
/// replaces it.
pub fn parse_verdict(raw: &str, policy: &Policy) -> Result<Verdict, ParseError> {
    let trimmed = raw.trim_matches(|c: char| c.is_whitespace() || c == '\u{feff}');
    let (first, rest) = match trimmed.split_once('\n') {
        Some((first, rest)) => (first, Some(rest)),
        None => (trimmed, None),
    };
    let keyword = first.trim().to_ascii_lowercase();
    match keyword.as_str() {
        "safe" => {
            if rest.is_some_and(|r| !r.trim().is_empty()) {
                return Err(malformed("trailing content after 'safe'", raw));
            }
            Verdict::new(Label::Safe, BTreeSet::new(), 0.0, raw)
        }
        "unsafe" => {
            let Some(code_line) = rest else {
                return Err(malformed("'unsafe' verdict is missing the category line", raw));
            };
            if code_line.contains('\n') {
                return Err(malformed("more than one line after 'unsafe'", raw));
            }
            let mut violated = BTreeSet::new();
            for token in code_line.trim().split(',') {
                let token = token.trim();
                let Some(digits) = token.strip_prefix(policy.code_letter()) else {
                    return Err(malformed(
                        format!("category code {token:?} does not start with '{}'", policy.code_letter()),
                        raw,
                    ));
                };
                if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(malformed(format!("invalid category code {token:?}"), raw));
                }
                let index: usize = digits
                    .parse()
                    .map_err(|_| malformed(format!("unparseable category index {digits:?}"), raw))?;
                if !policy.contains_index(index) {
                    return Err(malformed(
                        format!("category index {index} out of range 1..={}", policy.len()),
                        raw,
                    ));
                }
                violated.insert(index);
            }
            Verdict::new(Label::Unsafe, violated, 1.0, raw)
        }
        _ => Err(malformed("first line is neither 'safe' nor 'unsafe'", raw)),
    }
}

/// Canonical verdict text: `safe`, or `unsafe` plus the violated codes in
/// ascending order, comma-separated without spaces.
pub fn render_verdict(verdict: &Verdict, policy: &Policy) -> String {
    match verdict.label() {
        Label::Safe => "safe".to_string(),
        Label::Unsafe => {
            let codes: Vec<String> = verdict
                .violated()
                .iter()
                .map(|&i| format!("{}{}", policy.code_letter(), i))
                .collect();
            format!("unsafe\n{}", codes.join(","))
        }
    }
}

/// Probabilities of candidate first tokens, as reported by a backend.
///
/// Top-k truncation is allowed: the entries need not sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstTokenDistribution {
    entries: BTreeMap<String, f64>,
}

impl FirstTokenDistribution {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Result<Self, ParseError> {
        let entries: BTreeMap<String, f64> = entries.into_iter().collect();
        let mut sum = 0.0;
        for (token, &p) in &entries {
            if !(0.0..=1.0).contains(&p) {
                return Err(ParseError::InvalidDistribution(format!(
                    "probability {p} for token {token:?} outside [0, 1]"
                )));
            }
            sum += p;
        }
        if sum > 1.0 + 1e-6 {
            return Err(ParseError::InvalidDistribution(format!(
                "probabilities sum to {sum} > 1"
            )));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &BTreeMap<String, f64> {
        &self.entries
    }

    /// Total probability mass on entries whose normalized text equals
    /// `token`. Normalization trims whitespace, strips the common BPE
    /// space markers, and lowercases, so `" Safe"` and `"\u{2581}safe"`
    /// both count toward `"safe"`.
    pub fn probability_of(&self, token: &str) -> f64 {
        let wanted = normalize_token(token);
        self.entries
            .iter()
            .filter(|(t, _)| normalize_token(t) == wanted)
            .map(|(_, &p)| p)
            .sum()
    }

    /// Raw probability reading of the `unsafe` token (no two-way
    /// normalization). Exposed for comparison against the normalized score.
    pub fn unsafe_probability(&self) -> f64 {
        self.probability_of("unsafe")
    }
}

fn normalize_token(token: &str) -> String {
    token
        .trim_matches(|c: char| c.is_whitespace() || c == '\u{2581}' || c == '\u{0120}')
        .to_ascii_lowercase()
}

/// Derives the classifier score from the first generated token.
///
/// `score = p_unsafe / (p_safe + p_unsafe)`, with tokens missing from the
/// distribution counting as 0; the two-way normalization keeps scores
/// comparable across backends with different top-k truncation. When no
/// distribution is available (or it carries neither token), the label
/// fallback applies: unsafe reads 1.0, safe reads 0.0.
pub fn score_from_first_token(
    dist: Option<&FirstTokenDistribution>,
    label: Option<Label>,
) -> Result<f64, ParseError> {
    if let Some(dist) = dist {
        let p_safe = dist.probability_of("safe");
        let p_unsafe = dist.probability_of("unsafe");
        let total = p_safe + p_unsafe;
        if total > 0.0 {
            return Ok(p_unsafe / total);
        }
    }
    label.map(label_fallback_score).ok_or(ParseError::NoSignal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::builtin_policy;
    use proptest::prelude::*;

    fn dist(pairs: &[(&str, f64)]) -> FirstTokenDistribution {
        FirstTokenDistribution::new(pairs.iter().map(|(t, p)| (t.to_string(), *p))).unwrap()
    }

    #[test]
    fn parses_safe() {
        let v = parse_verdict("safe", builtin_policy()).unwrap();
        assert_eq!(v.label(), Label::Safe);
        assert!(v.violated().is_empty());
        assert_eq!(v.score(), 0.0);
    }

    #[test]
    fn parses_unsafe_with_codes() {
        let v = parse_verdict("unsafe\nO1,O3", builtin_policy()).unwrap();
        assert_eq!(v.label(), Label::Unsafe);
        assert_eq!(v.violated().iter().copied().collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(v.score(), 1.0);
    }

    #[test]
    fn keyword_case_insensitive_codes_case_sensitive() {
        assert!(parse_verdict("SAFE", builtin_policy()).is_ok());
        assert!(parse_verdict(" Unsafe\nO2", builtin_policy()).is_ok());
        assert!(parse_verdict("unsafe\no2", builtin_policy()).is_err());
    }

    #[test]
    fn tolerates_surrounding_whitespace_and_bom() {
        let v = parse_verdict("\u{feff}  \n unsafe\nO6 \n", builtin_policy()).unwrap();
        assert_eq!(v.violated().iter().copied().collect::<Vec<_>>(), vec![6]);
    }

    #[test]
    fn duplicates_collapse_and_order_is_free() {
        let v = parse_verdict("unsafe\nO3, O1, O3", builtin_policy()).unwrap();
        assert_eq!(v.violated().iter().copied().collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn malformed_outputs() {
        let policy = builtin_policy();
        for raw in [
            "Sure, here's how to do that…",
            "unsafe",
            "unsafe\n",
            "unsafe\nO9",
            "unsafe\nO0",
            "unsafe\nX1",
            "unsafe\nO1\nextra",
            "safe\nO1",
            "unsafe\nO1,,O2",
            "",
        ] {
            assert!(
                matches!(parse_verdict(raw, policy), Err(ParseError::MalformedOutput { .. })),
                "expected malformed: {raw:?}"
            );
        }
    }

    #[test]
    fn render_canonicalizes_ascending() {
        let v = Verdict::new(Label::Unsafe, [3, 1].into_iter().collect(), 1.0, "").unwrap();
        assert_eq!(render_verdict(&v, builtin_policy()), "unsafe\nO1,O3");
        let s = Verdict::new(Label::Safe, BTreeSet::new(), 0.0, "").unwrap();
        assert_eq!(render_verdict(&s, builtin_policy()), "safe");
    }

    #[test]
    fn score_normalizes_two_way() {
        let d = dist(&[("safe", 0.2), ("unsafe", 0.7), ("other", 0.1)]);
        let score = score_from_first_token(Some(&d), None).unwrap();
        assert!((score - 0.7 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn score_degenerate_and_fallback() {
        let d = dist(&[("unsafe", 1.0)]);
        assert_eq!(score_from_first_token(Some(&d), None).unwrap(), 1.0);
        assert_eq!(score_from_first_token(None, Some(Label::Safe)).unwrap(), 0.0);
        assert_eq!(score_from_first_token(None, Some(Label::Unsafe)).unwrap(), 1.0);
        assert!(matches!(
            score_from_first_token(None, None),
            Err(ParseError::NoSignal)
        ));
        let neither = dist(&[("hello", 0.9)]);
        assert!(matches!(
            score_from_first_token(Some(&neither), None),
            Err(ParseError::NoSignal)
        ));
        assert_eq!(
            score_from_first_token(Some(&neither), Some(Label::Unsafe)).unwrap(),
            1.0
        );
    }

    #[test]
    fn score_counts_tokenizer_variants() {
        let d = dist(&[(" unsafe", 0.3), ("\u{2581}unsafe", 0.2), ("safe", 0.5)]);
        let score = score_from_first_token(Some(&d), None).unwrap();
        assert!((score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn distribution_validation() {
        assert!(FirstTokenDistribution::new([("a".to_string(), 1.2)]).is_err());
        assert!(FirstTokenDistribution::new([
            ("a".to_string(), 0.8),
            ("b".to_string(), 0.4)
        ])
        .is_err());
    }

    proptest! {
        // Grammar totality: arbitrary input must parse or fail, never panic.
        #[test]
        fn parse_never_panics(raw in ".*") {
            let _ = parse_verdict(&raw, builtin_policy());
        }

        // Monotone in p_unsafe, antitone in p_safe, always within [0, 1].
        #[test]
        fn score_monotonicity(p_safe in 0.0f64..=0.3, p_unsafe in 0.001f64..=0.3, bump in 0.0f64..=0.3) {
            let base = dist(&[("safe", p_safe), ("unsafe", p_unsafe)]);
            let more_unsafe = dist(&[("safe", p_safe), ("unsafe", p_unsafe + bump)]);
            let more_safe = dist(&[("safe", p_safe + bump), ("unsafe", p_unsafe)]);
            let s0 = score_from_first_token(Some(&base), None).unwrap();
            let s1 = score_from_first_token(Some(&more_unsafe), None).unwrap();
            let s2 = score_from_first_token(Some(&more_safe), None).unwrap();
            prop_assert!(s1 >= s0 - 1e-12);
            prop_assert!(s2 <= s0 + 1e-12);
            prop_assert!((0.0..=1.0).contains(&s0));
        }

        // Round-trip identity over random valid verdicts.
        #[test]
        fn roundtrip_random_subsets(mask in 1u8..64) {
            let violated: BTreeSet<usize> =
                (1..=6).filter(|i| mask & (1 << (i - 1)) != 0).collect();
            let v = Verdict::new(Label::Unsafe, violated.clone(), 1.0, "").unwrap();
            let parsed = parse_verdict(&render_verdict(&v, builtin_policy()), builtin_policy()).unwrap();
            prop_assert_eq!(parsed.label(), Label::Unsafe);
            prop_assert_eq!(parsed.violated(), &violated);
        }
    }
}
