//! Dataset ingestion, train/eval splitting, category statistics, the three
//! evaluation methodologies, and the metric engine.
//!
//! Datasets are JSONL, one [`AnnotatedExample`] per line, carrying four
//! annotations: prompt label, prompt categories, response label, response
//! categories (the response pair optional for prompt-only sets). Foreign
//! datasets load through declarative adapter manifests instead of code.

pub mod metrics;
pub mod run;

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parse::Label;
use crate::policy::Policy;
use crate::prompt::{Conversation, Message, Target};

pub use metrics::{
    average_precision, metrics_report, pr_f1_at_threshold, precision_recall_curve,
    render_text_table, MetricsReport, PrPoint, ScoredPrediction,
};
pub use run::{
    evaluate_one_vs_all, evaluate_one_vs_benign, evaluate_overall_binary, EvalConfig,
    ModelUnderTest,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("dataset line {line}: label inconsistency: {message}")]
    LabelInconsistency { line: usize, message: String },
    #[error("no positive gold labels; metric undefined")]
    NoPositives,
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("example {id}: category index {index} out of range for policy '{policy}' ({len} categories)")]
    CategoryOutOfRange {
        id: String,
        index: usize,
        policy: String,
        len: usize,
    },
    #[error("example {id} lacks the response annotations required for response-target evaluation")]
    MissingResponseAnnotation { id: String },
    #[error("adapter manifest invalid: {0}")]
    Adapter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A `(label, violated category set)` pair for one classification target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub label: Label,
    pub violated: BTreeSet<usize>,
}

impl Annotation {
    pub fn safe() -> Self {
        Self {
            label: Label::Safe,
            violated: BTreeSet::new(),
        }
    }

    pub fn unsafe_with(violated: BTreeSet<usize>) -> Self {
        Self {
            label: Label::Unsafe,
            violated,
        }
    }

    pub fn is_consistent(&self) -> bool {
        match self.label {
            Label::Safe => self.violated.is_empty(),
            Label::Unsafe => !self.violated.is_empty(),
        }
    }
}

/// One dataset record: a conversation plus its four annotation labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedExample {
    id: String,
    conversation: Conversation,
    prompt_label: Label,
    prompt_categories: BTreeSet<usize>,
    response_label: Option<Label>,
    response_categories: BTreeSet<usize>,
}

impl AnnotatedExample {
    pub fn new(
        id: impl Into<String>,
        conversation: Conversation,
        prompt: Annotation,
        response: Option<Annotation>,
    ) -> Result<Self, EvalError> {
        let id = id.into();
        if !prompt.is_consistent() {
            return Err(EvalError::LabelInconsistency {
                line: 0,
                message: format!("example {id}: prompt label and categories disagree"),
            });
        }
        if let Some(r) = &response {
            if !r.is_consistent() {
                return Err(EvalError::LabelInconsistency {
                    line: 0,
                    message: format!("example {id}: response label and categories disagree"),
                });
            }
        }
        let (response_label, response_categories) = match response {
            Some(r) => (Some(r.label), r.violated),
            None => (None, BTreeSet::new()),
        };
        Ok(Self {
            id,
            conversation,
            prompt_label: prompt.label,
            prompt_categories: prompt.violated,
            response_label,
            response_categories,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn conversation(&self) -> &Conversation {
        &self.conversation
    }

    pub fn prompt_label(&self) -> Label {
        self.prompt_label
    }

    pub fn prompt_categories(&self) -> &BTreeSet<usize> {
        &self.prompt_categories
    }

    pub fn response_label(&self) -> Option<Label> {
        self.response_label
    }

    pub fn response_categories(&self) -> &BTreeSet<usize> {
        &self.response_categories
    }

    /// The annotation for one classification target; `None` when the
    /// example carries no response annotations and the response side is
    /// requested.
    pub fn annotation(&self, target: Target) -> Option<Annotation> {
        match target {
            Target::Prompt => Some(Annotation {
                label: self.prompt_label,
                violated: self.prompt_categories.clone(),
            }),
            Target::Response => self.response_label.map(|label| Annotation {
                label,
                violated: self.response_categories.clone(),
            }),
        }
    }

    /// Checks every category index against a policy.
    pub fn validate_against(&self, policy: &Policy) -> Result<(), EvalError> {
        for &index in self.prompt_categories.iter().chain(&self.response_categories) {
            if !policy.contains_index(index) {
                return Err(EvalError::CategoryOutOfRange {
                    id: self.id.clone(),
                    index,
                    policy: policy.id().to_string(),
                    len: policy.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawExample {
    id: String,
    messages: Vec<Message>,
    prompt_label: Label,
    #[serde(default)]
    prompt_categories: Vec<usize>,
    #[serde(default)]
    response_label: Option<Label>,
    #[serde(default)]
    response_categories: Option<Vec<usize>>,
}

fn example_from_raw(raw: RawExample, line: usize) -> Result<AnnotatedExample, EvalError> {
    let RawExample {
        id,
        messages,
        prompt_label,
        prompt_categories,
        response_label,
        response_categories,
    } = raw;
    let conversation = Conversation::new(messages).map_err(|e| EvalError::Schema {
        line,
        message: e.to_string(),
    })?;
    for &index in prompt_categories.iter().chain(response_categories.iter().flatten()) {
        if index == 0 {
            return Err(EvalError::Schema {
                line,
                message: "category indices are 1-based; 0 is invalid".into(),
            });
        }
    }
    let prompt = Annotation {
        label: prompt_label,
        violated: prompt_categories.into_iter().collect(),
    };
    if !prompt.is_consistent() {
        return Err(EvalError::LabelInconsistency {
            line,
            message: format!(
                "prompt_label is {} but prompt_categories {} empty",
                prompt.label,
                if prompt.label == Label::Unsafe { "is" } else { "is not" }
            ),
        });
    }
    let response = match (response_label, response_categories) {
        (None, None) => None,
        (None, Some(categories)) if categories.is_empty() => None,
        (None, Some(_)) => {
            return Err(EvalError::LabelInconsistency {
                line,
                message: "response_categories present without response_label".into(),
            })
        }
        (Some(label), categories) => {
            let annotation = Annotation {
                label,
                violated: categories.unwrap_or_default().into_iter().collect(),
            };
            if !annotation.is_consistent() {
                return Err(EvalError::LabelInconsistency {
                    line,
                    message: format!(
                        "response_label is {} but response_categories {} empty",
                        annotation.label,
                        if annotation.label == Label::Unsafe { "is" } else { "is not" }
                    ),
                });
            }
            Some(annotation)
        }
    };
    AnnotatedExample::new(id, conversation, prompt, response).map_err(|e| match e {
        EvalError::LabelInconsistency { message, .. } => {
            EvalError::LabelInconsistency { line, message }
        }
        other => other,
    })
}

/// Loads a JSONL dataset, validating schema and label consistency per line.
/// Blank lines are skipped; errors carry the 1-based line number.
pub fn load_dataset_from_reader(reader: impl BufRead) -> Result<Vec<AnnotatedExample>, EvalError> {
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let raw: RawExample = serde_json::from_str(&line).map_err(|e| EvalError::Schema {
            line: lineno,
            message: e.to_string(),
        })?;
        examples.push(example_from_raw(raw, lineno)?);
    }
    Ok(examples)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<AnnotatedExample>, EvalError> {
    let file = std::fs::File::open(path)?;
    load_dataset_from_reader(std::io::BufReader::new(file))
}

#[derive(Deserialize)]
struct RawPoolRecord {
    #[serde(flatten)]
    example: RawExample,
    #[serde(default)]
    hard_negative: bool,
}

/// Loads a few-shot demonstration pool: the dataset format plus a boolean
/// `hard_negative` field. Each record becomes a demonstration for the
/// given target, with the conversation trimmed to end on the target's
/// focus role; records lacking the target's annotations are rejected with
/// their line number.
pub fn load_few_shot_pool_from_reader(
    reader: impl BufRead,
    target: Target,
) -> Result<Vec<crate::prompt::FewShotExample>, EvalError> {
    let mut pool = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let raw: RawPoolRecord = serde_json::from_str(&line).map_err(|e| EvalError::Schema {
            line: lineno,
            message: e.to_string(),
        })?;
        let hard_negative = raw.hard_negative;
        let example = example_from_raw(raw.example, lineno)?;
        let annotation = example.annotation(target).ok_or_else(|| EvalError::Schema {
            line: lineno,
            message: format!("pool record has no {target} annotations"),
        })?;
        let conversation = example
            .conversation()
            .truncate_for_target(target)
            .ok_or_else(|| EvalError::Schema {
                line: lineno,
                message: format!(
                    "pool record has no {} message for target '{target}'",
                    target.focus_role()
                ),
            })?;
        let demo = crate::prompt::FewShotExample::new(
            conversation,
            annotation.label,
            annotation.violated,
            hard_negative,
        )
        .map_err(|e| EvalError::Schema {
            line: lineno,
            message: e.to_string(),
        })?;
        pool.push(demo);
    }
    Ok(pool)
}

pub fn load_few_shot_pool(
    path: impl AsRef<Path>,
    target: Target,
) -> Result<Vec<crate::prompt::FewShotExample>, EvalError> {
    let file = std::fs::File::open(path)?;
    load_few_shot_pool_from_reader(std::io::BufReader::new(file), target)
}

/// Declarative mapping from a foreign prompt-only dataset onto the local
/// schema: which fields hold id and text, and how labels collapse into
/// `prompt_label` / `prompt_categories`.
#[derive(Debug, Clone, Deserialize)]
pub struct AdapterManifest {
    pub name: String,
    #[serde(default = "default_id_field")]
    pub id_field: String,
    pub text_field: String,
    pub label: LabelRule,
}

fn default_id_field() -> String {
    "id".to_string()
}

/// How foreign labels become local annotations.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelRule {
    /// Binary-toxicity style: one truthy field flags the whole record
    /// unsafe, mapped to the listed category indices.
    BinaryFlag { field: String, categories: Vec<usize> },
    /// Per-category-flag style: each named field is a binary flag mapped
    /// to a category index; absent fields read as unset.
    CategoryFlags { map: BTreeMap<String, usize> },
}

impl AdapterManifest {
    pub fn from_json(document: &str) -> Result<Self, EvalError> {
        let manifest: AdapterManifest =
            serde_json::from_str(document).map_err(|e| EvalError::Adapter(e.to_string()))?;
        if let LabelRule::BinaryFlag { categories, .. } = &manifest.label {
            if categories.is_empty() {
                return Err(EvalError::Adapter(
                    "binary_flag adapter must map to at least one category".into(),
                ));
            }
        }
        Ok(manifest)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let contents = std::fs::read_to_string(path)?;
        Self::from_json(&contents)
    }
}

fn truthy(value: &serde_json::Value) -> bool {
    match value {
        serde_json::Value::Bool(b) => *b,
        serde_json::Value::Number(n) => n.as_f64().map(|f| f != 0.0).unwrap_or(false),
        _ => false,
    }
}

/// Loads a foreign prompt-only dataset through an adapter manifest.
pub fn load_dataset_with_adapter(
    reader: impl BufRead,
    manifest: &AdapterManifest,
) -> Result<Vec<AnnotatedExample>, EvalError> {
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let record: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| EvalError::Schema {
                line: lineno,
                message: e.to_string(),
            })?;
        let id = match record.get(&manifest.id_field) {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => format!("line-{lineno}"),
        };
        let text = record
            .get(&manifest.text_field)
            .and_then(|v| v.as_str())
            .ok_or_else(|| EvalError::Schema {
                line: lineno,
                message: format!("missing text field {:?}", manifest.text_field),
            })?;
        let violated: BTreeSet<usize> = match &manifest.label {
            LabelRule::BinaryFlag { field, categories } => {
                let flag = record.get(field).ok_or_else(|| EvalError::Schema {
                    line: lineno,
                    message: format!("missing label field {field:?}"),
                })?;
                if truthy(flag) {
                    categories.iter().copied().collect()
                } else {
                    BTreeSet::new()
                }
            }
            LabelRule::CategoryFlags { map } => map
                .iter()
                .filter(|(field, _)| record.get(*field).is_some_and(truthy))
                .map(|(_, &index)| index)
                .collect(),
        };
        let prompt = if violated.is_empty() {
            Annotation::safe()
        } else {
            Annotation::unsafe_with(violated)
        };
        let conversation =
            Conversation::new(vec![Message::user(text)]).map_err(|e| EvalError::Schema {
                line: lineno,
                message: e.to_string(),
            })?;
        examples.push(AnnotatedExample::new(id, conversation, prompt, None)?);
    }
    Ok(examples)
}

/// Seeded uniform shuffle, then a 3:1 cut: the first `round(0.75·n)`
/// shuffled items become the training split, the rest the evaluation
/// split. The two sides partition the input exactly.
pub fn split_dataset<T>(examples: Vec<T>, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut shuffled = examples;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n_train = (shuffled.len() as f64 * 0.75).round() as usize;
    let eval = shuffled.split_off(n_train);
    (shuffled, eval)
}

/// Per-category dataset counts, prompt side and response side, plus safe
/// totals. An example violating several categories counts once in each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategoryStats {
    pub rows: Vec<CategoryCount>,
    pub safe_prompts: usize,
    pub safe_responses: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategoryCount {
    pub index: usize,
    pub name: String,
    pub prompts: usize,
    pub responses: usize,
}

pub fn category_stats(examples: &[AnnotatedExample], policy: &Policy) -> CategoryStats {
    let mut rows: Vec<CategoryCount> = policy
        .categories()
        .iter()
        .enumerate()
        .map(|(i, c)| CategoryCount {
            index: i + 1,
            name: c.name.clone(),
            prompts: 0,
            responses: 0,
        })
        .collect();
    let mut safe_prompts = 0;
    let mut safe_responses = 0;
    for example in examples {
        for &index in example.prompt_categories() {
            if let Some(row) = rows.get_mut(index - 1) {
                row.prompts += 1;
            }
        }
        for &index in example.response_categories() {
            if let Some(row) = rows.get_mut(index - 1) {
                row.responses += 1;
            }
        }
        if example.prompt_label() == Label::Safe {
            safe_prompts += 1;
        }
        if example.response_label() == Some(Label::Safe) {
            safe_responses += 1;
        }
    }
    CategoryStats {
        rows,
        safe_prompts,
        safe_responses,
    }
}

impl CategoryStats {
    /// Plain-text table: category rows plus a Safe row, with prompt and
    /// response columns.
    pub fn to_text_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(["Category".len(), "Safe".len()])
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        out.push_str(&format!("{:<width$}  {:>8}  {:>9}\n", "Category", "Prompts", "Responses"));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>8}  {:>9}\n",
                row.name, row.prompts, row.responses
            ));
        }
        out.push_str(&format!(
            "{:<width$}  {:>8}  {:>9}\n",
            "Safe", self.safe_prompts, self.safe_responses
        ));
        out
    }
}
