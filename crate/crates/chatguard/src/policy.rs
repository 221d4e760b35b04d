//! Safety taxonomies (policies): loading, validation, and transformation.
//!
//! A [`Policy`] is an ordered set of risk categories, each carrying guideline
//! text that draws the line between acceptable and violating content.
//! Category indices are 1-based in every external representation (rendered
//! codes such as `O3`, dataset labels, verdicts); the crate ships a built-in
//! six-category taxonomy via [`builtin_policy`]. Policies are immutable after
//! load, so they can be shared freely across concurrent tasks.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The id under which the built-in taxonomy registers itself.
pub const BUILTIN_POLICY_ID: &str = "default";

const BUILTIN_POLICY_JSON: &str = include_str!("../data/default_policy.json");

#[derive(Debug, Error)]
pub enum PolicyError {
    /// The document could not be decoded against the policy file schema.
    #[error("policy schema error: {0}")]
    Schema(String),
    /// The document decoded but violates a policy invariant.
    #[error("policy validation error: {0}")]
    Validation(String),
    /// A subset was requested with no category indices.
    #[error("subset selection is empty")]
    EmptySubset,
    /// A category index fell outside `1..=len`.
    #[error("category index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
}

/// One numbered risk category: a short name plus the guideline text
/// describing what is unsafe (and, where relevant, what stays safe) in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub guideline: String,
}

impl Category {
    pub fn new(name: impl Into<String>, guideline: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            guideline: guideline.into(),
        }
    }
}

/// An ordered, validated safety taxonomy.
///
/// Categories are addressed by 1-based index. `code_letter` is the single
/// uppercase letter used when rendering category codes (`O1`, `O2`, ...);
/// it defaults to `'O'` in the file format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    id: String,
    code_letter: char,
    categories: Vec<Category>,
}

impl Policy {
    /// Builds a policy, enforcing all invariants: at least one category,
    /// unique nonempty names, nonempty guidelines, single ASCII uppercase
    /// code letter.
    pub fn new(
        id: impl Into<String>,
        code_letter: char,
        categories: Vec<Category>,
    ) -> Result<Self, PolicyError> {
        let id = id.into();
        if !(code_letter.is_ascii_uppercase()) {
            return Err(PolicyError::Validation(format!(
                "code_letter must be one ASCII uppercase letter, got {code_letter:?}"
            )));
        }
        if categories.is_empty() {
            return Err(PolicyError::Validation(
                "policy must contain at least one category".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for (i, cat) in categories.iter().enumerate() {
            if cat.name.trim().is_empty() {
                return Err(PolicyError::Validation(format!(
                    "category {} has an empty name",
                    i + 1
                )));
            }
            // Names head single lines in rendered guideline blocks.
            if cat.name.contains('\n') || cat.name.contains('\r') {
                return Err(PolicyError::Validation(format!(
                    "category {} name contains a line break",
                    i + 1
                )));
            }
            if cat.guideline.trim().is_empty() {
                return Err(PolicyError::Validation(format!(
                    "category '{}' has an empty guideline",
                    cat.name
                )));
            }
            if !seen.insert(cat.name.as_str()) {
                return Err(PolicyError::Validation(format!(
                    "duplicate category name '{}'",
                    cat.name
                )));
            }
        }
        Ok(Self {
            id,
            code_letter,
            categories,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn code_letter(&self) -> char {
        self.code_letter
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    /// Number of categories.
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Looks up a category by 1-based index.
    pub fn get(&self, index: usize) -> Option<&Category> {
        if index == 0 {
            return None;
        }
        self.categories.get(index - 1)
    }

    /// True when `index` addresses a category of this policy.
    pub fn contains_index(&self, index: usize) -> bool {
        index >= 1 && index <= self.categories.len()
    }

    /// 1-based index of the category with the given name, if any.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name).map(|i| i + 1)
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyDoc {
    id: String,
    #[serde(default)]
    code_letter: Option<String>,
    categories: Vec<Category>,
}

/// Parses and validates a policy document (JSON).
///
/// Decoding failures (missing field, wrong type) surface as
/// [`PolicyError::Schema`]; invariant breaches (duplicate names, empty
/// guideline, multi-character code letter) as [`PolicyError::Validation`].
/// Category order is preserved exactly as written.
pub fn load_policy(document: &str) -> Result<Policy, PolicyError> {
    let doc: PolicyDoc =
        serde_json::from_str(document).map_err(|e| PolicyError::Schema(e.to_string()))?;
    let letter = match doc.code_letter.as_deref() {
        None => 'O',
        Some(s) => {
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => c,
                _ => {
                    return Err(PolicyError::Validation(format!(
                        "code_letter must be exactly one character, got {s:?}"
                    )))
                }
            }
        }
    };
    Policy::new(doc.id, letter, doc.categories)
}

/// Canonical writer: renders a policy back to the document form accepted by
/// [`load_policy`]. `load_policy(render_policy(p)) == p` for every valid `p`.
pub fn render_policy(policy: &Policy) -> String {
    let doc = PolicyDoc {
        id: policy.id.clone(),
        code_letter: Some(policy.code_letter.to_string()),
        categories: policy.categories.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("policy serialization cannot fail")
}

/// The built-in six-category taxonomy shipped with the crate.
///
/// Order: 1 Violence & Hate, 2 Sexual Content, 3 Guns & Illegal Weapons,
/// 4 Regulated or Controlled Substances, 5 Suicide & Self Harm,
/// 6 Criminal Planning. The same document ships as
/// `data/default_policy.json`.
pub fn builtin_policy() -> &'static Policy {
    static BUILTIN: OnceLock<Policy> = OnceLock::new();
    BUILTIN.get_or_init(|| {
        load_policy(BUILTIN_POLICY_JSON).expect("built-in policy document is valid")
    })
}

/// A contiguously reindexed selection of a parent policy's categories.
///
/// The selected original indices stay available so labels can be remapped in
/// both directions (original space <-> subset space).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicySubset {
    parent_id: String,
    selected: Vec<usize>,
    policy: Policy,
}

impl PolicySubset {
    pub fn parent_id(&self) -> &str {
        &self.parent_id
    }

    /// Original 1-based indices, strictly increasing.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    /// The reindexed policy whose categories are numbered `1..=k`.
    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn into_policy(self) -> Policy {
        self.policy
    }

    /// Maps an original-index to its subset index, if selected.
    pub fn to_subset_index(&self, original: usize) -> Option<usize> {
        self.selected.iter().position(|&i| i == original).map(|p| p + 1)
    }

    /// Maps a subset index back to the original index.
    pub fn to_parent_index(&self, subset: usize) -> Option<usize> {
        if subset == 0 {
            return None;
        }
        self.selected.get(subset - 1).copied()
    }
}

/// Selects categories by original 1-based index and renumbers them 1..=k in
/// ascending original order. Duplicate indices collapse; the selection must
/// be nonempty and in range.
pub fn subset(
    policy: &Policy,
    indices: impl IntoIterator<Item = usize>,
) -> Result<PolicySubset, PolicyError> {
    let set: BTreeSet<usize> = indices.into_iter().collect();
    if set.is_empty() {
        return Err(PolicyError::EmptySubset);
    }
    for &index in &set {
        if !policy.contains_index(index) {
            return Err(PolicyError::IndexOutOfRange {
                index,
                len: policy.len(),
            });
        }
    }
    let selected: Vec<usize> = set.into_iter().collect();
    let categories: Vec<Category> = selected
        .iter()
        .map(|&i| policy.categories[i - 1].clone())
        .collect();
    let reindexed = Policy::new(policy.id.clone(), policy.code_letter, categories)?;
    Ok(PolicySubset {
        parent_id: policy.id.clone(),
        selected,
        policy: reindexed,
    })
}

/// Concurrent-read, serialized-write store of named policies.
///
/// Registered policies are handed out as `Arc<Policy>`; reload replaces the
/// stored value without disturbing readers holding the old one.
#[derive(Debug, Default)]
pub struct PolicyRegistry {
    inner: RwLock<BTreeMap<String, Arc<Policy>>>,
}

impl PolicyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// A registry preloaded with the built-in policy.
    pub fn with_builtin() -> Self {
        let registry = Self::new();
        registry.register(builtin_policy().clone());
        registry
    }

    /// Inserts (or replaces) a policy under its own id.
    pub fn register(&self, policy: Policy) -> Arc<Policy> {
        let shared = Arc::new(policy);
        self.inner
            .write()
            .expect("policy registry lock poisoned")
            .insert(shared.id().to_string(), Arc::clone(&shared));
        shared
    }

    pub fn get(&self, id: &str) -> Option<Arc<Policy>> {
        self.inner
            .read()
            .expect("policy registry lock poisoned")
            .get(id)
            .cloned()
    }

    pub fn list(&self) -> Vec<Arc<Policy>> {
        self.inner
            .read()
            .expect("policy registry lock poisoned")
            .values()
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_preserves_category_order() {
        let doc = r#"{"id":"p","categories":[
            {"name":"B","guideline":"second in file, first in policy? no: order preserved"},
            {"name":"A","guideline":"stays second"}]}"#;
        let policy = load_policy(doc).unwrap();
        assert_eq!(policy.len(), 2);
        assert_eq!(policy.get(1).unwrap().name, "B");
        assert_eq!(policy.get(2).unwrap().name, "A");
        assert_eq!(policy.code_letter(), 'O');
    }

    #[test]
    fn duplicate_names_rejected() {
        let doc = r#"{"id":"p","categories":[
            {"name":"Violence","guideline":"x"},
            {"name":"Violence","guideline":"y"}]}"#;
        match load_policy(doc) {
            Err(PolicyError::Validation(msg)) => assert!(msg.contains("Violence")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors_are_distinguished() {
        assert!(matches!(
            load_policy(r#"{"categories":[]}"#),
            Err(PolicyError::Schema(_))
        ));
        assert!(matches!(
            load_policy(r#"{"id":"p","categories":[]}"#),
            Err(PolicyError::Validation(_))
        ));
        assert!(matches!(
            load_policy(r#"{"id":"p","code_letter":"OO","categories":[{"name":"A","guideline":"g"}]}"#),
            Err(PolicyError::Validation(_))
        ));
        assert!(matches!(
            load_policy(r#"{"id":"p","code_letter":"o","categories":[{"name":"A","guideline":"g"}]}"#),
            Err(PolicyError::Validation(_))
        ));
        assert!(matches!(
            load_policy(r#"{"id":"p","categories":[{"name":"A","guideline":"  "}]}"#),
            Err(PolicyError::Validation(_))
        ));
        assert!(matches!(
            load_policy("{\"id\":\"p\",\"categories\":[{\"name\":\"A\\nB\",\"guideline\":\"g\"}]}"),
            Err(PolicyError::Validation(_))
        ));
    }

    #[test]
    fn builtin_matches_shipped_file() {
        let from_file = load_policy(BUILTIN_POLICY_JSON).unwrap();
        assert_eq!(&from_file, builtin_policy());
    }

    #[test]
    fn builtin_shape() {
        let policy = builtin_policy();
        assert_eq!(policy.len(), 6);
        assert_eq!(policy.get(1).unwrap().name, "Violence & Hate");
        assert_eq!(policy.get(2).unwrap().name, "Sexual Content");
        assert_eq!(policy.get(3).unwrap().name, "Guns & Illegal Weapons");
        assert_eq!(policy.get(4).unwrap().name, "Regulated or Controlled Substances");
        assert_eq!(policy.get(5).unwrap().name, "Suicide & Self Harm");
        assert_eq!(policy.get(6).unwrap().name, "Criminal Planning");
        assert_eq!(policy.code_letter(), 'O');
    }

    #[test]
    fn subset_reindexes_contiguously() {
        let sub = subset(builtin_policy(), [3]).unwrap();
        assert_eq!(sub.policy().len(), 1);
        assert_eq!(sub.policy().get(1).unwrap().name, "Guns & Illegal Weapons");
        assert_eq!(sub.to_parent_index(1), Some(3));
        assert_eq!(sub.to_subset_index(3), Some(1));
        assert_eq!(sub.to_subset_index(1), None);
    }

    #[test]
    fn subset_full_selection_is_identity() {
        let policy = builtin_policy();
        let sub = subset(policy, 1..=6).unwrap();
        assert_eq!(sub.policy(), policy);
    }

    #[test]
    fn subset_errors() {
        assert!(matches!(
            subset(builtin_policy(), std::iter::empty()),
            Err(PolicyError::EmptySubset)
        ));
        assert!(matches!(
            subset(builtin_policy(), [7]),
            Err(PolicyError::IndexOutOfRange { index: 7, len: 6 })
        ));
        assert!(matches!(
            subset(builtin_policy(), [0]),
            Err(PolicyError::IndexOutOfRange { index: 0, len: 6 })
        ));
    }

    #[test]
    fn subset_composition_matches_mapped_selection() {
        let policy = builtin_policy();
        let first = subset(policy, [2, 4, 6]).unwrap();
        // Indices in the subset's own space.
        let second = subset(first.policy(), [1, 3]).unwrap();
        let mapped: Vec<usize> = [1usize, 3]
            .iter()
            .map(|&i| first.to_parent_index(i).unwrap())
            .collect();
        let direct = subset(policy, mapped).unwrap();
        assert_eq!(second.policy(), direct.policy());
    }

    #[test]
    fn policy_roundtrip_through_canonical_writer() {
        let policy = builtin_policy();
        assert_eq!(&load_policy(&render_policy(policy)).unwrap(), policy);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arbitrary_policy() -> impl Strategy<Value = Policy> {
            (
                "[a-z][a-z0-9-]{0,12}",
                0u8..26,
                proptest::collection::vec(("[^\\s]{1,8}", ".{1,40}"), 1..6),
            )
                .prop_map(|(id, letter, cats)| {
                    let categories = cats
                        .into_iter()
                        .enumerate()
                        .map(|(i, (name, guideline))| {
                            Category::new(format!("{name}-{i}"), format!("g {guideline}"))
                        })
                        .collect();
                    Policy::new(id, (b'A' + letter) as char, categories).unwrap()
                })
        }

        proptest! {
            // Canonical writer round-trip over arbitrary valid policies.
            #[test]
            fn render_load_roundtrip(policy in arbitrary_policy()) {
                prop_assert_eq!(&load_policy(&render_policy(&policy)).unwrap(), &policy);
            }

            // Any nonempty valid selection keeps |S| categories; full
            // selection is the identity.
            #[test]
            fn subset_sizes(policy in arbitrary_policy(), raw in proptest::collection::btree_set(1usize..=6, 1..6)) {
                let selection: BTreeSet<usize> =
                    raw.into_iter().filter(|&i| i <= policy.len()).collect();
                prop_assume!(!selection.is_empty());
                let sub = subset(&policy, selection.iter().copied()).unwrap();
                prop_assert_eq!(sub.policy().len(), selection.len());
                let full = subset(&policy, 1..=policy.len()).unwrap();
                prop_assert_eq!(full.policy(), &policy);
            }
        }
    }

    #[test]
    fn registry_register_and_get() {
        let registry = PolicyRegistry::with_builtin();
        assert!(registry.get(BUILTIN_POLICY_ID).is_some());
        assert!(registry.get("missing").is_none());
        let custom = Policy::new("custom", 'C', vec![Category::new("A", "g")]).unwrap();
        registry.register(custom);
        assert_eq!(registry.list().len(), 2);
    }
}
