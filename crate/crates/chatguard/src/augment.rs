//! Training-data augmentation: turns annotated examples into
//! instruction-format records for external fine-tuning trainers.
//!
//! Three transforms teach a model to honor whatever category subset a task
//! includes: dropping unviolated categories, dropping the violated ones
//! while flipping the label to safe, and shuffling category indices with a
//! fresh permutation per record so index↔category bindings cannot be
//! memorized. Emission is fully reproducible from (dataset, config, seed):
//! each record's RNG derives from the seed, the example id, and the target.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::{Annotation, AnnotatedExample};
use crate::parse::{render_verdict, Label, Verdict};
use crate::policy::{subset, Policy, PolicySubset};
use crate::prompt::{build_task_prompt, ClassificationTask, Target};

#[derive(Debug, Error)]
pub enum AugmentError {
    /// Flip-to-safe would empty the policy; the record is skipped.
    #[error("every category is violated; dropping them all would leave an empty policy")]
    AllCategoriesViolated,
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
}

/// A permutation of `1..=n`, stored as the new index of each old index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    new_of_old: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            new_of_old: (1..=n).collect(),
        }
    }

    /// A uniformly random permutation of `1..=n`.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        use rand::seq::SliceRandom;
        let mut new_of_old: Vec<usize> = (1..=n).collect();
        new_of_old.shuffle(rng);
        Self { new_of_old }
    }

    pub fn len(&self) -> usize {
        self.new_of_old.len()
    }

    pub fn is_empty(&self) -> bool {
        self.new_of_old.is_empty()
    }

    /// New index of an old 1-based index.
    pub fn map(&self, old: usize) -> Option<usize> {
        if old == 0 {
            return None;
        }
        self.new_of_old.get(old - 1).copied()
    }

    pub fn inverse(&self) -> Permutation {
        let mut old_of_new = vec![0; self.new_of_old.len()];
        for (old0, &new) in self.new_of_old.iter().enumerate() {
            old_of_new[new - 1] = old0 + 1;
        }
        Self {
            new_of_old: old_of_new,
        }
    }
}

/// Reorders a policy's categories through a permutation and remaps the
/// annotation's indices accordingly. The permutation length must equal the
/// policy size.
pub fn apply_permutation(
    annotation: &Annotation,
    policy: &Policy,
    permutation: &Permutation,
) -> (Policy, Annotation) {
    assert_eq!(
        permutation.len(),
        policy.len(),
        "permutation length must match the policy size"
    );
    let inverse = permutation.inverse();
    let categories = (1..=policy.len())
        .map(|new| {
            let old = inverse.map(new).expect("permutation covers 1..=n");
            policy.get(old).expect("old index is in range").clone()
        })
        .collect();
    let permuted = Policy::new(policy.id().to_string(), policy.code_letter(), categories)
        .expect("permuting a valid policy keeps it valid");
    let violated: BTreeSet<usize> = annotation
        .violated
        .iter()
        .map(|&i| permutation.map(i).expect("violated index is in range"))
        .collect();
    (
        permuted,
        Annotation {
            label: annotation.label,
            violated,
        },
    )
}

/// Removes a uniform random number of *non-violated* categories.
///
/// The drop count is drawn from `0..=n−|violated|` (capped one short of
/// emptying the policy for safe examples); violated categories are never
/// removed, and the annotation's indices are remapped into the reduced
/// policy's 1..=k space.
pub fn drop_unviolated_categories(
    annotation: &Annotation,
    policy: &Policy,
    rng: &mut impl Rng,
) -> (PolicySubset, Annotation) {
    let n = policy.len();
    let unviolated: Vec<usize> = (1..=n).filter(|i| !annotation.violated.contains(i)).collect();
    let max_drop = if annotation.violated.is_empty() {
        n.saturating_sub(1)
    } else {
        unviolated.len()
    };
    let drop_count = rng.random_range(0..=max_drop);
    let dropped: BTreeSet<usize> = unviolated
        .choose_multiple(rng, drop_count)
        .copied()
        .collect();
    let kept: Vec<usize> = (1..=n).filter(|i| !dropped.contains(i)).collect();
    let reduced = subset(policy, kept).expect("kept set is nonempty and in range");
    let violated: BTreeSet<usize> = annotation
        .violated
        .iter()
        .map(|&i| {
            reduced
                .to_subset_index(i)
                .expect("violated categories are never dropped")
        })
        .collect();
    let remapped = Annotation {
        label: annotation.label,
        violated,
    };
    (reduced, remapped)
}

/// Removes all violated categories from the policy and flips the label to
/// safe. Identity on already-safe examples. Errors when the violated set
/// covers the whole policy (an empty policy is not representable).
pub fn drop_violated_mark_safe(
    annotation: &Annotation,
    policy: &Policy,
) -> Result<(PolicySubset, Annotation), AugmentError> {
    if annotation.label == Label::Safe {
        let identity = subset(policy, 1..=policy.len()).expect("full selection is valid");
        return Ok((identity, annotation.clone()));
    }
    let kept: Vec<usize> = (1..=policy.len())
        .filter(|i| !annotation.violated.contains(i))
        .collect();
    if kept.is_empty() {
        return Err(AugmentError::AllCategoriesViolated);
    }
    let reduced = subset(policy, kept).expect("kept set is nonempty and in range");
    Ok((reduced, Annotation::safe()))
}

/// Applies a fresh uniform random permutation to the category order,
/// remapping the annotation through it. Returns the permutation so it can
/// be inverted.
pub fn shuffle_category_indices(
    annotation: &Annotation,
    policy: &Policy,
    rng: &mut impl Rng,
) -> (Policy, Permutation, Annotation) {
    let permutation = Permutation::random(policy.len(), rng);
    let (permuted, remapped) = apply_permutation(annotation, policy, &permutation);
    (permuted, permutation, remapped)
}

/// One instruction-format training record: the rendered task as input, the
/// canonical verdict as output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub input: String,
    pub output: String,
    pub meta: RecordMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub source_id: String,
    pub target: Target,
    pub transforms: Vec<String>,
    pub seed: u64,
    /// Label and violated set after remapping, for audit and verification.
    pub label: Label,
    pub violated: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub targets: Vec<Target>,
    /// Probability of dropping a random number of unviolated categories.
    pub p_drop_unviolated: f64,
    /// Probability of emitting a flipped-to-safe view of an unsafe record.
    pub p_flip_safe: f64,
    /// Probability of shuffling category indices.
    pub p_shuffle: f64,
    pub seed: u64,
    /// When set, the flipped record replaces the original instead of being
    /// emitted alongside it.
    pub flip_replaces: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        // The transform rates are this crate's defaults, not values taken
        // from any reference dataset; tune per deployment.
        Self {
            targets: vec![Target::Prompt, Target::Response],
            p_drop_unviolated: 0.5,
            p_flip_safe: 0.15,
            p_shuffle: 1.0,
            seed: 0,
            flip_replaces: false,
        }
    }
}

impl AugmentConfig {
    fn validate(&self) -> Result<(), AugmentError> {
        for (name, p) in [
            ("p_drop_unviolated", self.p_drop_unviolated),
            ("p_flip_safe", self.p_flip_safe),
            ("p_shuffle", self.p_shuffle),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(AugmentError::InvalidConfig(format!(
                    "{name} = {p} outside [0, 1]"
                )));
            }
        }
        if self.targets.is_empty() {
            return Err(AugmentError::InvalidConfig("no targets configured".into()));
        }
        Ok(())
    }
}

/// Outcome of an emission run.
#[derive(Debug, Clone)]
pub struct AugmentRun {
    pub records: Vec<TrainingRecord>,
    /// (example, target) units skipped because the target annotation or a
    /// usable conversation was missing.
    pub skipped_units: usize,
    /// Flip transforms skipped because every category was violated.
    pub skipped_flips: usize,
}

/// Per-record RNG: stable across processes and parallelism, derived from
/// the run seed, the example id, and the target.
fn record_rng(seed: u64, example_id: &str, target: Target) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(example_id.as_bytes());
    hasher.update([0u8, matches!(target, Target::Response) as u8]);
    let digest = hasher.finalize();
    let mut rng_seed = [0u8; 32];
    rng_seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(rng_seed)
}

/// Runs the full pipeline: per example and target, applies (with the
/// configured probabilities) drop-unviolated, flip-to-safe, then a fresh
/// index shuffle per emitted record, and renders each as a task prompt plus
/// canonical verdict.
pub fn emit_training_records(
    dataset: &[AnnotatedExample],
    policy: &Policy,
    config: &AugmentConfig,
) -> Result<AugmentRun, AugmentError> {
    config.validate()?;
    let mut run = AugmentRun {
        records: Vec::new(),
        skipped_units: 0,
        skipped_flips: 0,
    };
    for example in dataset {
        for &target in &config.targets {
            let Some(annotation) = example.annotation(target) else {
                run.skipped_units += 1;
                continue;
            };
            let Some(conversation) = example.conversation().truncate_for_target(target) else {
                run.skipped_units += 1;
                continue;
            };
            let mut rng = record_rng(config.seed, example.id(), target);

            let (base_policy, base_annotation, base_transforms) =
                if rng.random_bool(config.p_drop_unviolated) {
                    let (reduced, remapped) =
                        drop_unviolated_categories(&annotation, policy, &mut rng);
                    (
                        reduced.into_policy(),
                        remapped,
                        vec!["drop_unviolated".to_string()],
                    )
                } else {
                    (policy.clone(), annotation.clone(), Vec::new())
                };

            let mut variants = vec![(base_policy, base_annotation, base_transforms)];
            let flip_variant = {
                let (base_pol, base_ann, base_tf) = &variants[0];
                if base_ann.label == Label::Unsafe && rng.random_bool(config.p_flip_safe) {
                    match drop_violated_mark_safe(base_ann, base_pol) {
                        Ok((reduced, flipped)) => {
                            let mut transforms = base_tf.clone();
                            transforms.push("drop_violated_mark_safe".to_string());
                            Some((reduced.into_policy(), flipped, transforms))
                        }
                        Err(AugmentError::AllCategoriesViolated) => {
                            run.skipped_flips += 1;
                            None
                        }
                        Err(e) => return Err(e),
                    }
                } else {
                    None
                }
            };
            if let Some(variant) = flip_variant {
                if config.flip_replaces {
                    variants[0] = variant;
                } else {
                    variants.push(variant);
                }
            }

            for (mut task_policy, mut task_annotation, mut transforms) in variants {
                if rng.random_bool(config.p_shuffle) {
                    let (shuffled, _, remapped) =
                        shuffle_category_indices(&task_annotation, &task_policy, &mut rng);
                    task_policy = shuffled;
                    task_annotation = remapped;
                    transforms.push("shuffle_indices".to_string());
                }
                let Ok(task) = ClassificationTask::new(
                    target,
                    task_policy.clone(),
                    conversation.clone(),
                ) else {
                    run.skipped_units += 1;
                    continue;
                };
                let Ok(input) = build_task_prompt(&task) else {
                    run.skipped_units += 1;
                    continue;
                };
                let verdict = Verdict::new(
                    task_annotation.label,
                    task_annotation.violated.clone(),
                    crate::parse::label_fallback_score(task_annotation.label),
                    "",
                )
                .expect("transform outputs keep label and violated set consistent");
                let output = render_verdict(&verdict, &task_policy);
                run.records.push(TrainingRecord {
                    input,
                    output,
                    meta: RecordMeta {
                        source_id: example.id().to_string(),
                        target,
                        transforms,
                        seed: config.seed,
                        label: task_annotation.label,
                        violated: task_annotation.violated.iter().copied().collect(),
                    },
                });
            }
        }
    }
    Ok(run)
}

/// Writes records one JSON object per line.
pub fn write_training_records(
    records: &[TrainingRecord],
    mut writer: impl Write,
) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Annotation;
    use crate::policy::builtin_policy;
    use crate::prompt::{Conversation, Message};
    use rand::SeedableRng;

    fn unsafe_ann(categories: &[usize]) -> Annotation {
        Annotation::unsafe_with(categories.iter().copied().collect())
    }

    #[test]
    fn drop_unviolated_never_touches_violations() {
        let policy = builtin_policy();
        let annotation = unsafe_ann(&[2, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (reduced, remapped) = drop_unviolated_categories(&annotation, policy, &mut rng);
            assert_eq!(remapped.label, Label::Unsafe);
            assert_eq!(remapped.violated.len(), 2);
            let names: Vec<&str> = remapped
                .violated
                .iter()
                .map(|&i| reduced.policy().get(i).unwrap().name.as_str())
                .collect();
            assert!(names.contains(&"Sexual Content"));
            assert!(names.contains(&"Suicide & Self Harm"));
            assert!(reduced.policy().len() >= 2);
        }
    }

    #[test]
    fn drop_unviolated_on_safe_keeps_at_least_one_category() {
        let policy = builtin_policy();
        let annotation = Annotation::safe();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut saw_minimum = false;
        for _ in 0..300 {
            let (reduced, remapped) = drop_unviolated_categories(&annotation, policy, &mut rng);
            assert!(!reduced.policy().is_empty());
            assert_eq!(remapped, Annotation::safe());
            saw_minimum |= reduced.policy().len() == 1;
        }
        // The cap n−1 is actually reachable.
        assert!(saw_minimum);
    }

    #[test]
    fn flip_safe_drops_violations_and_relabels() {
        let policy = builtin_policy();
        let (reduced, flipped) = drop_violated_mark_safe(&unsafe_ann(&[3]), policy).unwrap();
        assert_eq!(reduced.policy().len(), 5);
        assert_eq!(flipped, Annotation::safe());
        assert!(reduced.policy().index_of("Guns & Illegal Weapons").is_none());

        // Identity on safe examples.
        let (identity, same) = drop_violated_mark_safe(&Annotation::safe(), policy).unwrap();
        assert_eq!(identity.policy(), policy);
        assert_eq!(same, Annotation::safe());

        // All categories violated: nothing would remain.
        assert!(matches!(
            drop_violated_mark_safe(&unsafe_ann(&[1, 2, 3, 4, 5, 6]), policy),
            Err(AugmentError::AllCategoriesViolated)
        ));
    }

    #[test]
    fn shuffle_remaps_and_inverts() {
        let policy = builtin_policy();
        let annotation = unsafe_ann(&[1, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (shuffled, permutation, remapped) =
                shuffle_category_indices(&annotation, policy, &mut rng);
            // Violated names survive the remap.
            for &i in &remapped.violated {
                let name = &shuffled.get(i).unwrap().name;
                assert!(name == "Violence & Hate" || name == "Guns & Illegal Weapons");
            }
            // Applying the inverse restores the original exactly.
            let (restored_policy, restored) =
                apply_permutation(&remapped, &shuffled, &permutation.inverse());
            assert_eq!(&restored_policy, policy);
            assert_eq!(restored, annotation);
        }
    }

    #[test]
    fn identity_permutation_is_noop() {
        let policy = builtin_policy();
        let annotation = unsafe_ann(&[2]);
        let (permuted, remapped) =
            apply_permutation(&annotation, policy, &Permutation::identity(6));
        assert_eq!(&permuted, policy);
        assert_eq!(remapped, annotation);
    }

    fn sample_dataset() -> Vec<AnnotatedExample> {
        let mk = |id: &str, cats: &[usize], with_response: bool| {
            let prompt = if cats.is_empty() {
                Annotation::safe()
            } else {
                Annotation::unsafe_with(cats.iter().copied().collect())
            };
            let (messages, response) = if with_response {
                (
                    vec![Message::user("question text"), Message::agent("answer text")],
                    Some(prompt.clone()),
                )
            } else {
                (vec![Message::user("question text")], None)
            };
            AnnotatedExample::new(id, Conversation::new(messages).unwrap(), prompt, response)
                .unwrap()
        };
        vec![
            mk("a", &[1], true),
            mk("b", &[], true),
            mk("c", &[3, 6], false),
            mk("d", &[5], true),
        ]
    }

    #[test]
    fn zero_probabilities_emit_plain_zero_shot_tasks() {
        let config = AugmentConfig {
            p_drop_unviolated: 0.0,
            p_flip_safe: 0.0,
            p_shuffle: 0.0,
            targets: vec![Target::Prompt],
            ..Default::default()
        };
        let run = emit_training_records(&sample_dataset(), builtin_policy(), &config).unwrap();
        assert_eq!(run.records.len(), 4);
        for record in &run.records {
            assert!(record.meta.transforms.is_empty());
            // Unmodified policy: all six codes present.
            let cats = crate::prompt::extract_rendered_categories(&record.input).unwrap();
            assert_eq!(cats.len(), 6);
        }
    }

    #[test]
    fn emission_is_reproducible() {
        let config = AugmentConfig {
            seed: 7,
            ..Default::default()
        };
        let a = emit_training_records(&sample_dataset(), builtin_policy(), &config).unwrap();
        let b = emit_training_records(&sample_dataset(), builtin_policy(), &config).unwrap();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_training_records(&a.records, &mut buf_a).unwrap();
        write_training_records(&b.records, &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
        assert!(!buf_a.is_empty());
    }

    #[test]
    fn outputs_parse_under_their_own_rendered_policy() {
        let config = AugmentConfig {
            seed: 11,
            ..Default::default()
        };
        let run = emit_training_records(&sample_dataset(), builtin_policy(), &config).unwrap();
        for record in &run.records {
            let cats = crate::prompt::extract_rendered_categories(&record.input).unwrap();
            assert!(!cats.is_empty());
            // Codes are contiguous 1..=k in the rendered block.
            for (i, cat) in cats.iter().enumerate() {
                assert_eq!(cat.index, i + 1);
            }
            let stand_in = Policy::new(
                "rendered",
                cats[0].letter,
                cats.iter()
                    .map(|c| crate::policy::Category::new(c.name.clone(), "guideline"))
                    .collect(),
            )
            .unwrap();
            let verdict = crate::parse::parse_verdict(&record.output, &stand_in).unwrap();
            assert_eq!(verdict.label(), record.meta.label);
            assert_eq!(
                verdict.violated().iter().copied().collect::<Vec<_>>(),
                record.meta.violated
            );
        }
    }

    #[test]
    fn response_target_skips_unannotated_examples() {
        let config = AugmentConfig {
            targets: vec![Target::Response],
            p_drop_unviolated: 0.0,
            p_flip_safe: 0.0,
            p_shuffle: 0.0,
            ..Default::default()
        };
        let run = emit_training_records(&sample_dataset(), builtin_policy(), &config).unwrap();
        // Example "c" has no response annotations.
        assert_eq!(run.records.len(), 3);
        assert_eq!(run.skipped_units, 1);
    }

    #[test]
    fn invalid_config_rejected() {
        let config = AugmentConfig {
            p_shuffle: 1.5,
            ..Default::default()
        };
        assert!(matches!(
            emit_training_records(&sample_dataset(), builtin_policy(), &config),
            Err(AugmentError::InvalidConfig(_))
        ));
    }
}
