//! Selective label refinement: partition the dataset through the adaptive
//! thresholds, pseudo-label by classical OT over global features, and
//! assemble the denoised label set.
//!
//! The classical solve enforces uniform marginals on both sides (the plan
//! is classes-by-samples), so every class receives equal mass and the
//! argmax down each sample column yields a globally structured assignment
//! rather than per-sample nearest-class. Only samples flagged noisy by the
//! threshold rule take the pseudo-label; clean samples are never altered.

use serde::{Deserialize, Serialize};

use crate::align::{align_sample, is_clean, AlignmentConfig, PromptBank};
use crate::dataset::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::matrix::{cosine_similarity, l2_normalize_rows, Matrix, Vector};
use crate::ot::{sinkhorn_ot, TransportProblem};

/// Similarities are clamped here before the log turns them into costs.
pub const SIMILARITY_FLOOR: f64 = 1e-6;

/// Iteration settings for the single global pseudo-label solve. One solve
/// per epoch over the whole set is cheap, so run it tight.
const GLOBAL_OT_MAX_ITER: usize = 1000;
const GLOBAL_OT_TOL: f64 = 1e-9;

/// Clean/noisy split of a dataset, both sides sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPartition {
    pub clean_indices: Vec<usize>,
    pub noisy_indices: Vec<usize>,
}

/// Labels after selective refinement plus the per-sample refinement flag.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoisedDataset {
    pub labels: Vec<usize>,
    pub refined_mask: Vec<bool>,
}

/// Quality metrics of one refinement pass. Ratio fields require ground
/// truth and stay absent without it; the correction rate is additionally
/// absent when no refined sample had a wrong label (vacuous denominator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_ratio_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_ratio_after: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct_correction_rate: Option<f64>,
    pub num_refined: usize,
    pub num_clean_kept: usize,
}

/// Splits the dataset: sample `i` is clean iff `p_clean[y_i] > phi[y_i]`.
pub fn partition_dataset(
    ds: &EmbeddingDataset,
    bank: &PromptBank,
    cfg: &AlignmentConfig,
) -> Result<DatasetPartition> {
    ds.validate()?;
    let mut clean_indices = Vec::new();
    let mut noisy_indices = Vec::new();
    for i in 0..ds.len() {
        let result = align_sample(&ds.samples[i], bank, cfg)?;
        if is_clean(&result, ds.labels[i])? {
            clean_indices.push(i);
        } else {
            noisy_indices.push(i);
        }
    }
    Ok(DatasetPartition {
        clean_indices,
        noisy_indices,
    })
}

/// Collapses a bank's clean prompt views into one feature per class:
/// the view mean, row-normalized.
pub fn class_features_from_bank(bank: &PromptBank) -> Result<Matrix> {
    let mut means = Matrix::zeros(bank.num_classes, bank.dim);
    for k in 0..bank.num_classes {
        let prompts = &bank.clean[k];
        let row = means.row_mut(k);
        for view in 0..prompts.rows() {
            for (acc, v) in row.iter_mut().zip(prompts.row(view)) {
                *acc += v / prompts.rows() as f64;
            }
        }
    }
    l2_normalize_rows(&means)
}

/// Pseudo-labels every sample by classical OT between global features and
/// class features under uniform marginals.
///
/// The cost is `-log((1 + cos)/2)` with the similarity clamped at
/// [`SIMILARITY_FLOOR`]; the affine map keeps the log defined for
/// non-positive cosines while preserving the ordering the argmax consumes.
/// The plan is `C x D`; sample `i` takes `argmax_k T[k][i]`, ties to the
/// lowest class index.
pub fn global_ot_pseudolabels(
    ds: &EmbeddingDataset,
    class_features: &Matrix,
    epsilon: f64,
) -> Result<Vec<usize>> {
    if ds.is_empty() {
        return Err(Error::ValidationError {
            message: "pseudo-labeling needs at least one sample".to_string(),
        });
    }
    let c = class_features.rows();
    if c < 2 {
        return Err(Error::ValidationError {
            message: "pseudo-labeling needs at least two classes".to_string(),
        });
    }
    let globals = ds.globals_matrix();
    let sim = cosine_similarity(class_features, &globals)?; // C x D
    let d = ds.len();
    let mut cost = Matrix::zeros(c, d);
    for k in 0..c {
        for i in 0..d {
            let mapped = ((1.0 + sim.get(k, i)) / 2.0).clamp(SIMILARITY_FLOOR, 1.0);
            cost.set(k, i, -mapped.ln());
        }
    }
    let problem = TransportProblem::new(
        cost,
        Vector::filled(c, 1.0 / c as f64),
        Vector::filled(d, 1.0 / d as f64),
        epsilon,
    )?;
    let plan = sinkhorn_ot(&problem, GLOBAL_OT_MAX_ITER, GLOBAL_OT_TOL)?;
    let mut labels = Vec::with_capacity(d);
    for i in 0..d {
        let mut best = 0;
        let mut best_mass = f64::NEG_INFINITY;
        for k in 0..c {
            let mass = plan.plan.get(k, i);
            if mass > best_mass {
                best_mass = mass;
                best = k;
            }
        }
        labels.push(best);
    }
    Ok(labels)
}

/// Applies pseudo-labels to the noisy partition only.
pub fn refine(
    ds: &EmbeddingDataset,
    part: &DatasetPartition,
    pseudo: &[usize],
) -> Result<DenoisedDataset> {
    if pseudo.len() != ds.len() {
        return Err(Error::IndexMismatch {
            expected: ds.len(),
            got: pseudo.len(),
        });
    }
    let mut labels = ds.labels.clone();
    let mut refined_mask = vec![false; ds.len()];
    for &i in &part.noisy_indices {
        if i >= ds.len() {
            return Err(Error::IndexMismatch {
                expected: ds.len(),
                got: i,
            });
        }
        labels[i] = pseudo[i];
        refined_mask[i] = true;
    }
    Ok(DenoisedDataset {
        labels,
        refined_mask,
    })
}

/// Scores one refinement pass against ground truth.
pub fn refinement_metrics(
    before: &[usize],
    after: &DenoisedDataset,
    truth: &[usize],
) -> Result<RefinementReport> {
    let d = before.len();
    if after.labels.len() != d || truth.len() != d || after.refined_mask.len() != d {
        return Err(Error::LengthMismatch {
            left: d,
            right: after.labels.len().max(truth.len()),
        });
    }
    let num_refined = after.refined_mask.iter().filter(|m| **m).count();
    if d == 0 {
        return Ok(RefinementReport {
            noise_ratio_before: None,
            noise_ratio_after: None,
            correct_correction_rate: None,
            num_refined: 0,
            num_clean_kept: 0,
        });
    }
    let wrong_before = before.iter().zip(truth).filter(|(b, t)| b != t).count();
    let wrong_after = after
        .labels
        .iter()
        .zip(truth)
        .filter(|(a, t)| a != t)
        .count();
    let mut refined_wrong = 0usize;
    let mut corrected = 0usize;
    for i in 0..d {
        if after.refined_mask[i] && before[i] != truth[i] {
            refined_wrong += 1;
            if after.labels[i] == truth[i] {
                corrected += 1;
            }
        }
    }
    Ok(RefinementReport {
        noise_ratio_before: Some(wrong_before as f64 / d as f64),
        noise_ratio_after: Some(wrong_after as f64 / d as f64),
        correct_correction_rate: if refined_wrong > 0 {
            Some(corrected as f64 / refined_wrong as f64)
        } else {
            None
        },
        num_refined,
        num_clean_kept: d - num_refined,
    })
}
