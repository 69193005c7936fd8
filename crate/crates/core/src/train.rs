//! Two-phase training loop.
//!
//! Epochs `1..=sup_epochs` train on the observed labels with the combined
//! `gce + lambda_i * itbp` objective. From `sup_epochs + 1` on, each epoch
//! first rebuilds the denoised label set (threshold partition, global OT
//! pseudo-labels, selective refinement against the original observed
//! labels) and then trains on it with GCE alone.
//!
//! Everything (bank initialization and the per-epoch shuffles) is driven
//! by one seeded generator, so identical configs reproduce bit-identical
//! banks and histories. Refinement runs once per epoch by default; the
//! `refine_per_batch` flag switches to rebuilding before every mini-batch
//! for comparison, at proportional cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{align_sample, predict, AlignmentConfig, PromptBank};
use crate::dataset::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::loss::{loss_and_gradients, BatchSample, GradientSet};
use crate::matrix::Matrix;
use crate::refine::{
    class_features_from_bank, global_ot_pseudolabels, partition_dataset, refine,
    refinement_metrics, RefinementReport,
};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Total epochs `T`.
    pub epochs: usize,
    /// Supervised warm epochs `T_sup` before refinement starts.
    pub sup_epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Prompt views per class and direction.
    pub views: usize,
    /// Weight of the auxiliary ITBP term during the supervised phase.
    pub lambda_i: f64,
    /// GCE exponent.
    pub q: f64,
    pub alignment: AlignmentConfig,
    pub seed: u64,
    /// Rebuild the denoised set before every mini-batch instead of once
    /// per epoch.
    pub refine_per_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            sup_epochs: 20,
            learning_rate: 0.002,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            views: 4,
            lambda_i: 0.1,
            q: 0.5,
            alignment: AlignmentConfig::default(),
            seed: 0,
            refine_per_batch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sup_epochs > self.epochs {
            return Err(Error::ValidationError {
                message: format!(
                    "sup_epochs {} exceeds epochs {}",
                    self.sup_epochs, self.epochs
                ),
            });
        }
        if self.batch_size == 0 || self.views == 0 {
            return Err(Error::ValidationError {
                message: "batch_size and views must be positive".to_string(),
            });
        }
        if self.learning_rate < 0.0 || self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::ValidationError {
                message: "rates must be non-negative".to_string(),
            });
        }
        self.alignment.validate()
    }
}

/// Which phase an epoch ran in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Supervised,
    Refinement,
}

/// One epoch of history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_total: f64,
    pub mean_gce: f64,
    pub mean_itbp: f64,
    /// Fraction of current training labels differing from ground truth;
    /// absent without truth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clean_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noisy_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefinementReport>,
    /// Transport solves that hit the iteration cap this epoch.
    pub unconverged_solves: usize,
}

/// Full training history, one record per completed epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Last refinement report seen during training, if any.
    pub fn final_refinement(&self) -> Option<&RefinementReport> {
        self.epochs.iter().rev().find_map(|e| e.refinement.as_ref())
    }
}

/// SGD momentum buffers mirroring the bank layout.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub vel_clean: Vec<Matrix>,
    pub vel_noisy: Vec<Matrix>,
    pub vel_log_tau: f64,
}

impl SgdState {
    pub fn zeros_like(bank: &PromptBank) -> Self {
        Self {
            vel_clean: vec![Matrix::zeros(bank.views, bank.dim); bank.num_classes],
            vel_noisy: vec![Matrix::zeros(bank.views, bank.dim); bank.num_classes],
            vel_log_tau: 0.0,
        }
    }
}

/// One SGD step with momentum and weight decay:
/// `v = momentum * v + (g + wd * p); p -= lr * v`.
/// Weight decay is not applied to the log-temperature.
pub fn sgd_step(
    bank: &mut PromptBank,
    grads: &GradientSet,
    state: &mut SgdState,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.d_clean.len() != bank.num_classes || grads.d_noisy.len() != bank.num_classes {
        return Err(Error::ShapeMismatch {
            expected: (bank.num_classes, 0),
            got: (grads.d_clean.len(), grads.d_noisy.len()),
        });
    }
    let lr = cfg.learning_rate;
    let update = |param: &mut Matrix, grad: &Matrix, vel: &mut Matrix| -> Result<()> {
        if grad.shape() != param.shape() {
            return Err(Error::ShapeMismatch {
                expected: param.shape(),
                got: grad.shape(),
            });
        }
        for ((p, g), v) in param
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(vel.as_mut_slice())
        {
            *v = cfg.momentum * *v + (g + cfg.weight_decay * *p);
            *p -= lr * *v;
        }
        Ok(())
    };
    for k in 0..bank.num_classes {
        update(&mut bank.clean[k], &grads.d_clean[k], &mut state.vel_clean[k])?;
        update(&mut bank.noisy[k], &grads.d_noisy[k], &mut state.vel_noisy[k])?;
    }
    state.vel_log_tau = cfg.momentum * state.vel_log_tau + grads.d_log_tau;
    bank.log_tau -= lr * state.vel_log_tau;
    bank.clamp_log_tau();
    Ok(())
}

struct DenoisedState {
    labels: Vec<usize>,
    clean_count: usize,
    noisy_count: usize,
    report: Option<RefinementReport>,
}

/// Partition against the observed labels, pseudo-label globally, refine.
fn rebuild_denoised(
    ds: &EmbeddingDataset,
    bank: &PromptBank,
    cfg: &AlignmentConfig,
) -> Result<DenoisedState> {
    let partition = partition_dataset(ds, bank, cfg)?;
    let class_features = class_features_from_bank(bank)?;
    let pseudo = global_ot_pseudolabels(ds, &class_features, cfg.epsilon)?;
    let denoised = refine(ds, &partition, &pseudo)?;
    let report = match &ds.truth {
        Some(truth) => Some(refinement_metrics(&ds.labels, &denoised, truth)?),
        None => Some(RefinementReport {
            noise_ratio_before: None,
            noise_ratio_after: None,
            correct_correction_rate: None,
            num_refined: denoised.refined_mask.iter().filter(|m| **m).count(),
            num_clean_kept: denoised.refined_mask.iter().filter(|m| !**m).count(),
        }),
    };
    Ok(DenoisedState {
        labels: denoised.labels,
        clean_count: partition.clean_indices.len(),
        noisy_count: partition.noisy_indices.len(),
        report,
    })
}

fn noise_ratio(labels: &[usize], truth: &Option<Vec<usize>>) -> Option<f64> {
    truth.as_ref().map(|t| {
        if labels.is_empty() {
            0.0
        } else {
            labels.iter().zip(t).filter(|(a, b)| a != b).count() as f64 / labels.len() as f64
        }
    })
}

/// Runs the full two-phase schedule and returns the trained bank with its
/// per-epoch history.
pub fn train(ds: &EmbeddingDataset, cfg: &TrainConfig) -> Result<(PromptBank, TrainHistory)> {
    cfg.validate()?;
    ds.validate()?;
    if ds.num_classes < 2 {
        return Err(Error::ValidationError {
            message: "training needs at least two classes".to_string(),
        });
    }
    if ds.is_empty() {
        return Err(Error::ValidationError {
            message: "training needs at least one sample".to_string(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bank = PromptBank::random(ds.num_classes, cfg.views, ds.dim, &mut rng);
    let mut state = SgdState::zeros_like(&bank);
    let mut history = TrainHistory::default();
    let mut current_labels = ds.labels.clone();

    for epoch in 1..=cfg.epochs {
        let refinement_phase = epoch > cfg.sup_epochs;
        let lambda = if refinement_phase { 0.0 } else { cfg.lambda_i };
        let mut clean_count = None;
        let mut noisy_count = None;
        let mut report = None;
        if refinement_phase && !cfg.refine_per_batch {
            let denoised = rebuild_denoised(ds, &bank, &cfg.alignment)?;
            current_labels = denoised.labels;
            clean_count = Some(denoised.clean_count);
            noisy_count = Some(denoised.noisy_count);
            report = denoised.report;
        }

        let mut order: Vec<usize> = (0..ds.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut sum_total = 0.0;
        let mut sum_gce = 0.0;
        let mut sum_itbp = 0.0;
        let mut batches = 0usize;
        let mut unconverged = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if refinement_phase && cfg.refine_per_batch {
                let denoised = rebuild_denoised(ds, &bank, &cfg.alignment)?;
                current_labels = denoised.labels;
                clean_count = Some(denoised.clean_count);
                noisy_count = Some(denoised.noisy_count);
                report = denoised.report;
            }
            let labels = if refinement_phase {
                &current_labels
            } else {
                &ds.labels
            };
            let batch: Vec<BatchSample> = chunk
                .iter()
                .map(|&i| BatchSample {
                    features: &ds.samples[i],
                    label: labels[i],
                })
                .collect();
            let (loss, grads, solves) =
                loss_and_gradients(&batch, &bank, lambda, cfg.q, &cfg.alignment)?;
            sgd_step(&mut bank, &grads, &mut state, cfg)?;
            sum_total += loss.total;
            sum_gce += loss.gce;
            sum_itbp += loss.itbp;
            unconverged += solves;
            batches += 1;
        }
        let denom = batches.max(1) as f64;
        let labels_now = if refinement_phase {
            &current_labels
        } else {
            &ds.labels
        };
        history.epochs.push(EpochRecord {
            epoch,
            phase: if refinement_phase {
                Phase::Refinement
            } else {
                Phase::Supervised
            },
            mean_total: sum_total / denom,
            mean_gce: sum_gce / denom,
            mean_itbp: sum_itbp / denom,
            noise_ratio: noise_ratio(labels_now, &ds.truth),
            clean_count,
            noisy_count,
            refinement: report,
            unconverged_solves: unconverged,
        });
    }
    Ok((bank, history))
}

/// Accuracy of the inference rule against ground truth.
pub fn evaluate(bank: &PromptBank, test: &EmbeddingDataset, cfg: &AlignmentConfig) -> Result<f64> {
    let truth = test.truth.as_ref().ok_or(Error::MissingTruth)?;
    if test.is_empty() {
        return Err(Error::MissingTruth);
    }
    let mut correct = 0usize;
    for (sample, &t) in test.samples.iter().zip(truth) {
        let result = align_sample(sample, bank, cfg)?;
        if predict(&result) == t {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_dataset, inject_symmetric_noise, NoiseKind, SynthConfig};

    fn tiny_dataset(seed: u64) -> EmbeddingDataset {
        gen_dataset(&SynthConfig {
            num_classes: 3,
            shots: 4,
            dim: 12,
            patches: 4,
            separation: 20.0,
            background_fraction: 0.0,
            noise_rate: 0.0,
            noise_kind: NoiseKind::Symmetric,
            seed,
        })
        .unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            sup_epochs: 2,
            batch_size: 6,
            views: 2,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sgd_zero_gradient_keeps_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bank = PromptBank::random(2, 2, 4, &mut rng);
        let before = bank.clone();
        let grads = GradientSet::zeros_like(&bank);
        let mut state = SgdState::zeros_like(&bank);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        sgd_step(&mut bank, &grads, &mut state, &cfg).unwrap();
        assert_eq!(bank, before);
    }

    #[test]
    fn sgd_single_scalar_step() {
        let clean = vec![Matrix::from_rows(&[vec![1.0]]).unwrap()];
        let noisy = vec![Matrix::from_rows(&[vec![1.0]]).unwrap()];
        let mut bank = PromptBank::from_parts(clean, noisy, 0.0).unwrap();
        let mut grads = GradientSet::zeros_like(&bank);
        grads.d_clean[0].set(0, 0, 1.0);
        let mut state = SgdState::zeros_like(&bank);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        sgd_step(&mut bank, &grads, &mut state, &cfg).unwrap();
        assert!((bank.clean[0].get(0, 0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_two_steps() {
        // grad 1 twice with momentum 0.9: velocities 1 and 1.9, total
        // parameter change -0.1 * (1 + 1.9) = -0.29.
        let clean = vec![Matrix::from_rows(&[vec![0.0]]).unwrap()];
        let noisy = vec![Matrix::from_rows(&[vec![0.0]]).unwrap()];
        let mut bank = PromptBank::from_parts(clean, noisy, 0.0).unwrap();
        let mut grads = GradientSet::zeros_like(&bank);
        grads.d_clean[0].set(0, 0, 1.0);
        let mut state = SgdState::zeros_like(&bank);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        sgd_step(&mut bank, &grads, &mut state, &cfg).unwrap();
        sgd_step(&mut bank, &grads, &mut state, &cfg).unwrap();
        assert!((bank.clean[0].get(0, 0) + 0.29).abs() < 1e-12);
    }

    #[test]
    fn sgd_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bank = PromptBank::random(2, 2, 4, &mut rng);
        let other = PromptBank::random(2, 3, 4, &mut rng);
        let grads = GradientSet::zeros_like(&other);
        let mut state = SgdState::zeros_like(&bank);
        assert!(matches!(
            sgd_step(&mut bank, &grads, &mut state, &TrainConfig::default()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_epochs_returns_initial_bank() {
        let ds = tiny_dataset(3);
        let cfg = TrainConfig {
            epochs: 0,
            sup_epochs: 0,
            ..tiny_config()
        };
        let (bank, history) = train(&ds, &cfg).unwrap();
        assert!(history.epochs.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let expected = PromptBank::random(ds.num_classes, cfg.views, ds.dim, &mut rng);
        assert_eq!(bank, expected);
    }

    #[test]
    fn pure_supervised_schedule_never_refines() {
        let ds = tiny_dataset(4);
        let cfg = TrainConfig {
            epochs: 2,
            sup_epochs: 2,
            ..tiny_config()
        };
        let (_, history) = train(&ds, &cfg).unwrap();
        for e in &history.epochs {
            assert_eq!(e.phase, Phase::Supervised);
            assert!(e.refinement.is_none());
            assert!(e.clean_count.is_none());
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = tiny_dataset(5);
        let cfg = tiny_config();
        let (bank_a, hist_a) = train(&ds, &cfg).unwrap();
        let (bank_b, hist_b) = train(&ds, &cfg).unwrap();
        assert_eq!(bank_a, bank_b);
        assert_eq!(hist_a, hist_b);
    }

    #[test]
    fn zero_learning_rate_freezes_bank() {
        let ds = tiny_dataset(6);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..tiny_config()
        };
        let (bank, _) = train(&ds, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let initial = PromptBank::random(ds.num_classes, cfg.views, ds.dim, &mut rng);
        assert_eq!(bank, initial);
    }

    #[test]
    fn supervised_phase_trains_on_observed_labels() {
        // The noise ratio recorded during the supervised phase must equal
        // the injected ratio exactly: labels are never touched there.
        let mut ds = tiny_dataset(7);
        let (noisy, _) = inject_symmetric_noise(&ds.labels, 0.25, 3, 11);
        ds.labels = noisy;
        let cfg = TrainConfig {
            epochs: 2,
            sup_epochs: 2,
            ..tiny_config()
        };
        let (_, history) = train(&ds, &cfg).unwrap();
        for e in &history.epochs {
            assert_eq!(e.noise_ratio, Some(0.25));
        }
    }

    #[test]
    fn evaluate_prototype_bank_is_perfect() {
        let ds = tiny_dataset(8);
        // Build clean prompts at the class prototypes (per-class feature
        // means) and noisy prompts orthogonal to everything.
        let truth = ds.truth.clone().unwrap();
        let mut clean = Vec::new();
        let mut noisy = Vec::new();
        for k in 0..3 {
            let mut mean = vec![0.0; ds.dim];
            let mut count = 0.0;
            for (s, &t) in ds.samples.iter().zip(&truth) {
                if t == k {
                    for (acc, v) in mean.iter_mut().zip(s.global.as_slice()) {
                        *acc += v;
                    }
                    count += 1.0;
                }
            }
            for v in &mut mean {
                *v /= count;
            }
            clean.push(Matrix::from_rows(&[mean.clone(), mean]).unwrap());
            let mut axis = vec![0.0; ds.dim];
            axis[ds.dim - 1 - k] = 1.0;
            noisy.push(Matrix::from_rows(&[axis.clone(), axis]).unwrap());
        }
        let bank = PromptBank::from_parts(clean, noisy, (0.07f64).ln()).unwrap();
        let acc = evaluate(&bank, &ds, &AlignmentConfig::default()).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn evaluate_requires_truth() {
        let mut ds = tiny_dataset(9);
        ds.truth = None;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank = PromptBank::random(3, 2, 12, &mut rng);
        assert!(matches!(
            evaluate(&bank, &ds, &AlignmentConfig::default()),
            Err(Error::MissingTruth)
        ));
        let empty = EmbeddingDataset::new(3, 12, 4, Vec::new(), Vec::new(), Some(Vec::new()))
            .unwrap();
        assert!(matches!(
            evaluate(&bank, &empty, &AlignmentConfig::default()),
            Err(Error::MissingTruth)
        ));
    }

    #[test]
    fn single_class_accuracy_is_fraction_predicted() {
        // Single-class test set: accuracy equals the fraction predicted as
        // that class by definition.
        let ds = tiny_dataset(10);
        let truth = ds.truth.clone().unwrap();
        let keep: Vec<usize> = (0..ds.len()).filter(|&i| truth[i] == 1).collect();
        let sub = EmbeddingDataset::new(
            3,
            ds.dim,
            ds.patches,
            keep.iter().map(|&i| ds.samples[i].clone()).collect(),
            vec![1; keep.len()],
            Some(vec![1; keep.len()]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bank = PromptBank::random(3, 2, 12, &mut rng);
        let cfg = AlignmentConfig::default();
        let acc = evaluate(&bank, &sub, &cfg).unwrap();
        let mut predicted = 0;
        for s in &sub.samples {
            if predict(&align_sample(s, &bank, &cfg).unwrap()) == 1 {
                predicted += 1;
            }
        }
        assert!((acc - predicted as f64 / sub.len() as f64).abs() < 1e-15);
    }

    #[test]
    fn per_batch_refinement_mode_runs_and_is_deterministic() {
        let mut ds = tiny_dataset(12);
        let (noisy, _) = inject_symmetric_noise(&ds.labels, 0.25, 3, 21);
        ds.labels = noisy;
        let cfg = TrainConfig {
            epochs: 3,
            sup_epochs: 1,
            refine_per_batch: true,
            ..tiny_config()
        };
        let (bank_a, hist_a) = train(&ds, &cfg).unwrap();
        let (bank_b, hist_b) = train(&ds, &cfg).unwrap();
        assert_eq!(bank_a, bank_b);
        assert_eq!(hist_a, hist_b);
        for e in &hist_a.epochs[1..] {
            assert_eq!(e.phase, Phase::Refinement);
            assert!(e.refinement.is_some());
            assert!(e.clean_count.is_some());
        }
    }

    #[test]
    fn rejects_inconsistent_schedule() {
        let ds = tiny_dataset(11);
        let cfg = TrainConfig {
            epochs: 1,
            sup_epochs: 2,
            ..tiny_config()
        };
        assert!(matches!(
            train(&ds, &cfg),
            Err(Error::ValidationError { .. })
        ));
    }

}
