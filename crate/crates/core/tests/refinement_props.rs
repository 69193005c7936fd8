//! Cross-module refinement properties on synthetic data.

use otdenoise::align::{AlignmentConfig, PromptBank};
use otdenoise::matrix::{cosine_similarity, l2_normalize_rows, Matrix, Vector};
use otdenoise::ot::{sinkhorn_ot, TransportProblem};
use otdenoise::refine::{global_ot_pseudolabels, partition_dataset, refine};
use otdenoise::synth::{
    gen_dataset, inject_asymmetric_noise, inject_symmetric_noise, NoiseKind, SynthConfig,
};
use otdenoise::train::{train, TrainConfig};

fn bench_cfg(seed: u64, classes: usize, shots: usize) -> SynthConfig {
    SynthConfig {
        num_classes: classes,
        shots,
        dim: 32,
        patches: 8,
        separation: 20.0,
        background_fraction: 0.125,
        noise_rate: 0.0,
        noise_kind: NoiseKind::Symmetric,
        seed,
    }
}

/// Per-class mean of the true global features, row-normalized.
fn prototype_features(ds: &otdenoise::EmbeddingDataset) -> Matrix {
    let truth = ds.truth.as_ref().unwrap();
    let mut means = Matrix::zeros(ds.num_classes, ds.dim);
    let mut counts = vec![0.0; ds.num_classes];
    for (s, &t) in ds.samples.iter().zip(truth) {
        counts[t] += 1.0;
        for (j, v) in s.global.as_slice().iter().enumerate() {
            means.set(t, j, means.get(t, j) + v);
        }
    }
    for k in 0..ds.num_classes {
        for j in 0..ds.dim {
            means.set(k, j, means.get(k, j) / counts[k]);
        }
    }
    l2_normalize_rows(&means).unwrap()
}

/// The affine-clamped cosine cost and a raw exp-of-cosine cost assign the
/// same pseudo-labels on nearly every sample of well-separated data: the
/// argmax consumes the ordering, which both maps preserve.
#[test]
fn pseudolabel_assignment_is_stable_under_monotone_cost_maps() {
    let mut agree = 0usize;
    let mut total = 0usize;
    for seed in 0..3 {
        let ds = gen_dataset(&bench_cfg(seed, 5, 8)).unwrap();
        let class_features = prototype_features(&ds);
        let standard = global_ot_pseudolabels(&ds, &class_features, 0.1).unwrap();

        // Alternative route: cost = -log(exp(cos)) = -cos.
        let globals = ds.globals_matrix();
        let sim = cosine_similarity(&class_features, &globals).unwrap();
        let (c, d) = sim.shape();
        let mut cost = Matrix::zeros(c, d);
        for k in 0..c {
            for i in 0..d {
                cost.set(k, i, -sim.get(k, i));
            }
        }
        let problem = TransportProblem::new(
            cost,
            Vector::filled(c, 1.0 / c as f64),
            Vector::filled(d, 1.0 / d as f64),
            0.1,
        )
        .unwrap();
        let plan = sinkhorn_ot(&problem, 1000, 1e-9).unwrap();
        for i in 0..d {
            let mut best = 0;
            let mut best_mass = f64::NEG_INFINITY;
            for k in 0..c {
                if plan.plan.get(k, i) > best_mass {
                    best_mass = plan.plan.get(k, i);
                    best = k;
                }
            }
            agree += usize::from(best == standard[i]);
            total += 1;
        }
    }
    let rate = agree as f64 / total as f64;
    assert!(rate >= 0.95, "agreement rate {rate}");
}

/// Threshold gating exposes strictly fewer originally-correct labels to
/// relabeling than gate-free full OT relabeling (small-scale version; the
/// acceptance suite runs the full benchmark across ten seeds).
#[test]
fn gating_protects_correct_labels_small_scale() {
    for seed in 0..3 {
        let mut ds = gen_dataset(&bench_cfg(seed, 5, 8)).unwrap();
        let (noisy, _) = inject_symmetric_noise(&ds.labels, 0.25, 5, seed + 100);
        ds.labels = noisy;
        let cfg = TrainConfig {
            epochs: 8,
            sup_epochs: 8,
            views: 2,
            seed,
            ..TrainConfig::default()
        };
        let (bank, _) = train(&ds, &cfg).unwrap();
        let partition = partition_dataset(&ds, &bank, &cfg.alignment).unwrap();
        let truth = ds.truth.as_ref().unwrap();
        let correct_total = ds
            .labels
            .iter()
            .zip(truth)
            .filter(|(a, b)| a == b)
            .count();
        let correct_gated = partition
            .noisy_indices
            .iter()
            .filter(|&&i| ds.labels[i] == truth[i])
            .count();
        assert!(
            correct_gated < correct_total,
            "seed {seed}: gating exposed {correct_gated} of {correct_total} correct labels"
        );
    }
}

/// Full pipeline on a well-separated five-class set at 50% symmetric
/// noise: the default schedule ends with a noise ratio strictly below the
/// injected level and test accuracy clearly above the 20% chance level.
#[test]
fn five_class_end_to_end_beats_chance() {
    for seed in 1..=3u64 {
        let mut ds = gen_dataset(&SynthConfig {
            num_classes: 5,
            shots: 16,
            dim: 32,
            patches: 16,
            separation: 20.0,
            background_fraction: 0.125,
            noise_rate: 0.5,
            noise_kind: NoiseKind::Symmetric,
            seed,
        })
        .unwrap();
        let (labels, _) = inject_symmetric_noise(&ds.labels, 0.5, 5, seed + 1000);
        ds.labels = labels;
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let (bank, history) = train(&ds, &cfg).unwrap();
        let final_ratio = history.epochs.last().unwrap().noise_ratio.unwrap();
        assert!(final_ratio < 0.5, "seed {seed}: final ratio {final_ratio}");
        let test = gen_dataset(&SynthConfig {
            num_classes: 5,
            shots: 8,
            dim: 32,
            patches: 16,
            separation: 20.0,
            background_fraction: 0.125,
            noise_rate: 0.0,
            noise_kind: NoiseKind::Symmetric,
            seed,
        })
        .unwrap();
        let acc = otdenoise::train::evaluate(&bank, &test, &cfg.alignment).unwrap();
        assert!(acc > 0.2, "seed {seed}: accuracy {acc}");
    }
}

/// Class-conditional (cyclic) noise at an identifiable rate also gets
/// denoised, if less sharply than uniform flips: the structured noise
/// keeps contaminating each class's prompt views during warm-up, so the
/// gate stays conservative.
#[test]
fn asymmetric_noise_is_reduced_at_identifiable_rate() {
    for seed in [3u64, 4] {
        let mut ds = gen_dataset(&SynthConfig {
            num_classes: 5,
            shots: 16,
            dim: 32,
            patches: 16,
            separation: 20.0,
            background_fraction: 0.125,
            noise_rate: 0.25,
            noise_kind: NoiseKind::Asymmetric,
            seed,
        })
        .unwrap();
        let (labels, _) = inject_asymmetric_noise(&ds.labels, 0.25, 5, seed + 1000);
        ds.labels = labels;
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let (_, history) = train(&ds, &cfg).unwrap();
        let report = history.final_refinement().unwrap();
        let after = report.noise_ratio_after.unwrap();
        assert!(after < 0.25, "seed {seed}: ratio 0.25 -> {after}");
        // Whatever got corrected was corrected to the truth far more often
        // than not.
        if let Some(ccr) = report.correct_correction_rate {
            assert!(ccr > 0.5, "seed {seed}: correction rate {ccr}");
        }
    }
}

/// Refinement with an informative bank strictly reduces the noise ratio on
/// separated data.
#[test]
fn one_refinement_pass_reduces_noise() {
    let mut ds = gen_dataset(&bench_cfg(7, 5, 8)).unwrap();
    let (noisy, _) = inject_symmetric_noise(&ds.labels, 0.5, 5, 77);
    ds.labels = noisy;
    let truth = ds.truth.clone().unwrap();
    let before = ds
        .labels
        .iter()
        .zip(&truth)
        .filter(|(a, b)| a != b)
        .count();

    // Bank straight at the prototypes, noisy prompts random.
    let protos = prototype_features(&ds);
    let mut clean = Vec::new();
    let mut noisy_prompts = Vec::new();
    let mut rng_axis = 0;
    for k in 0..5 {
        let row = protos.row(k).to_vec();
        clean.push(Matrix::from_rows(&[row.clone(), row]).unwrap());
        let mut axis = vec![0.0; ds.dim];
        axis[ds.dim - 1 - rng_axis] = 1.0;
        rng_axis += 1;
        noisy_prompts.push(Matrix::from_rows(&[axis.clone(), axis]).unwrap());
    }
    let bank = PromptBank::from_parts(clean, noisy_prompts, (0.07f64).ln()).unwrap();
    let cfg = AlignmentConfig::default();
    let partition = partition_dataset(&ds, &bank, &cfg).unwrap();
    let class_features = otdenoise::refine::class_features_from_bank(&bank).unwrap();
    let pseudo = global_ot_pseudolabels(&ds, &class_features, cfg.epsilon).unwrap();
    let denoised = refine(&ds, &partition, &pseudo).unwrap();
    let after = denoised
        .labels
        .iter()
        .zip(&truth)
        .filter(|(a, b)| a != b)
        .count();
    assert!(after < before, "noise count {before} -> {after}");
}
