//! Central finite-difference validation of the analytic gradients.
//!
//! Both sides use the stop-gradient convention: plans are solved once at
//! the unperturbed bank and the loss is re-evaluated against those frozen
//! plans at every perturbed point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use otdenoise::align::{AlignmentConfig, PromptBank};
use otdenoise::dataset::SampleFeatures;
use otdenoise::loss::{batch_plans, gradients_frozen, supervised_loss_frozen, BatchSample};
use otdenoise::matrix::{l2_normalize_rows, Matrix, Vector};

const H: f64 = 1e-5;
const MAX_REL: f64 = 1e-4;

fn random_features(rng: &mut ChaCha8Rng, l: usize, d: usize) -> SampleFeatures {
    let data: Vec<f64> = (0..l * d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let local = l2_normalize_rows(&Matrix::from_vec(l, d, data).unwrap()).unwrap();
    let global: Vec<f64> = (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    SampleFeatures::new(Vector::from_vec(global).unwrap(), local).unwrap()
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

#[test]
fn analytic_gradients_match_central_differences() {
    let (d, l, n, c, b) = (8, 4, 2, 3, 4);
    let cfg = AlignmentConfig::default();
    let (lambda_i, q) = (0.1, 0.5);
    let mut worst: f64 = 0.0;
    for config_idx in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + config_idx);
        let bank = PromptBank::random(c, n, d, &mut rng);
        let features: Vec<SampleFeatures> =
            (0..b).map(|_| random_features(&mut rng, l, d)).collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let batch: Vec<BatchSample> = features
            .iter()
            .zip(&labels)
            .map(|(f, &label)| BatchSample { features: f, label })
            .collect();

        let plans = batch_plans(&batch, &bank, &cfg).unwrap();
        let grads = gradients_frozen(&batch, &bank, &plans, lambda_i, q).unwrap();

        let eval = |bank: &PromptBank| -> f64 {
            supervised_loss_frozen(&batch, bank, &plans, lambda_i, q)
                .unwrap()
                .total
        };

        for k in 0..c {
            for view in 0..n {
                for idx in 0..d {
                    for side in 0..2 {
                        let analytic = if side == 0 {
                            grads.d_clean[k].get(view, idx)
                        } else {
                            grads.d_noisy[k].get(view, idx)
                        };
                        let mut plus = bank.clone();
                        let mut minus = bank.clone();
                        let (mp, mm) = if side == 0 {
                            (&mut plus.clean[k], &mut minus.clean[k])
                        } else {
                            (&mut plus.noisy[k], &mut minus.noisy[k])
                        };
                        mp.set(view, idx, mp.get(view, idx) + H);
                        mm.set(view, idx, mm.get(view, idx) - H);
                        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
                        let rel = relative_error(analytic, numeric);
                        worst = worst.max(rel);
                        assert!(
                            rel < MAX_REL,
                            "config {config_idx} side {side} class {k} ({view},{idx}): \
                             analytic {analytic} vs fd {numeric} (rel {rel:.2e})"
                        );
                    }
                }
            }
        }

        let mut plus = bank.clone();
        plus.log_tau += H;
        let mut minus = bank.clone();
        minus.log_tau -= H;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
        let rel = relative_error(grads.d_log_tau, numeric);
        worst = worst.max(rel);
        assert!(
            rel < MAX_REL,
            "config {config_idx} log_tau: analytic {} vs fd {numeric} (rel {rel:.2e})",
            grads.d_log_tau
        );
    }
    println!("max relative gradient error across 50 configs: {worst:.3e}");
}

/// Full-pipeline gradients (plans re-solved inside) match the frozen-plan
/// gradients at the solve point; the two entries are the same function.
#[test]
fn loss_gradients_agree_with_frozen_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cfg = AlignmentConfig::default();
    let bank = PromptBank::random(3, 2, 8, &mut rng);
    let features: Vec<SampleFeatures> = (0..4).map(|_| random_features(&mut rng, 4, 8)).collect();
    let labels = [0usize, 2, 1, 2];
    let batch: Vec<BatchSample> = features
        .iter()
        .zip(labels)
        .map(|(f, label)| BatchSample { features: f, label })
        .collect();
    let direct = otdenoise::loss::loss_gradients(&batch, &bank, 0.1, 0.5, &cfg).unwrap();
    let plans = batch_plans(&batch, &bank, &cfg).unwrap();
    let frozen = gradients_frozen(&batch, &bank, &plans, 0.1, 0.5).unwrap();
    assert!((direct.d_log_tau - frozen.d_log_tau).abs() < 1e-15);
    for k in 0..3 {
        for (a, b) in direct.d_clean[k]
            .as_slice()
            .iter()
            .zip(frozen.d_clean[k].as_slice())
        {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
