//! Bi-directional multi-view prompt bank and the per-sample alignment
//! pipeline.
//!
//! Each class carries two learnable `N x d` embedding sets: clean-oriented
//! prompts capture class semantics, noise-aware prompts act as implicit
//! negatives soaking up corrupted cues. A sample's patch map is matched to
//! each set by unbalanced transport over the cosine cost `1 - cos`, which
//! yields per-class similarities, a class-softmax confidence `p_clean`, a
//! pairwise noise-side confidence `p_noisy`, and the adaptive threshold
//! `phi` (the same logistic value as `p_noisy`, kept in both fields).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleFeatures;
use crate::error::{Error, Result};
use crate::matrix::{cosine_similarity, tempered_softmax, Matrix, Vector};
use crate::ot::{dykstra_uot, TransportPlan, TransportProblem};

/// Standard deviation of the random prompt initialization.
pub const PROMPT_INIT_STD: f64 = 0.02;

/// Initial temperature (the conventional contrastive default).
pub const TAU_INIT: f64 = 0.07;

/// Clamp range for the learnable temperature.
pub const TAU_MIN: f64 = 1e-3;
pub const TAU_MAX: f64 = 10.0;

/// Solver settings for the patch-to-prompt alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    /// Entropic regularization weight.
    pub epsilon: f64,
    /// Total transported mass (degree of partial matching), in `(0, 1]`.
    pub theta: f64,
    pub max_iter: usize,
    /// Stop once the L1 change of the column-scaling vector falls below this.
    pub stop_delta: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            theta: 0.9,
            max_iter: 100,
            stop_delta: 1e-3,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::DomainError {
                context: "alignment epsilon",
                value: self.epsilon,
            });
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::DomainError {
                context: "alignment theta",
                value: self.theta,
            });
        }
        Ok(())
    }
}

/// Per-class clean and noise-aware prompt embeddings plus the shared
/// learnable log-temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    pub num_classes: usize,
    pub views: usize,
    pub dim: usize,
    /// Clean-oriented prompts, one `views x dim` matrix per class.
    pub clean: Vec<Matrix>,
    /// Noise-aware prompts, one `views x dim` matrix per class.
    pub noisy: Vec<Matrix>,
    /// tau = exp(log_tau), clamped into `[TAU_MIN, TAU_MAX]`.
    pub log_tau: f64,
}

impl PromptBank {
    /// Randomly initialized bank: i.i.d. normal entries with standard
    /// deviation [`PROMPT_INIT_STD`], temperature at [`TAU_INIT`].
    pub fn random<R: Rng>(num_classes: usize, views: usize, dim: usize, rng: &mut R) -> Self {
        let draw_set = |rng: &mut R| -> Vec<Matrix> {
            (0..num_classes)
                .map(|_| {
                    let data: Vec<f64> = (0..views * dim)
                        .map(|_| PROMPT_INIT_STD * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    Matrix::from_vec(views, dim, data).expect("finite by construction")
                })
                .collect()
        };
        let clean = draw_set(rng);
        let noisy = draw_set(rng);
        Self {
            num_classes,
            views,
            dim,
            clean,
            noisy,
            log_tau: TAU_INIT.ln(),
        }
    }

    /// Builds a bank from explicit per-class matrices.
    pub fn from_parts(clean: Vec<Matrix>, noisy: Vec<Matrix>, log_tau: f64) -> Result<Self> {
        if clean.is_empty() || clean.len() != noisy.len() {
            return Err(Error::LengthMismatch {
                left: clean.len(),
                right: noisy.len(),
            });
        }
        let shape = clean[0].shape();
        for m in clean.iter().chain(noisy.iter()) {
            if m.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape,
                    got: m.shape(),
                });
            }
        }
        if !log_tau.is_finite() {
            return Err(Error::NonFinite { context: "log_tau" });
        }
        Ok(Self {
            num_classes: clean.len(),
            views: shape.0,
            dim: shape.1,
            clean,
            noisy,
            log_tau,
        })
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    /// Checks that every prompt row is normalizable (alignment-usable).
    /// Optimizer steps may pass through degenerate states; this is the
    /// boundary check applied when a bank is loaded from disk.
    pub fn validate(&self) -> Result<()> {
        for m in self.clean.iter().chain(self.noisy.iter()) {
            for r in 0..m.rows() {
                let norm: f64 = m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm <= crate::matrix::ZERO_ROW_EPS {
                    return Err(Error::ZeroRow { row: r, norm });
                }
            }
        }
        Ok(())
    }

    /// Clamps the temperature into its admissible range.
    pub fn clamp_log_tau(&mut self) {
        self.log_tau = self.log_tau.clamp(TAU_MIN.ln(), TAU_MAX.ln());
    }
}

/// Per-sample alignment output across all classes.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// Clean-prompt similarities `1 - d_uot(F, G_clean_k)`.
    pub s_clean: Vector,
    /// Noise-prompt similarities `1 - d_uot(F, G_noisy_k)`.
    pub s_noisy: Vector,
    /// Class softmax of `s_clean / tau`; sums to one.
    pub p_clean: Vector,
    /// Pairwise noise-side confidence per class.
    pub p_noisy: Vector,
    /// Adaptive threshold; identical to `p_noisy` by definition.
    pub phi: Vector,
    /// True when every transport solve behind the scores converged.
    pub converged_all: bool,
}

/// Unbalanced transport distance between a sample's patch map and one
/// prompt set: cost `1 - cos`, uniform patch marginal `1/L`, prompt
/// marginal `theta/N`. Returns `<C, T*>` and the plan.
pub fn uot_distance(
    features: &SampleFeatures,
    prompts: &Matrix,
    cfg: &AlignmentConfig,
) -> Result<(f64, TransportPlan)> {
    cfg.validate()?;
    let sim = cosine_similarity(&features.local, prompts)?;
    let (l, n) = sim.shape();
    let mut cost = sim;
    for v in cost.as_mut_slice() {
        *v = 1.0 - *v;
    }
    let problem = TransportProblem::new(
        cost,
        Vector::filled(l, 1.0 / l as f64),
        Vector::filled(n, cfg.theta / n as f64),
        cfg.epsilon,
    )?;
    let plan = dykstra_uot(&problem, cfg.max_iter, cfg.stop_delta)?;
    Ok((plan.objective, plan))
}

/// Numerically stable logistic `1 / (1 + exp(-x))`.
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pairwise noise-side probability
/// `exp(s_n/tau) / (exp(s_c/tau) + exp(s_n/tau))`, stabilized.
pub(crate) fn pairwise_noisy_prob(s_clean: f64, s_noisy: f64, tau: f64) -> f64 {
    logistic((s_noisy - s_clean) / tau)
}

/// Assembles an [`AlignmentResult`] from per-class similarity scores.
pub(crate) fn result_from_scores(
    s_clean: Vector,
    s_noisy: Vector,
    tau: f64,
    converged_all: bool,
) -> Result<AlignmentResult> {
    let p_clean = tempered_softmax(&s_clean, tau)?;
    let p_noisy: Vec<f64> = s_clean
        .as_slice()
        .iter()
        .zip(s_noisy.as_slice())
        .map(|(&c, &n)| pairwise_noisy_prob(c, n, tau))
        .collect();
    let p_noisy = Vector::from_vec(p_noisy)?;
    let phi = p_noisy.clone();
    Ok(AlignmentResult {
        s_clean,
        s_noisy,
        p_clean,
        p_noisy,
        phi,
        converged_all,
    })
}

/// Runs the full per-sample alignment against every class in the bank.
pub fn align_sample(
    features: &SampleFeatures,
    bank: &PromptBank,
    cfg: &AlignmentConfig,
) -> Result<AlignmentResult> {
    let mut s_clean = Vec::with_capacity(bank.num_classes);
    let mut s_noisy = Vec::with_capacity(bank.num_classes);
    let mut converged_all = true;
    for k in 0..bank.num_classes {
        let (d_c, plan_c) = uot_distance(features, &bank.clean[k], cfg)?;
        let (d_n, plan_n) = uot_distance(features, &bank.noisy[k], cfg)?;
        converged_all &= plan_c.converged && plan_n.converged;
        s_clean.push(1.0 - d_c);
        s_noisy.push(1.0 - d_n);
    }
    result_from_scores(
        Vector::from_vec(s_clean)?,
        Vector::from_vec(s_noisy)?,
        bank.tau(),
        converged_all,
    )
}

/// A sample is clean iff its clean confidence strictly exceeds the adaptive
/// threshold at the observed label; ties classify as noisy.
pub fn is_clean(result: &AlignmentResult, observed_label: usize) -> Result<bool> {
    if observed_label >= result.p_clean.len() {
        return Err(Error::LabelOutOfRange {
            label: observed_label,
            num_classes: result.p_clean.len(),
        });
    }
    Ok(result.p_clean.get(observed_label) > result.phi.get(observed_label))
}

/// Inference rule: argmax over classes of `(1 - p_noisy) * p_clean`,
/// ties broken to the lowest class index.
pub fn predict(result: &AlignmentResult) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for k in 0..result.p_clean.len() {
        let score = (1.0 - result.p_noisy.get(k)) * result.p_clean.get(k);
        if score > best_score {
            best_score = score;
            best = k;
        }
    }
    best
}
