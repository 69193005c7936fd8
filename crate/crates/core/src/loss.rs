//! Supervised objectives and their analytic gradients.
//!
//! The combined loss is `gce + lambda_i * itbp`:
//!
//! * GCE `(1 - p^q)/q` consumes the class-softmax clean confidence of each
//!   sample's observed label and interpolates cross-entropy (q -> 0) and
//!   mean absolute error (q = 1).
//! * ITBP is the bi-directional pairwise term over a batch: a sample must
//!   reject its own class's noise-aware prompt (reversed match) while
//!   accepting the noise-aware prompts of other samples' classes
//!   (unrelated matches).
//!
//! Gradients flow through the cosine costs, the class softmax, and the
//! pairwise logistic with the transport plans held constant (stop-gradient
//! through the solver). [`batch_plans`] solves and freezes the plans;
//! [`supervised_loss_frozen`] re-evaluates the loss for any bank against
//! frozen plans, which is exactly the function a finite-difference check
//! must probe.

use crate::align::{pairwise_noisy_prob, AlignmentConfig, PromptBank};
use crate::dataset::SampleFeatures;
use crate::error::{Error, Result};
use crate::matrix::{cosine_similarity, l2_normalize_rows, Matrix};
use crate::ot::{dykstra_uot, TransportProblem};
use crate::matrix::Vector;

/// Clamp bound keeping the pairwise probabilities away from 0 and 1
/// before the ITBP logs.
pub const PN_CLAMP: f64 = 1e-7;

/// One training sample: borrowed features plus the label to supervise with.
#[derive(Debug, Clone, Copy)]
pub struct BatchSample<'a> {
    pub features: &'a SampleFeatures,
    pub label: usize,
}

/// Loss components; `total = gce + lambda_i * itbp` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub gce: f64,
    pub itbp: f64,
}

/// Gradients mirroring the bank layout plus the log-temperature partial.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub d_clean: Vec<Matrix>,
    pub d_noisy: Vec<Matrix>,
    pub d_log_tau: f64,
}

impl GradientSet {
    pub fn zeros_like(bank: &PromptBank) -> Self {
        Self {
            d_clean: vec![Matrix::zeros(bank.views, bank.dim); bank.num_classes],
            d_noisy: vec![Matrix::zeros(bank.views, bank.dim); bank.num_classes],
            d_log_tau: 0.0,
        }
    }
}

/// Transport plans of one batch, frozen at the bank state they were solved
/// for, indexed `[sample][class]`.
#[derive(Debug, Clone)]
pub struct FrozenPlans {
    pub clean: Vec<Vec<Matrix>>,
    pub noisy: Vec<Vec<Matrix>>,
    /// Number of solves that hit the iteration cap.
    pub unconverged_solves: usize,
}

/// Generalized cross-entropy `(1 - p^q)/q` for `p in (0,1]`, `q in (0,1]`.
pub fn gce_loss(p_y: f64, q: f64) -> Result<f64> {
    if !(p_y > 0.0 && p_y <= 1.0) {
        return Err(Error::DomainError {
            context: "gce probability",
            value: p_y,
        });
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::DomainError {
            context: "gce exponent q",
            value: q,
        });
    }
    Ok((1.0 - p_y.powf(q)) / q)
}

/// ITBP loss over a `B x B` matrix of pairwise noise-side probabilities,
/// where entry `(i, j)` relates image `i` to the noise-aware prompt of
/// sample `j`'s class. Diagonal entries are reversed matches (driven to 0),
/// off-diagonal entries unrelated matches (driven to 1). `B = 1` keeps
/// only the reversed-match term.
pub fn itbp_loss(batch_pn: &Matrix) -> Result<f64> {
    let b = batch_pn.rows();
    if b == 0 || batch_pn.cols() != b {
        return Err(Error::DimensionMismatch {
            left: batch_pn.shape(),
            right: (b.max(1), b.max(1)),
        });
    }
    if let Some(&bad) = batch_pn
        .as_slice()
        .iter()
        .find(|v| !(**v > 0.0 && **v < 1.0))
    {
        return Err(Error::DomainError {
            context: "itbp probability must lie strictly inside (0, 1)",
            value: bad,
        });
    }
    let mut reversed = 0.0;
    for i in 0..b {
        reversed -= (1.0 - batch_pn.get(i, i)).ln();
    }
    let mut loss = reversed / b as f64;
    if b > 1 {
        let mut unrelated = 0.0;
        for i in 0..b {
            for j in 0..b {
                if i != j {
                    unrelated -= batch_pn.get(i, j).ln();
                }
            }
        }
        loss += unrelated / (b * (b - 1)) as f64;
    }
    Ok(loss)
}

/// Solves every clean/noisy transport problem of the batch and freezes the
/// plans for the stop-gradient convention.
pub fn batch_plans(
    batch: &[BatchSample],
    bank: &PromptBank,
    cfg: &AlignmentConfig,
) -> Result<FrozenPlans> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::ValidationError {
            message: "batch must be non-empty".to_string(),
        });
    }
    let mut clean = Vec::with_capacity(batch.len());
    let mut noisy = Vec::with_capacity(batch.len());
    let mut unconverged = 0usize;
    for sample in batch {
        let mut row_c = Vec::with_capacity(bank.num_classes);
        let mut row_n = Vec::with_capacity(bank.num_classes);
        for k in 0..bank.num_classes {
            for (prompts, out) in [(&bank.clean[k], &mut row_c), (&bank.noisy[k], &mut row_n)] {
                let sim = cosine_similarity(&sample.features.local, prompts)?;
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
                if !plan.converged {
                    unconverged += 1;
                }
                out.push(plan.plan);
            }
        }
        clean.push(row_c);
        noisy.push(row_n);
    }
    Ok(FrozenPlans {
        clean,
        noisy,
        unconverged_solves: unconverged,
    })
}

/// Similarity `1 - <C(G), T>` for one frozen plan and the current prompts.
fn frozen_similarity(local: &Matrix, prompts: &Matrix, plan: &Matrix) -> Result<f64> {
    let sim = cosine_similarity(local, prompts)?;
    let mut cost = sim;
    for v in cost.as_mut_slice() {
        *v = 1.0 - *v;
    }
    Ok(1.0 - cost.frobenius_dot(plan)?)
}

/// Batchwise clean/noisy similarity matrices (`B x C`) against frozen plans.
fn frozen_scores(
    batch: &[BatchSample],
    bank: &PromptBank,
    plans: &FrozenPlans,
) -> Result<(Matrix, Matrix)> {
    let b = batch.len();
    let c = bank.num_classes;
    if plans.clean.len() != b || plans.noisy.len() != b {
        return Err(Error::IndexMismatch {
            expected: b,
            got: plans.clean.len(),
        });
    }
    let mut s_c = Matrix::zeros(b, c);
    let mut s_n = Matrix::zeros(b, c);
    for (i, sample) in batch.iter().enumerate() {
        for k in 0..c {
            s_c.set(
                i,
                k,
                frozen_similarity(&sample.features.local, &bank.clean[k], &plans.clean[i][k])?,
            );
            s_n.set(
                i,
                k,
                frozen_similarity(&sample.features.local, &bank.noisy[k], &plans.noisy[i][k])?,
            );
        }
    }
    Ok((s_c, s_n))
}

struct ForwardPass {
    s_c: Matrix,
    s_n: Matrix,
    /// Class softmax of `s_c / tau`, rows summing to one.
    p_c: Matrix,
    /// Raw (unclamped) pairwise probabilities, `B x B`.
    pn_raw: Matrix,
    /// Clamped pairwise probabilities.
    pn: Matrix,
    loss: LossValue,
}

fn forward(
    batch: &[BatchSample],
    bank: &PromptBank,
    plans: &FrozenPlans,
    lambda_i: f64,
    q: f64,
) -> Result<ForwardPass> {
    let (s_c, s_n) = frozen_scores(batch, bank, plans)?;
    let b = batch.len();
    let c = bank.num_classes;
    let tau = bank.tau();
    for sample in batch {
        if sample.label >= c {
            return Err(Error::LabelOutOfRange {
                label: sample.label,
                num_classes: c,
            });
        }
    }
    let mut p_c = Matrix::zeros(b, c);
    let mut gce_sum = 0.0;
    for i in 0..b {
        let row = crate::matrix::tempered_softmax(
            &Vector::from_vec(s_c.row(i).to_vec())?,
            tau,
        )?;
        p_c.row_mut(i).copy_from_slice(row.as_slice());
        // p_y > 0 mathematically; the floor only guards exp underflow at
        // extreme score gaps so the op's domain contract stays intact.
        let p_y = p_c.get(i, batch[i].label).max(1e-300);
        gce_sum += gce_loss(p_y, q)?;
    }
    let gce = gce_sum / b as f64;
    let mut pn_raw = Matrix::zeros(b, b);
    let mut pn = Matrix::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            let k = batch[j].label;
            let p = pairwise_noisy_prob(s_c.get(i, k), s_n.get(i, k), tau);
            pn_raw.set(i, j, p);
            pn.set(i, j, p.clamp(PN_CLAMP, 1.0 - PN_CLAMP));
        }
    }
    let itbp = itbp_loss(&pn)?;
    let loss = LossValue {
        total: gce + lambda_i * itbp,
        gce,
        itbp,
    };
    Ok(ForwardPass {
        s_c,
        s_n,
        p_c,
        pn_raw,
        pn,
        loss,
    })
}

/// Evaluates the combined loss for `bank` against previously frozen plans.
pub fn supervised_loss_frozen(
    batch: &[BatchSample],
    bank: &PromptBank,
    plans: &FrozenPlans,
    lambda_i: f64,
    q: f64,
) -> Result<LossValue> {
    Ok(forward(batch, bank, plans, lambda_i, q)?.loss)
}

/// Combined supervised loss: solves the batch's transport problems and
/// evaluates `gce + lambda_i * itbp`.
pub fn supervised_loss(
    batch: &[BatchSample],
    bank: &PromptBank,
    lambda_i: f64,
    q: f64,
    cfg: &AlignmentConfig,
) -> Result<LossValue> {
    let plans = batch_plans(batch, bank, cfg)?;
    supervised_loss_frozen(batch, bank, &plans, lambda_i, q)
}

/// Analytic gradients of the combined loss under the stop-gradient-through-
/// plan convention.
pub fn loss_gradients(
    batch: &[BatchSample],
    bank: &PromptBank,
    lambda_i: f64,
    q: f64,
    cfg: &AlignmentConfig,
) -> Result<GradientSet> {
    let (_, grads, _) = loss_and_gradients(batch, bank, lambda_i, q, cfg)?;
    Ok(grads)
}

/// One shared forward/backward pass returning the loss, the gradients, and
/// the number of transport solves that failed to converge.
pub fn loss_and_gradients(
    batch: &[BatchSample],
    bank: &PromptBank,
    lambda_i: f64,
    q: f64,
    cfg: &AlignmentConfig,
) -> Result<(LossValue, GradientSet, usize)> {
    let plans = batch_plans(batch, bank, cfg)?;
    let grads = gradients_frozen(batch, bank, &plans, lambda_i, q)?;
    let loss = supervised_loss_frozen(batch, bank, &plans, lambda_i, q)?;
    Ok((loss, grads, plans.unconverged_solves))
}

/// Analytic gradients against frozen plans (the stop-gradient convention
/// made explicit, mirrored by the finite-difference oracle in tests).
pub fn gradients_frozen(
    batch: &[BatchSample],
    bank: &PromptBank,
    plans: &FrozenPlans,
    lambda_i: f64,
    q: f64,
) -> Result<GradientSet> {
    let pass = forward(batch, bank, plans, lambda_i, q)?;
    let b = batch.len();
    let c = bank.num_classes;
    let tau = bank.tau();
    let bf = b as f64;

    // dL/ds accumulators over the batch-by-class score matrices.
    let mut dl_dsc = Matrix::zeros(b, c);
    let mut dl_dsn = Matrix::zeros(b, c);
    let mut d_log_tau = 0.0;

    // GCE through the class softmax: with z = s_c / tau,
    // dL/dz_k = -(1/B) p_y^q (delta_ky - p_k).
    for i in 0..b {
        let y = batch[i].label;
        let p_y = pass.p_c.get(i, y).max(1e-300);
        let pyq = p_y.powf(q);
        let mut z_dot_p = 0.0;
        for k in 0..c {
            z_dot_p += pass.p_c.get(i, k) * (pass.s_c.get(i, k) / tau);
        }
        for k in 0..c {
            let delta = if k == y { 1.0 } else { 0.0 };
            let dz = -(pyq) * (delta - pass.p_c.get(i, k)) / bf;
            dl_dsc.set(i, k, dl_dsc.get(i, k) + dz / tau);
        }
        d_log_tau += pyq * (pass.s_c.get(i, y) / tau - z_dot_p) / bf;
    }

    // ITBP through the pairwise logistic: w_ij = (s_n - s_c)(i, y_j) / tau.
    for i in 0..b {
        for j in 0..b {
            let raw = pass.pn_raw.get(i, j);
            // The clamp has zero derivative when active.
            if raw < PN_CLAMP || raw > 1.0 - PN_CLAMP {
                continue;
            }
            let p = pass.pn.get(i, j);
            let dw = if i == j {
                p / bf
            } else {
                -(1.0 - p) / (bf * (bf - 1.0))
            };
            let k = batch[j].label;
            let w = (pass.s_n.get(i, k) - pass.s_c.get(i, k)) / tau;
            dl_dsn.set(i, k, dl_dsn.get(i, k) + lambda_i * dw / tau);
            dl_dsc.set(i, k, dl_dsc.get(i, k) - lambda_i * dw / tau);
            d_log_tau += lambda_i * dw * (-w);
        }
    }

    // Chain into the prompts: s = const + sum_n a_n . g_n / |g_n| with
    // a_n = sum_l T[l][n] fhat_l, so ds/dg_n = (a_n - (a_n.ghat) ghat)/|g_n|.
    let mut grads = GradientSet::zeros_like(bank);
    for (i, sample) in batch.iter().enumerate() {
        let fhat = l2_normalize_rows(&sample.features.local)?;
        for k in 0..c {
            accumulate_prompt_gradient(
                &mut grads.d_clean[k],
                &bank.clean[k],
                &plans.clean[i][k],
                &fhat,
                dl_dsc.get(i, k),
            );
            accumulate_prompt_gradient(
                &mut grads.d_noisy[k],
                &bank.noisy[k],
                &plans.noisy[i][k],
                &fhat,
                dl_dsn.get(i, k),
            );
        }
    }
    grads.d_log_tau = d_log_tau;
    Ok(grads)
}

fn accumulate_prompt_gradient(
    out: &mut Matrix,
    prompts: &Matrix,
    plan: &Matrix,
    fhat: &Matrix,
    weight: f64,
) {
    if weight == 0.0 {
        return;
    }
    let (l, n) = plan.shape();
    let d = prompts.cols();
    for view in 0..n {
        // a = sum_l T[l][view] fhat_l
        let mut a = vec![0.0; d];
        for patch in 0..l {
            let t = plan.get(patch, view);
            if t == 0.0 {
                continue;
            }
            for (ai, f) in a.iter_mut().zip(fhat.row(patch)) {
                *ai += t * f;
            }
        }
        let g = prompts.row(view);
        let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let inv = 1.0 / g_norm;
        let a_dot_ghat: f64 = a.iter().zip(g).map(|(ai, gi)| ai * gi * inv).sum();
        let row = out.row_mut(view);
        for idx in 0..d {
            let ghat = g[idx] * inv;
            row[idx] += weight * (a[idx] - a_dot_ghat * ghat) * inv;
        }
    }
}
