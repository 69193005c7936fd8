//! Entropic optimal-transport solvers.
//!
//! Both solvers iterate diagonal scalings of the kernel `exp(-C / epsilon)`:
//!
//! * [`sinkhorn_ot`]: classical balanced OT via alternating diagonal
//!   scaling, enforcing both marginals as equalities.
//! * [`dykstra_uot`]: the fast Dykstra scaling variant for the relaxed
//!   problem where column sums are equalities but row sums are only
//!   capped (`T 1 <= mu`), realized by an elementwise min with 1 on the
//!   row-scaling vector. Only the transported mass `|nu|_1` is moved,
//!   which is what makes partial patch-to-prompt matching possible.
//!
//! Both stop on the L1 change of the column-scaling vector. Runs that hit
//! the iteration cap return the current plan with `converged = false`
//! rather than erroring; training loops tolerate and surface the flag.
//! Log-domain stabilization is deliberately out of scope: 64-bit scaling
//! plus the underflow guard covers the regularization range used here.

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Vector};

/// Smallest scaling denominator tolerated before raising an underflow error.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

/// Tolerance on `| |mu|_1 - |nu|_1 |` for the balanced solver.
pub const BALANCE_TOL: f64 = 1e-9;

/// A transport problem: cost matrix, marginals, and entropic weight.
#[derive(Debug, Clone)]
pub struct TransportProblem {
    pub cost: Matrix,
    pub mu: Vector,
    pub nu: Vector,
    pub epsilon: f64,
}

impl TransportProblem {
    /// Validates dimensions, strict marginal positivity, and the entropic
    /// weight. Mass-balance preconditions are checked per solver.
    pub fn new(cost: Matrix, mu: Vector, nu: Vector, epsilon: f64) -> Result<Self> {
        if mu.len() != cost.rows() || nu.len() != cost.cols() {
            return Err(Error::DimensionMismatch {
                left: cost.shape(),
                right: (mu.len(), nu.len()),
            });
        }
        if !(epsilon > 0.0) {
            return Err(Error::DomainError {
                context: "entropic weight epsilon",
                value: epsilon,
            });
        }
        if let Some(&bad) = mu.as_slice().iter().find(|v| **v <= 0.0) {
            return Err(Error::DomainError {
                context: "mu entries must be positive",
                value: bad,
            });
        }
        if let Some(&bad) = nu.as_slice().iter().find(|v| **v <= 0.0) {
            return Err(Error::DomainError {
                context: "nu entries must be positive",
                value: bad,
            });
        }
        Ok(Self {
            cost,
            mu,
            nu,
            epsilon,
        })
    }
}

/// Solver output: the plan, its transport cost, and convergence data.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub plan: Matrix,
    /// Frobenius dot `<C, T>` (transport cost, excluding the entropy term).
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn kernel(cost: &Matrix, epsilon: f64) -> Result<Matrix> {
    let mut k = cost.clone();
    for v in k.as_mut_slice() {
        *v = (-*v / epsilon).exp();
    }
    // A fully underflowed row or column can never carry its required mass.
    if k.row_sums().contains(&0.0) || k.col_sums().contains(&0.0) {
        return Err(Error::NumericalUnderflow {
            context: "kernel exp(-C/epsilon) has an all-zero row or column",
        });
    }
    Ok(k)
}

/// Kernel with the cost put in its diagonal gauge: row minima, then column
/// minima of the reduced cost, are subtracted before exponentiating.
///
/// Over the balanced polytope both shifts are constants of the objective,
/// so the entropic minimizer is unchanged; the scaling vectors absorb the
/// gauge exactly. What changes is representability: every row and column
/// of the gauged kernel contains a 1, so small regularization weights no
/// longer silently truncate the kernel support that the optimal plan needs.
fn gauged_kernel(cost: &Matrix, epsilon: f64) -> Result<Matrix> {
    let (m, n) = cost.shape();
    let mut row_min = vec![f64::INFINITY; m];
    for i in 0..m {
        for v in cost.row(i) {
            row_min[i] = row_min[i].min(*v);
        }
    }
    let mut col_min = vec![f64::INFINITY; n];
    for i in 0..m {
        for (j, v) in cost.row(i).iter().enumerate() {
            col_min[j] = col_min[j].min(v - row_min[i]);
        }
    }
    let mut reduced = Matrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            reduced.set(i, j, cost.get(i, j) - row_min[i] - col_min[j]);
        }
    }
    kernel(&reduced, epsilon)
}

fn scaled_plan(k: &Matrix, u: &[f64], v: &[f64]) -> Result<Matrix> {
    let (m, n) = k.shape();
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        let row = k.row(i);
        for j in 0..n {
            data.push(u[i] * row[j] * v[j]);
        }
    }
    Matrix::from_vec(m, n, data)
}

fn mat_vec(k: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..k.rows())
        .map(|i| k.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn mat_t_vec(k: &Matrix, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; k.cols()];
    for i in 0..k.rows() {
        let ui = u[i];
        for (j, kv) in k.row(i).iter().enumerate() {
            out[j] += kv * ui;
        }
    }
    out
}

/// Classical entropic OT by Sinkhorn scaling.
///
/// Requires balanced marginals. Alternates `u <- mu ./ (K v)` and
/// `v <- nu ./ (K^T u)` until the L1 change in `v` drops below `tol` or
/// `max_iter` is reached, then returns `T = diag(u) K diag(v)`. The kernel
/// is built from the diagonally gauged cost, which leaves the fixed point
/// untouched while avoiding spurious support truncation at small `epsilon`.
pub fn sinkhorn_ot(p: &TransportProblem, max_iter: usize, tol: f64) -> Result<TransportPlan> {
    let mu_mass = p.mu.sum();
    let nu_mass = p.nu.sum();
    if (mu_mass - nu_mass).abs() > BALANCE_TOL {
        return Err(Error::UnbalancedMarginals { mu_mass, nu_mass });
    }
    let k = gauged_kernel(&p.cost, p.epsilon)?;
    let (m, n) = k.shape();
    let mut u = vec![1.0; m];
    let mut v = vec![1.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let kv = mat_vec(&k, &v);
        if kv.iter().any(|d| *d < UNDERFLOW_FLOOR) {
            return Err(Error::NumericalUnderflow {
                context: "sinkhorn row-scaling denominator",
            });
        }
        for i in 0..m {
            u[i] = p.mu.get(i) / kv[i];
        }
        let ktu = mat_t_vec(&k, &u);
        if ktu.iter().any(|d| *d < UNDERFLOW_FLOOR) {
            return Err(Error::NumericalUnderflow {
                context: "sinkhorn column-scaling denominator",
            });
        }
        let mut dv = 0.0;
        for j in 0..n {
            let next = p.nu.get(j) / ktu[j];
            dv += (next - v[j]).abs();
            v[j] = next;
        }
        if dv < tol {
            converged = true;
            break;
        }
    }
    let plan = scaled_plan(&k, &u, &v)?;
    let objective = p.cost.frobenius_dot(&plan)?;
    Ok(TransportPlan {
        plan,
        objective,
        iterations,
        converged,
    })
}

/// Unbalanced entropic OT by fast Dykstra scaling.
///
/// Requires `|mu|_1 >= |nu|_1`. Column sums are enforced as equalities;
/// row sums are capped at `mu` through the elementwise min with 1 in the
/// row-scaling update. Stops on `|nu_scaling - previous|_1 < delta`.
pub fn dykstra_uot(p: &TransportProblem, max_iter: usize, delta: f64) -> Result<TransportPlan> {
    let mu_mass = p.mu.sum();
    let nu_mass = p.nu.sum();
    if nu_mass > mu_mass + BALANCE_TOL {
        return Err(Error::UnbalancedMarginals { mu_mass, nu_mass });
    }
    let q = kernel(&p.cost, p.epsilon)?;
    let (m, n) = q.shape();
    let mut nu_s = vec![1.0; n];
    let mut mu_s = vec![1.0; m];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        // mu^(t) = min(mu ./ (Q nu^(t-1)), 1): the cap realizes T 1 <= mu.
        let qnu = mat_vec(&q, &nu_s);
        if qnu.iter().any(|d| *d < UNDERFLOW_FLOOR) {
            return Err(Error::NumericalUnderflow {
                context: "dykstra row-scaling denominator",
            });
        }
        for i in 0..m {
            mu_s[i] = (p.mu.get(i) / qnu[i]).min(1.0);
        }
        let qtmu = mat_t_vec(&q, &mu_s);
        if qtmu.iter().any(|d| *d < UNDERFLOW_FLOOR) {
            return Err(Error::NumericalUnderflow {
                context: "dykstra column-scaling denominator",
            });
        }
        let mut dnu = 0.0;
        for j in 0..n {
            let next = p.nu.get(j) / qtmu[j];
            dnu += (next - nu_s[j]).abs();
            nu_s[j] = next;
        }
        if dnu < delta {
            converged = true;
            break;
        }
    }
    let plan = scaled_plan(&q, &mu_s, &nu_s)?;
    let objective = p.cost.frobenius_dot(&plan)?;
    Ok(TransportPlan {
        plan,
        objective,
        iterations,
        converged,
    })
}

/// Entropic objective `<C, T> + epsilon * <T, log T>` with `0 log 0 = 0`.
pub fn entropic_objective(cost: &Matrix, plan: &Matrix, epsilon: f64) -> Result<f64> {
    if cost.shape() != plan.shape() {
        return Err(Error::DimensionMismatch {
            left: cost.shape(),
            right: plan.shape(),
        });
    }
    let transport = cost.frobenius_dot(plan)?;
    let entropy: f64 = plan
        .as_slice()
        .iter()
        .map(|&t| if t > 0.0 { t * t.ln() } else { 0.0 })
        .sum();
    Ok(transport + epsilon * entropy)
}
