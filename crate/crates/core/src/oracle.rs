//! Brute-force reference solvers used by the test suites.
//!
//! These deliberately share no code with the scaling solvers in [`crate::ot`]:
//! the exact OT oracle enumerates permutations, and the unbalanced oracle
//! performs grid descent over the feasible polytope. Both are far too slow
//! for production use and exist only to pin down expected values.

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Vector};
use crate::ot::entropic_objective;

/// Largest square size the permutation oracle will enumerate (7! = 5040).
pub const ORACLE_MAX_SIZE: usize = 7;

/// Exact OT cost for a square cost matrix under uniform marginals `1/n`:
/// `(1/n) * min over permutations of sum_i C[i][perm(i)]`.
pub fn exact_ot_oracle(cost: &Matrix) -> Result<f64> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::DimensionMismatch {
            left: cost.shape(),
            right: (n, n),
        });
    }
    if n > ORACLE_MAX_SIZE {
        return Err(Error::TooLarge {
            size: n,
            max: ORACLE_MAX_SIZE,
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = p.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
        if total < best {
            best = total;
        }
    });
    Ok(best / n as f64)
}

fn permute(items: &mut [usize], start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

/// One mass-shuffling move on the slack-extended plan: subtract a step
/// from the `minus` cells, add it to the `plus` cells.
type CycleMove = (Vec<(usize, usize)>, Vec<(usize, usize)>);

/// All length-4 and length-6 cycle moves of the `l x (n+1)` transportation
/// polytope. Length-4 alone can stall when slack must migrate across
/// columns; adding length-6 covers every elementary cycle for up to three
/// rows and keeps larger instances accurate in practice.
fn cycle_moves(l: usize, cols: usize) -> Vec<CycleMove> {
    let mut moves = Vec::new();
    for a in 0..l {
        for b in 0..l {
            if a == b {
                continue;
            }
            for j in 0..cols {
                for k in 0..cols {
                    if j == k {
                        continue;
                    }
                    moves.push((vec![(a, j), (b, k)], vec![(a, k), (b, j)]));
                }
            }
        }
    }
    let triples = |count: usize| -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        for x in 0..count {
            for y in 0..count {
                for z in 0..count {
                    if x != y && y != z && x != z {
                        out.push([x, y, z]);
                    }
                }
            }
        }
        out
    };
    for rows in triples(l) {
        for cs in triples(cols) {
            let [a, b, c] = rows;
            let [j, k, m] = cs;
            moves.push((
                vec![(a, j), (b, k), (c, m)],
                vec![(a, k), (b, m), (c, j)],
            ));
        }
    }
    moves
}

/// Grid-descent oracle for the entropically regularized unbalanced problem
/// over `{T >= 0, T^T 1 = nu, T 1 <= mu}`.
///
/// Works on the slack-extended transportation polytope: an extra column
/// holds each row's unused capacity, turning the row caps into equalities.
/// Cycle moves are swept with step sizes halving down to `resolution`; a
/// move is kept when it lowers `<C,T> + eps <T, log T>`. Convexity of the
/// objective makes the final plan near-optimal at the grid resolution.
pub fn uot_grid_oracle(
    cost: &Matrix,
    mu: &Vector,
    nu: &Vector,
    epsilon: f64,
    resolution: f64,
) -> Result<Matrix> {
    let (l, n) = cost.shape();
    if mu.len() != l || nu.len() != n {
        return Err(Error::DimensionMismatch {
            left: cost.shape(),
            right: (mu.len(), nu.len()),
        });
    }
    // Start from uniform columns; the slack column absorbs leftover capacity.
    let mut x = Matrix::zeros(l, n + 1);
    for i in 0..l {
        for j in 0..n {
            x.set(i, j, nu.get(j) / l as f64);
        }
        let used: f64 = (0..n).map(|j| x.get(i, j)).sum();
        let slack = mu.get(i) - used;
        if slack < -1e-12 {
            return Err(Error::ValidationError {
                message: "uniform start infeasible: |nu|_1 exceeds |mu|_1".to_string(),
            });
        }
        x.set(i, n, slack.max(0.0));
    }
    let objective = |x: &Matrix| -> f64 {
        let mut t = Matrix::zeros(l, n);
        for i in 0..l {
            for j in 0..n {
                t.set(i, j, x.get(i, j));
            }
        }
        entropic_objective(cost, &t, epsilon).expect("shapes fixed")
    };
    let moves = cycle_moves(l, n + 1);
    let mut step = 0.128;
    while step >= resolution * 0.999 {
        let mut improved = true;
        while improved {
            improved = false;
            let mut current = objective(&x);
            for (minus, plus) in &moves {
                let d = minus
                    .iter()
                    .fold(step, |acc, &(r, c)| acc.min(x.get(r, c)));
                if d <= 0.0 {
                    continue;
                }
                for &(r, c) in minus {
                    x.set(r, c, x.get(r, c) - d);
                }
                for &(r, c) in plus {
                    x.set(r, c, x.get(r, c) + d);
                }
                let candidate = objective(&x);
                if candidate < current - 1e-15 {
                    current = candidate;
                    improved = true;
                } else {
                    for &(r, c) in minus {
                        x.set(r, c, x.get(r, c) + d);
                    }
                    for &(r, c) in plus {
                        x.set(r, c, x.get(r, c) - d);
                    }
                }
            }
        }
        step /= 2.0;
    }
    let mut t = Matrix::zeros(l, n);
    for i in 0..l {
        for j in 0..n {
            t.set(i, j, x.get(i, j));
        }
    }
    Ok(t)
}
