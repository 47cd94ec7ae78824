//! Tiny dense phase-1 simplex: decide whether a target vector is a
//! nonnegative combination of given columns, returning the coefficients or
//! a Farkas certificate (a direction nonpositive on every column, positive
//! on the target).

use nalgebra::DVector;

/// Outcome of the feasibility problem `A x = b, x >= 0`.
#[derive(Debug, Clone)]
pub enum LpOutcome {
    /// Coefficients (one per column) reproducing the target.
    Feasible(Vec<f64>),
    /// `y` with `y . column_j <= 0` for all j and `y . target > 0`.
    Infeasible(DVector<f64>),
}

const PIVOT_EPS: f64 = 1e-12;
const MAX_ITERS: usize = 10_000;

/// Solve `sum_j x_j columns[j] = target` with `x >= 0` by a phase-1 simplex
/// (artificial basis, Bland's rule, so no cycling). `tol` decides whether
/// the residual objective counts as zero.
pub fn nonneg_solve(columns: &[DVector<f64>], target: &DVector<f64>, tol: f64) -> LpOutcome {
    let m = target.len();
    let n = columns.len();
    // rows flipped so the right-hand side is nonnegative
    let mut sign = vec![1.0f64; m];
    let width = n + m + 1; // structural | artificial | rhs
    let mut t = vec![vec![0.0f64; width]; m];
    for i in 0..m {
        if target[i] < 0.0 {
            sign[i] = -1.0;
        }
        for j in 0..n {
            t[i][j] = sign[i] * columns[j][i];
        }
        t[i][n + i] = 1.0;
        t[i][width - 1] = sign[i] * target[i];
    }
    // reduced costs for "minimize the sum of artificials"
    let mut z = vec![0.0f64; width];
    for j in 0..width {
        let col_sum: f64 = (0..m).map(|i| t[i][j]).sum();
        let c = if (n..n + m).contains(&j) { 1.0 } else { 0.0 };
        z[j] = c - col_sum;
    }
    // rhs slot of z tracks minus the objective; start is -(sum of b)
    let mut basis: Vec<usize> = (n..n + m).collect();

    for _ in 0..MAX_ITERS {
        // Bland: smallest-index improving column
        let Some(enter) = (0..n + m).find(|&j| z[j] < -PIVOT_EPS) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            if t[i][enter] > PIVOT_EPS {
                let ratio = t[i][width - 1] / t[i][enter];
                if ratio < best - PIVOT_EPS
                    || (ratio < best + PIVOT_EPS
                        && leave.is_some_and(|l| basis[i] < basis[l]))
                {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(r) = leave else {
            // unbounded cannot happen for a phase-1 objective; stop defensively
            break;
        };
        let piv = t[r][enter];
        for v in t[r].iter_mut() {
            *v /= piv;
        }
        for i in 0..m {
            if i != r && t[i][enter].abs() > 0.0 {
                let factor = t[i][enter];
                for j in 0..width {
                    t[i][j] -= factor * t[r][j];
                }
            }
        }
        let factor = z[enter];
        for j in 0..width {
            z[j] -= factor * t[r][j];
        }
        basis[r] = enter;
    }

    let objective: f64 = (0..m)
        .filter(|&i| basis[i] >= n)
        .map(|i| t[i][width - 1])
        .sum();
    if objective.abs() <= tol {
        let mut x = vec![0.0f64; n];
        for i in 0..m {
            if basis[i] < n {
                x[basis[i]] = t[i][width - 1].max(0.0);
            }
        }
        LpOutcome::Feasible(x)
    } else {
        // dual of the phase-1 optimum: y_i = 1 - (reduced cost of artificial i),
        // unflipped back to the original row orientation
        let y = DVector::from_iterator(m, (0..m).map(|i| sign[i] * (1.0 - z[n + i])));
        LpOutcome::Infeasible(y)
    }
}
