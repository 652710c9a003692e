//! Levenberg–Marquardt for small-parameter nonlinear least squares.
//!
//! Minimizes `‖r(x)‖²` for a residual map `r: Rⁿ → Rᵐ` with `n` small (a few
//! dozen at most) and `m` possibly large. The damped normal equations
//! `(JᵀJ + μD)δ = -Jᵀr` are formed directly, so the Jacobian never has to be
//! factorized. `D` is the running maximum of `diag(JᵀJ)` (Marquardt scaling)
//! and `μ` follows Nielsen's update. A trial point is accepted only if it
//! lowers the cost, so the returned point is never worse than the start.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub trait LeastSquaresProblem {
    fn n_params(&self) -> usize;

    fn n_residuals(&self) -> usize;

    /// Fills `out` with `r(x)`. Returns `false` if `x` is infeasible.
    fn residuals(&self, x: &[f64], out: &mut [f64]) -> bool;

    /// Fills the row-major `m × n` Jacobian at `x`; `r` holds `r(x)`.
    /// Returns `false` if it cannot be evaluated.
    fn jacobian(&self, x: &[f64], r: &[f64], jac: &mut [f64]) -> bool;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmSettings {
    pub max_iterations: usize,
    /// Stop once `‖r‖` falls to this value.
    pub residual_tolerance: f64,
    /// Stop once `‖δ‖ <= step_tolerance · (‖x‖ + step_tolerance)`.
    pub step_tolerance: f64,
    /// Stop once `‖Jᵀr‖∞` falls to this value.
    pub gradient_tolerance: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            residual_tolerance: 1e-13,
            step_tolerance: 1e-11,
            gradient_tolerance: 1e-15,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Residual,
    Step,
    Gradient,
    /// Accepted steps no longer change the cost in floating point.
    CostStalled,
    MaxIterations,
    /// Damping grew without bound and no descent step was found.
    DampingOverflow,
    /// The residuals or the Jacobian could not be evaluated at the start.
    InvalidStart,
    /// The Jacobian could not be evaluated at an accepted point.
    JacobianFailed,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(
            self,
            Termination::Residual | Termination::Step | Termination::Gradient | Termination::CostStalled
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub x: Vec<f64>,
    /// `‖r(x)‖²` at the returned point.
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
}

impl LmReport {
    pub fn residual_norm(&self) -> f64 {
        self.cost.sqrt()
    }
}

const DAMPING_LIMIT: f64 = 1e32;

pub fn minimize<P: LeastSquaresProblem>(problem: &P, x0: &[f64], settings: &LmSettings) -> LmReport {
    let n = problem.n_params();
    let m = problem.n_residuals();
    debug_assert_eq!(x0.len(), n);

    let mut x = x0.to_vec();
    let mut r = vec![0.0; m];
    let report = |x: Vec<f64>, cost: f64, initial_cost: f64, iterations, termination| LmReport {
        x,
        cost,
        initial_cost,
        iterations,
        termination,
    };
    if !problem.residuals(&x, &mut r) {
        return report(x, f64::INFINITY, f64::INFINITY, 0, Termination::InvalidStart);
    }
    let mut cost = sum_sq(&r);
    let initial_cost = cost;
    if cost.sqrt() <= settings.residual_tolerance {
        return report(x, cost, initial_cost, 0, Termination::Residual);
    }

    let mut jac = vec![0.0; m * n];
    let mut r_trial = vec![0.0; m];
    let mut x_trial = vec![0.0; n];
    let mut scale = vec![0.0f64; n];
    let mut mu = 0.0;
    let mut nu = 2.0;

    let mut iterations = 0;
    let mut need_jacobian = true;
    let mut jtj = DMatrix::<f64>::zeros(n, n);
    let mut grad = DVector::<f64>::zeros(n);

    while iterations < settings.max_iterations {
        if need_jacobian {
            if !problem.jacobian(&x, &r, &mut jac) {
                let term = if iterations == 0 { Termination::InvalidStart } else { Termination::JacobianFailed };
                return report(x, cost, initial_cost, iterations, term);
            }
            normal_equations(&jac, &r, n, &mut jtj, &mut grad);
            if grad.amax() <= settings.gradient_tolerance {
                return report(x, cost, initial_cost, iterations, Termination::Gradient);
            }
            for i in 0..n {
                scale[i] = scale[i].max(jtj[(i, i)]);
            }
            let floor = scale.iter().cloned().fold(0.0, f64::max) * 1e-12;
            for s in scale.iter_mut() {
                if *s <= floor {
                    *s = floor.max(f64::MIN_POSITIVE);
                }
            }
            if iterations == 0 {
                mu = 1e-3;
            }
            need_jacobian = false;
        }
        iterations += 1;

        let mut damped = jtj.clone();
        for i in 0..n {
            damped[(i, i)] += mu * scale[i];
        }
        let step = match damped.cholesky() {
            Some(ch) => ch.solve(&(-&grad)),
            None => {
                mu *= nu;
                nu *= 2.0;
                if mu > DAMPING_LIMIT {
                    return report(x, cost, initial_cost, iterations, Termination::DampingOverflow);
                }
                continue;
            }
        };

        let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if step.norm() <= settings.step_tolerance * (x_norm + settings.step_tolerance) {
            return report(x, cost, initial_cost, iterations, Termination::Step);
        }

        for i in 0..n {
            x_trial[i] = x[i] + step[i];
        }
        let feasible = problem.residuals(&x_trial, &mut r_trial);
        let trial_cost = if feasible { sum_sq(&r_trial) } else { f64::INFINITY };

        // predicted reduction of ‖r‖² under the linear model
        let mut predicted = 0.0;
        for i in 0..n {
            predicted += step[i] * (mu * scale[i] * step[i] - grad[i]);
        }
        let actual = cost - trial_cost;
        if trial_cost.is_finite() && actual > 0.0 && predicted > 0.0 {
            let rho = actual / predicted;
            x.copy_from_slice(&x_trial);
            std::mem::swap(&mut r, &mut r_trial);
            let previous = cost;
            cost = trial_cost;
            mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
            need_jacobian = true;
            if cost.sqrt() <= settings.residual_tolerance {
                return report(x, cost, initial_cost, iterations, Termination::Residual);
            }
            if previous - cost <= 1e-15 * previous {
                return report(x, cost, initial_cost, iterations, Termination::CostStalled);
            }
        } else {
            mu *= nu;
            nu *= 2.0;
            if mu > DAMPING_LIMIT {
                return report(x, cost, initial_cost, iterations, Termination::DampingOverflow);
            }
        }
    }
    report(x, cost, initial_cost, iterations, Termination::MaxIterations)
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Accumulates `JᵀJ` and `Jᵀr` from a row-major Jacobian.
fn normal_equations(jac: &[f64], r: &[f64], n: usize, jtj: &mut DMatrix<f64>, grad: &mut DVector<f64>) {
    jtj.fill(0.0);
    grad.fill(0.0);
    for (row, &ri) in jac.chunks_exact(n).zip(r) {
        for a in 0..n {
            let ja = row[a];
            if ja == 0.0 {
                continue;
            }
            grad[a] += ja * ri;
            for b in a..n {
                jtj[(a, b)] += ja * row[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            jtj[(a, b)] = jtj[(b, a)];
        }
    }
}

/// Central-difference Jacobian of `problem.residuals`, column by column.
/// Returns `false` if any perturbed evaluation is infeasible.
pub fn central_difference_jacobian<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    step: f64,
    jac: &mut [f64],
) -> bool {
    let n = x.len();
    let m = problem.n_residuals();
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + step;
        let ok_p = problem.residuals(&xp, &mut plus);
        xp[j] = x[j] - step;
        let ok_m = problem.residuals(&xp, &mut minus);
        xp[j] = x[j];
        if !(ok_p && ok_m) {
            return false;
        }
        for i in 0..m {
            jac[i * n + j] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    true
}
