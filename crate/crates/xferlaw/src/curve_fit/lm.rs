//! Damped least squares on small dense problems.
//!
//! The loop is the classic one: solve `(J^T J + lambda I) step = -J^T r`,
//! multiply the damping by 10 on a failed step and divide it by 10 on a
//! success, stop when the gradient norm drops below tolerance or the
//! iteration budget runs out.

use nalgebra::{DMatrix, DVector};

/// A residual vector with its analytic Jacobian.
pub trait LeastSquaresProblem {
    /// Residuals at `params`.
    fn residuals(&self, params: &[f64]) -> Vec<f64>;
    /// Jacobian rows, one per residual, columns matching `params`.
    fn jacobian(&self, params: &[f64]) -> Vec<Vec<f64>>;
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub initial_damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_iterations: 500,
            gradient_tol: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub residual_rms: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn cost(residuals: &[f64]) -> f64 {
    0.5 * residuals.iter().map(|r| r * r).sum::<f64>()
}

fn rms(residuals: &[f64]) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt()
}

/// Minimize half the sum of squared residuals starting from `x0`.
///
/// Never panics on a bad model: non-finite residuals or a singular system
/// reject the step and raise the damping, and running out of iterations
/// returns the best parameters seen with `converged = false`.
pub fn minimize(
    problem: &dyn LeastSquaresProblem,
    x0: &[f64],
    config: &LmConfig,
) -> LmOutcome {
    let n_params = x0.len();
    let mut x = x0.to_vec();
    let mut r = problem.residuals(&x);
    let mut current_cost = cost(&r);
    let mut damping = config.initial_damping;
    let mut iterations = 0;
    let mut converged = false;
    let mut gradient_norm = f64::INFINITY;

    while iterations < config.max_iterations {
        let jac_rows = problem.jacobian(&x);
        let m = r.len();
        let jac = DMatrix::from_fn(m, n_params, |i, j| jac_rows[i][j]);
        let rv = DVector::from_column_slice(&r);
        let grad = jac.transpose() * &rv;
        gradient_norm = grad.norm();
        if gradient_norm < config.gradient_tol {
            converged = true;
            break;
        }

        let jtj = jac.transpose() * &jac;
        iterations += 1;

        let mut damped = jtj.clone();
        for i in 0..n_params {
            damped[(i, i)] += damping;
        }
        let step = damped
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&(-&grad)))
            .or_else(|| damped.lu().solve(&(-&grad)));

        let accepted = match step {
            Some(step) => {
                let mut candidate = x.clone();
                for i in 0..n_params {
                    // keep exp() of log-parameterized values representable
                    candidate[i] = (x[i] + step[i]).clamp(-700.0, 700.0);
                }
                let r_new = problem.residuals(&candidate);
                let new_cost = cost(&r_new);
                if new_cost.is_finite() && new_cost < current_cost {
                    x = candidate;
                    r = r_new;
                    current_cost = new_cost;
                    true
                } else {
                    false
                }
            }
            None => false,
        };

        if accepted {
            damping = (damping / 10.0).max(1e-14);
        } else {
            damping = (damping * 10.0).min(1e14);
        }
    }

    LmOutcome {
        residual_rms: rms(&r),
        gradient_norm,
        iterations,
        converged,
        params: x,
    }
}
