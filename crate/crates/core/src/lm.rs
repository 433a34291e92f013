//! Damped least-squares (Levenberg-Marquardt) solver.
//!
//! Minimizes `sum(r_i^2)` for a residual vector `r(x)`. Callers encode any
//! weights inside the residuals themselves. The damping schedule is the
//! classic Marquardt policy: multiply lambda by `lambda_up` on a rejected
//! step, divide by `lambda_down` on an accepted one.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("residuals evaluated to a non-finite value")]
    NonFiniteResidual,
    #[error("damped normal equations are singular even at maximum damping")]
    SingularNormalEquations,
}

/// A nonlinear least-squares problem: residuals and an optional analytic
/// Jacobian. Without a Jacobian the solver falls back to central differences.
pub trait LmProblem {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64>;

    fn jacobian(&self, _params: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative decrease of the cost below which an accepted step terminates.
    pub cost_tol: f64,
    /// Step norm below which the iteration terminates.
    pub step_tol: f64,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 100,
            cost_tol: 1e-10,
            step_tol: 1e-10,
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    CostTolerance,
    StepTolerance,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: DVector<f64>,
    /// Final cost `sum(r^2)`.
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub reason: StopReason,
    /// Accepted costs, starting with the initial cost. Non-increasing.
    pub cost_trace: Vec<f64>,
}

/// Central-difference Jacobian: `J[i][j] = (r_i(x+h e_j) - r_i(x-h e_j)) / 2h`.
pub fn numeric_jacobian(
    problem: &dyn LmProblem,
    params: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>, LmError> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let n = params.len();
    let probe = problem.residuals(params);
    let m = probe.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus[j] += h;
        minus[j] -= h;
        let r_plus = problem.residuals(&plus);
        let r_minus = problem.residuals(&minus);
        if !all_finite(&r_plus) || !all_finite(&r_minus) {
            return Err(LmError::NonFiniteResidual);
        }
        for i in 0..m {
            jac[(i, j)] = (r_plus[i] - r_minus[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

const NUMERIC_JACOBIAN_STEP: f64 = 1e-6;
const LAMBDA_MAX: f64 = 1e12;

pub fn solve(
    problem: &dyn LmProblem,
    x0: DVector<f64>,
    opts: &LmOptions,
) -> Result<LmReport, LmError> {
    assert!(x0.iter().all(|v| v.is_finite()), "x0 must be finite");

    let mut x = x0;
    let r0 = problem.residuals(&x);
    if !all_finite(&r0) {
        return Err(LmError::NonFiniteResidual);
    }
    let initial_cost = r0.norm_squared();
    let mut cost = initial_cost;
    let mut lambda = opts.lambda_init;
    let mut trace = vec![cost];
    let mut iterations = 0;
    let mut converged = false;
    let mut reason = StopReason::MaxIterations;

    'outer: while iterations < opts.max_iter {
        iterations += 1;
        let jac = match problem.jacobian(&x) {
            Some(j) => j,
            None => numeric_jacobian(problem, &x, NUMERIC_JACOBIAN_STEP)?,
        };
        if !jac.iter().all(|v| v.is_finite()) {
            return Err(LmError::NonFiniteResidual);
        }
        let r = problem.residuals(&x);
        let jtj = jac.transpose() * &jac;
        let gradient = jac.transpose() * &r;

        // Retry the step with increasing damping until it reduces the cost.
        loop {
            let mut damped = jtj.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda;
            }
            let step = match damped.cholesky() {
                Some(chol) => chol.solve(&(-&gradient)),
                None => {
                    if lambda >= LAMBDA_MAX {
                        return Err(LmError::SingularNormalEquations);
                    }
                    lambda *= opts.lambda_up;
                    continue;
                }
            };

            let step_norm = step.norm();
            let candidate = &x + &step;
            let r_new = problem.residuals(&candidate);
            let cost_new = if all_finite(&r_new) {
                r_new.norm_squared()
            } else {
                f64::INFINITY
            };

            if cost_new < cost {
                let relative_drop = (cost - cost_new) / cost.max(f64::MIN_POSITIVE);
                x = candidate;
                debug_assert!(cost_new <= cost);
                cost = cost_new;
                trace.push(cost);
                lambda = (lambda / opts.lambda_down).max(1e-12);
                if relative_drop < opts.cost_tol {
                    converged = true;
                    reason = StopReason::CostTolerance;
                    break 'outer;
                }
                if step_norm < opts.step_tol {
                    converged = true;
                    reason = StopReason::StepTolerance;
                    break 'outer;
                }
                break;
            }

            // Rejected. A vanishing trial step means we are at a numerical
            // minimum: more damping can only shrink it further.
            if step_norm < opts.step_tol {
                converged = true;
                reason = StopReason::StepTolerance;
                break 'outer;
            }
            if lambda >= LAMBDA_MAX {
                converged = true;
                reason = StopReason::StepTolerance;
                break 'outer;
            }
            lambda *= opts.lambda_up;
        }
    }

    Ok(LmReport {
        params: x,
        cost,
        initial_cost,
        iterations,
        converged,
        reason,
        cost_trace: trace,
    })
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Adapter for building small problems from closures in tests and callers.
pub struct FnProblem<R, J = fn(&DVector<f64>) -> Option<DMatrix<f64>>>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
{
    pub residuals: R,
    pub jacobian: Option<J>,
}

impl<R: Fn(&DVector<f64>) -> DVector<f64>> FnProblem<R> {
    pub fn new(residuals: R) -> Self {
        FnProblem {
            residuals,
            jacobian: None,
        }
    }
}

impl<R, J> LmProblem for FnProblem<R, J>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> Option<DMatrix<f64>>,
{
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64> {
        (self.residuals)(params)
    }

    fn jacobian(&self, params: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jacobian.as_ref().and_then(|j| j(params))
    }
}
