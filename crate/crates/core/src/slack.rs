//! Closed-form slacks and multiplier estimates, the two-parameter residual
//! and its derivative formulas.
//!
//! For an inequality `c_i(x) <= 0` with dual variable `u_i`, write
//! `w = c_i + rho u_i` and `s = sqrt(w^2 + 4 rho beta)`. Then
//!
//! ```text
//! y_i      = (s - w) / 2        slack, always > 0
//! lambda_i = (s + w) / 2        multiplier estimate, always > 0
//! nu_i     = lambda_i / s       weight in (0, 1)
//! ```
//!
//! so that `lambda_i y_i = rho beta`. Equality rows carry no slack:
//! `y_j = 0`, `lambda_j = rho u_j + c_j`, `nu_j = 1`, `r_j = c_j`.

use nalgebra::{DMatrix, DVector};

use crate::error::{EvalTarget, Result, SolverError};
use crate::model::{Evaluation, Problem};

/// The live parameter triple and the fixed algorithm constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    /// Barrier parameter.
    pub beta: f64,
    /// Scaling parameter multiplying the objective and dual blocks.
    pub rho: f64,
    /// Merit penalty, reset to 1 at every outer iteration.
    pub xi: f64,
    /// Backtracking factor.
    pub delta: f64,
    /// Armijo constant.
    pub sigma: f64,
    /// Termination tolerance on beta and rho.
    pub eps: f64,
    /// Normal-step length bound (condition (i) constant).
    pub eta1: f64,
}

impl Params {
    /// Inner-loop acceptance scale, `theta_1(beta) = 10 beta`.
    pub fn theta1(beta: f64) -> f64 {
        10.0 * beta
    }

    /// `theta_2(rho) = rho`. Part of the parameter family but not used by any update rule.
    pub fn theta2(rho: f64) -> f64 {
        rho
    }

    pub fn rho_beta(&self) -> f64 {
        self.rho * self.beta
    }
}

/// Closed-form `(y_i, lambda_i)` for one inequality.
///
/// Uses the rationalized quotient for whichever root would otherwise
/// cancel, so `lambda_i y_i = rho beta` holds to rounding even when
/// `rho beta` is tiny.
pub fn eval_slack(c: f64, u: f64, beta: f64, rho: f64) -> Result<(f64, f64)> {
    if !c.is_finite() {
        return Err(SolverError::Evaluation { target: EvalTarget::Constraint, index: 0 });
    }
    Ok(slack_pair(c + rho * u, rho * beta))
}

#[inline]
fn slack_pair(w: f64, rb: f64) -> (f64, f64) {
    let s = w.hypot(2.0 * rb.sqrt());
    if w >= 0.0 {
        let lambda = 0.5 * (s + w);
        (rb / lambda, lambda)
    } else {
        let y = 0.5 * (s - w);
        (y, rb / y)
    }
}

/// `c + y` from `(s + c - rho u) / 2`, rationalized when `c - rho u < 0` so
/// that its sign is the sign of `c u + beta`.
#[inline]
fn shifted_residual(c: f64, u: f64, beta: f64, rho: f64) -> f64 {
    let v = c - rho * u;
    let s = (c + rho * u).hypot(2.0 * (rho * beta).sqrt());
    if v >= 0.0 {
        0.5 * (s + v)
    } else {
        2.0 * rho * (c * u + beta) / (s - v)
    }
}

/// Slacks, multiplier estimates, weights and residuals at one `(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackState {
    /// Inequality slacks (length `m_ineq`).
    pub y: DVector<f64>,
    /// Multiplier estimates for all constraints.
    pub lambda: DVector<f64>,
    /// `lambda / (y + lambda)`; 1 on equality rows.
    pub nu: DVector<f64>,
    /// `c + y` on inequalities, `c` on equalities.
    pub r: DVector<f64>,
    pub beta: f64,
    pub rho: f64,
}

impl SlackState {
    /// Build from constraint values `c` (inequalities first) and duals `u`.
    pub fn from_constraints(c: &DVector<f64>, u: &DVector<f64>, m_ineq: usize, beta: f64, rho: f64) -> Result<Self> {
        if u.len() != c.len() {
            return Err(SolverError::Dimension { expected: c.len(), got: u.len() });
        }
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::Evaluation { target: EvalTarget::Constraint, index: i });
        }
        let m = c.len();
        let rb = rho * beta;
        let mut y = DVector::zeros(m_ineq);
        let mut lambda = DVector::zeros(m);
        let mut nu = DVector::zeros(m);
        let mut r = DVector::zeros(m);
        for i in 0..m {
            if i < m_ineq {
                let (yi, li) = slack_pair(c[i] + rho * u[i], rb);
                y[i] = yi;
                lambda[i] = li;
                nu[i] = li / (yi + li);
                r[i] = shifted_residual(c[i], u[i], beta, rho);
            } else {
                lambda[i] = rho * u[i] + c[i];
                nu[i] = 1.0;
                r[i] = c[i];
            }
        }
        Ok(Self { y, lambda, nu, r, beta, rho })
    }

    pub fn m_ineq(&self) -> usize {
        self.y.len()
    }

    /// `y_i + lambda_i` for inequality `i`.
    pub fn scale(&self, i: usize) -> f64 {
        self.y[i] + self.lambda[i]
    }

    /// `rho beta / (y_i + lambda_i)^2`, computed as `nu (1 - nu)`.
    pub fn curvature(&self, i: usize) -> f64 {
        let s = self.scale(i);
        self.nu[i] * (self.y[i] / s)
    }

    /// `rho beta / (y_i + lambda_i)`, computed as `y_i nu_i`.
    pub fn barrier_weight(&self, i: usize) -> f64 {
        self.y[i] * self.nu[i]
    }
}

/// Evaluate the constraints at `x` and build the slack state.
pub fn eval_slack_state(problem: &Problem, x: &[f64], u: &DVector<f64>, beta: f64, rho: f64) -> Result<SlackState> {
    let (_, c) = problem.eval(x)?;
    SlackState::from_constraints(&c, u, problem.m_ineq(), beta, rho)
}

/// `rho grad f + J^T lambda`.
pub fn dual_residual(eval: &Evaluation, lambda: &DVector<f64>, rho: f64) -> DVector<f64> {
    eval.jac.tr_mul(lambda) + &eval.grad * rho
}

/// The two-parameter residual `phi = (rho grad f + J^T lambda ; rho r)`.
pub fn eval_phi(eval: &Evaluation, slack: &SlackState) -> DVector<f64> {
    let dual = dual_residual(eval, &slack.lambda, slack.rho);
    let n = dual.len();
    let mut phi = DVector::zeros(n + slack.r.len());
    phi.rows_mut(0, n).copy_from(&dual);
    phi.rows_mut(n, slack.r.len()).copy_from(&(&slack.r * slack.rho));
    phi
}

/// Dual residual re-evaluated with a down-scaled `rho_scaled = xi rho`.
///
/// Measures convergence towards an infeasible stationary point.
pub fn eval_psi(eval: &Evaluation, u: &DVector<f64>, m_ineq: usize, beta: f64, rho_scaled: f64) -> Result<DVector<f64>> {
    let slack = SlackState::from_constraints(&eval.c, u, m_ineq, beta, rho_scaled)?;
    Ok(dual_residual(eval, &slack.lambda, rho_scaled))
}

/// Partial derivatives of the inequality slacks and multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackDerivatives {
    /// Row `i` is `grad_x y_i`.
    pub dy_dx: DMatrix<f64>,
    /// Row `i` is `grad_x lambda_i`.
    pub dlambda_dx: DMatrix<f64>,
    /// `d y_i / d u_i` (off-diagonal entries are zero).
    pub dy_du: DVector<f64>,
    /// `d lambda_i / d u_i`.
    pub dlambda_du: DVector<f64>,
}

/// Derivatives from the stored `(y, lambda)`; `jac` rows are constraint gradients.
pub fn slack_derivatives(slack: &SlackState, jac: &DMatrix<f64>) -> SlackDerivatives {
    let m = slack.m_ineq();
    let n = jac.ncols();
    let rho = slack.rho;
    let mut dy_dx = DMatrix::zeros(m, n);
    let mut dlambda_dx = DMatrix::zeros(m, n);
    let mut dy_du = DVector::zeros(m);
    let mut dlambda_du = DVector::zeros(m);
    for i in 0..m {
        let s = slack.scale(i);
        let wy = slack.y[i] / s;
        let wl = slack.lambda[i] / s;
        dy_dx.set_row(i, &(jac.row(i) * -wy));
        dlambda_dx.set_row(i, &(jac.row(i) * wl));
        dy_du[i] = -rho * wy;
        dlambda_du[i] = rho * wl;
    }
    SlackDerivatives { dy_dx, dlambda_dx, dy_du, dlambda_du }
}
