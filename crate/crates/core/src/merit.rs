//! Merit function, penalty update, backtracking line search and the dual safeguard.

use nalgebra::DVector;

use crate::error::{Result, SolverError};
use crate::model::Problem;
use crate::slack::SlackState;
use crate::subproblem::SubproblemData;

/// Smallest merit penalty before the inner loop is declared stalled.
pub const XI_FLOOR: f64 = 1e-16;

/// Largest number of step halvings tried by [`line_search`].
pub const MAX_BACKTRACKS: usize = 50;

/// `xi rho f - xi rho beta sum ln y_i + ||r||` from an existing slack state.
pub fn merit_value(f: f64, slack: &SlackState, xi: f64) -> f64 {
    let log_sum: f64 = slack.y.iter().map(|y| y.ln()).sum();
    xi * slack.rho * f - xi * slack.rho * slack.beta * log_sum + slack.r.norm()
}

/// Merit function at `(x, u)`.
pub fn merit(problem: &Problem, x: &[f64], u: &DVector<f64>, beta: f64, rho: f64, xi: f64) -> Result<f64> {
    let (f, c) = problem.eval(x)?;
    let slack = SlackState::from_constraints(&c, u, problem.m_ineq(), beta, rho)?;
    Ok(merit_value(f, &slack, xi))
}

/// Pieces of the directional-derivative surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiValue {
    /// `xi D - Delta`.
    pub pi: f64,
    /// Coefficient of `xi`: the linear model term along `d`.
    pub linear: f64,
    /// `||r|| - ||r + R^T d||`.
    pub delta: f64,
}

/// `pi = xi D + ||r + R^T d|| - ||r||` for a QP-space direction `d`.
pub fn pi_value(sub: &SubproblemData, d: &DVector<f64>, xi: f64) -> PiValue {
    let linear = sub.gradient_term.dot(d);
    let delta = sub.residual_decrease(d);
    PiValue { pi: xi * linear - delta, linear, delta }
}

/// Caps on the merit penalty coming from the size of the multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct XiCaps {
    /// `||g||_inf` of the QP multiplier.
    pub g_inf: f64,
    /// `max_i rho u_i` over all duals.
    pub rho_u_max: f64,
}

impl XiCaps {
    /// The tightest cap, or infinity when neither applies.
    pub fn bound(&self) -> f64 {
        let mut cap = f64::INFINITY;
        if self.g_inf > 0.0 {
            cap = cap.min(0.1 / self.g_inf);
        }
        if self.rho_u_max > 0.0 {
            cap = cap.min(1.0 / self.rho_u_max.powf(1.1));
        }
        cap
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiUpdate {
    pub xi: f64,
    /// A multiplier cap forced the value down.
    pub capped: bool,
    /// The value hit [`XI_FLOOR`].
    pub stalled: bool,
}

/// Next merit penalty.
///
/// Keeps `xi` when `xi (D + dQd/2) <= delta_param * Delta` already holds,
/// otherwise drops to `min(xi/2, 0.9 delta_param Delta / (D + dQd/2))`.
/// The multiplier caps are applied afterwards; any change is at least a halving.
pub fn update_xi(xi_k: f64, linear: f64, delta: f64, dqd: f64, delta_param: f64, caps: XiCaps) -> XiUpdate {
    let model = linear + 0.5 * dqd;
    let mut xi = if model <= 0.0 || xi_k * model <= delta_param * delta {
        xi_k
    } else {
        (0.5 * xi_k).min(0.9 * delta_param * delta.max(0.0) / model)
    };
    let cap = caps.bound();
    let mut capped = false;
    if xi > cap {
        xi = cap.min(0.5 * xi_k);
        capped = true;
    }
    let stalled = xi < XI_FLOOR;
    if stalled {
        xi = XI_FLOOR.min(xi_k);
    }
    XiUpdate { xi, capped, stalled }
}

/// Generic Armijo backtracking on a scalar merit path.
///
/// `trial(alpha)` returns the merit value at step `alpha`, or `None` when the
/// trial point cannot be evaluated (treated as a rejection). Returns
/// `(alpha, value, backtracks)`.
pub fn backtrack<F>(mut trial: F, phi0: f64, pi: f64, sigma: f64, delta: f64) -> Result<(f64, f64, usize)>
where
    F: FnMut(f64) -> Option<f64>,
{
    let mut alpha = 1.0;
    for j in 0..=MAX_BACKTRACKS {
        if let Some(value) = trial(alpha) {
            if value.is_finite() && value - phi0 <= sigma * alpha * pi {
                return Ok((alpha, value, j));
            }
        }
        alpha *= delta;
    }
    Err(SolverError::LineSearch { backtracks: MAX_BACKTRACKS, pi })
}

/// Accepted line-search step.
#[derive(Debug, Clone)]
pub struct LineSearchResult {
    pub alpha: f64,
    pub x: DVector<f64>,
    /// Duals before the safeguard.
    pub u_hat: DVector<f64>,
    /// Merit at the accepted point (before the safeguard).
    pub merit: f64,
    pub backtracks: usize,
}

/// Backtracking line search on the merit function along `(dx, du)`.
#[allow(clippy::too_many_arguments)]
pub fn line_search(
    problem: &Problem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dx: &DVector<f64>,
    du: &DVector<f64>,
    xi: f64,
    beta: f64,
    rho: f64,
    sigma: f64,
    delta: f64,
    merit0: f64,
    pi: f64,
) -> Result<LineSearchResult> {
    let (alpha, value, backtracks) = backtrack(
        |alpha| {
            let xt = x + dx * alpha;
            let ut = u + du * alpha;
            merit(problem, xt.as_slice(), &ut, beta, rho, xi).ok()
        },
        merit0,
        pi,
        sigma,
        delta,
    )?;
    Ok(LineSearchResult { alpha, x: x + dx * alpha, u_hat: u + du * alpha, merit: value, backtracks })
}

/// Cap inequality duals so that `c_i + y_i >= 0` holds at the new point.
///
/// `u_i = min(u_hat_i, -beta / c_i)` when `c_i < 0`; other rows are copied.
/// The bound is rounded down until `c_i u_i + beta >= 0` holds exactly.
pub fn dual_safeguard(c_new: &DVector<f64>, u_hat: &DVector<f64>, beta: f64, m_ineq: usize) -> DVector<f64> {
    let mut u = u_hat.clone();
    for i in 0..m_ineq {
        let c = c_new[i];
        if c < 0.0 {
            let mut bound = -beta / c;
            while c * bound + beta < 0.0 {
                bound = bound.next_down();
            }
            u[i] = u[i].min(bound);
        }
    }
    u
}
