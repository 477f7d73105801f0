//! Outer and inner loops of the interior-point method.
//!
//! The outer loop owns the barrier parameter `beta` and the scaling
//! parameter `rho`. Each inner loop runs with both fixed and ends when one of
//! them can be reduced: `beta` once the residual is small relative to
//! `rho beta`, `rho` once the merit penalty `xi` has collapsed.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bfgs::HessianState;
use crate::classify::{classify_termination, Classification, ParamTest, TerminationKind};
use crate::error::{Result, SolverError};
use crate::merit::{dual_safeguard, line_search, merit_value, pi_value, update_xi, XiCaps};
use crate::model::{Evaluation, Problem};
use crate::slack::{dual_residual, eval_phi, eval_psi, SlackState};
use crate::subproblem::{build_subproblem, normal_step, solve_nullspace_qp, NormalStepKind, NormalStepRule};

/// `beta` and `rho` never drop below this fraction of the tolerance `eps`.
pub const FINAL_PARAM_RATIO: f64 = 0.1;

/// An inner step counts as stagnant when both the linearized residual and the
/// merit fall by less than this fraction.
pub const STALL_RATIO: f64 = 1e-4;

/// Predicted merit changes below this multiple of the merit are rounding noise.
pub const ROUNDOFF_RATIO: f64 = 100.0 * f64::EPSILON;

/// After this many consecutive stagnant steps `xi` is halved, or, once `rho`
/// has reached its floor and `||psi||` stops halving, the last inner loop ends.
pub const STALL_STREAK: usize = 3;

/// Algorithm constants; every field can be overridden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub beta0: f64,
    /// Backtracking factor.
    pub delta: f64,
    /// Armijo constant.
    pub sigma: f64,
    /// Termination tolerance for `beta` and `rho`.
    pub eps: f64,
    /// Budget of QP solves over the whole run.
    pub max_total_iterations: usize,
    pub max_inner_per_outer: usize,
    /// Step-length cap for the normal step.
    pub normal_step_cap: f64,
    pub normal_step_rule: NormalStepRule,
    /// Terminal infeasibility (inf-norm) above which a `rho`-terminated run is infeasible.
    pub feasibility_tol: f64,
    /// Constraints with `c_i >= -active_tol` count as active for the singular test.
    pub active_tol: f64,
    /// Keep one record per inner iteration in the report.
    pub record_inner: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            beta0: 0.1,
            delta: 0.5,
            sigma: 1e-4,
            eps: 1e-8,
            max_total_iterations: 1000,
            max_inner_per_outer: 200,
            normal_step_cap: 1e4,
            normal_step_rule: NormalStepRule::Levenberg,
            feasibility_tol: 1e-3,
            active_tol: 1e-3,
            record_inner: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SolverError::InvalidConfig(msg.to_string()));
        if !(self.sigma > 0.0 && self.sigma < 0.5) {
            return bad("sigma must lie in (0, 1/2)");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return bad("beta0 must be positive and finite");
        }
        if !(self.normal_step_cap > 0.0) {
            return bad("normal step cap must be positive");
        }
        if !(self.feasibility_tol >= 0.0 && self.active_tol >= 0.0) {
            return bad("classification tolerances must be nonnegative");
        }
        if self.max_total_iterations == 0 || self.max_inner_per_outer == 0 {
            return bad("iteration limits must be positive");
        }
        Ok(())
    }
}

/// One line of the outer-iteration table.
///
/// Row 0 is the starting point. Row `l >= 1` is the point that ended inner
/// loop `l - 1`, its residuals measured with that loop's parameters, next to
/// the parameters `(beta_l, rho_l)` chosen for loop `l` and the number `k` of
/// inner iterations spent. The final row carries the terminal point and no
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRow {
    pub l: usize,
    pub f: f64,
    pub v: f64,
    pub phi_inf: f64,
    pub psi_inf: f64,
    pub beta: Option<f64>,
    pub rho: Option<f64>,
    pub k: Option<usize>,
}

/// Diagnostics of one inner iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerRecord {
    pub l: usize,
    pub k: usize,
    pub beta: f64,
    pub rho: f64,
    pub xi_before: f64,
    pub xi_after: f64,
    pub xi_capped: bool,
    pub stalled: bool,
    /// Merit at the old point, with the updated `xi`.
    pub merit_before: f64,
    /// Merit at the new point after the safeguard, same `xi`.
    pub merit_after: f64,
    pub pi: f64,
    pub alpha: f64,
    pub backtracks: usize,
    /// Smallest inequality residual `c_i + y_i` after the safeguard.
    pub r_min: f64,
    pub normal_kind: NormalStepKind,
    pub normal_norm: f64,
    pub normal_grad_norm: f64,
    pub normal_residual: f64,
    pub normal_residual_after: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub rank_deficient: bool,
    /// `||r|| - ||r + R^T d||` for the full step.
    pub residual_decrease: f64,
    pub reduced_shift: f64,
    pub f: f64,
    pub v: f64,
    pub phi_inf: f64,
    pub psi_inf: f64,
    pub x: Vec<f64>,
}

/// Final state of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub kind: TerminationKind,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub f: f64,
    pub v: f64,
    pub phi_inf: f64,
    pub psi_inf: f64,
    pub beta: f64,
    pub rho: f64,
    pub classification: Classification,
    /// Subsystem and message when the run ended in a numerical failure.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub problem: String,
    pub config: RunConfig,
    pub rows: Vec<OuterRow>,
    pub inner: Vec<InnerRecord>,
    pub terminal: Terminal,
    /// Number of QP solves.
    pub total_iterations: usize,
    pub hessian_resets: usize,
}

/// `rho_0 = min(100, max(1, v_0 / |f_0|))`, with `|f_0| < 1e-12` treated as 1.
pub fn initial_rho(f0: f64, v0: f64) -> f64 {
    let denom = if f0.abs() < 1e-12 { 1.0 } else { f0.abs() };
    (v0 / denom).clamp(1.0, 100.0)
}

/// Primal-dual iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
}

/// Starting parameters, iterate and Hessian for `problem`.
pub fn initialize(problem: &Problem, config: &RunConfig) -> Result<(f64, f64, Iterate, HessianState)> {
    config.validate()?;
    let x = DVector::from_column_slice(problem.x0());
    let (f0, c0) = problem.eval(x.as_slice())?;
    let rho = initial_rho(f0, problem.infeasibility(&c0));
    let it = Iterate { x, u: DVector::zeros(problem.m()) };
    Ok((config.beta0, rho, it, HessianState::scaled_identity(problem.n(), rho)))
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// State evaluated at one point for fixed parameters.
struct Point {
    eval: Evaluation,
    slack: SlackState,
}

impl Point {
    fn new(problem: &Problem, x: &DVector<f64>, u: &DVector<f64>, beta: f64, rho: f64) -> Result<Self> {
        let eval = problem.evaluate(x.as_slice())?;
        let slack = SlackState::from_constraints(&eval.c, u, problem.m_ineq(), beta, rho)?;
        Ok(Self { eval, slack })
    }
}

enum LoopEnd {
    /// Parameters were updated; the outer loop continues.
    Reduced,
    /// The last inner loop at the terminal parameters is done.
    Finished,
    Limit,
    Failure(SolverError),
}

/// Run the method on `problem`.
pub fn solve(problem: &Problem, config: &RunConfig) -> Result<SolveReport> {
    let (mut beta, mut rho, mut it, mut hess) = initialize(problem, config)?;
    let m_ineq = problem.m_ineq();

    let start = Point::new(problem, &it.x, &it.u, beta, rho)?;
    let phi0 = eval_phi(&start.eval, &start.slack);
    let mut rows = vec![OuterRow {
        l: 0,
        f: start.eval.f,
        v: problem.infeasibility(&start.eval.c),
        phi_inf: inf_norm(&phi0),
        psi_inf: inf_norm(&dual_residual(&start.eval, &start.slack.lambda, rho)),
        beta: Some(beta),
        rho: Some(rho),
        k: None,
    }];
    let mut inner_log = Vec::new();
    let mut total = 0usize;
    let mut last_xi = 1.0;
    let mut end_kind = None;
    let mut failure = None;
    let mut last_test = None;

    let mut final_pass = !(beta > config.eps && rho > config.eps);
    loop {
        let l = rows.len() - 1;
        let mut xi = 1.0;
        let mut k = 0usize;
        let mut stall_streak = 0usize;
        let mut prev_psi = f64::INFINITY;

        let outcome = loop {
            if total >= config.max_total_iterations || k >= config.max_inner_per_outer {
                break if final_pass { LoopEnd::Finished } else { LoopEnd::Limit };
            }
            let point = match Point::new(problem, &it.x, &it.u, beta, rho) {
                Ok(p) => p,
                Err(e) => break LoopEnd::Failure(e),
            };
            let sub = match build_subproblem(&point.eval, &point.slack, &hess.h) {
                Ok(s) => s,
                Err(e) => break LoopEnd::Failure(e),
            };
            let scale = sub.variable_scale();
            let normal = normal_step(&sub.r_mat, &sub.residual, config.normal_step_cap, config.normal_step_rule, &scale);
            let step = match solve_nullspace_qp(&sub, normal) {
                Ok(s) => s,
                Err(e) => break LoopEnd::Failure(e),
            };
            total += 1;
            k += 1;

            let piv = pi_value(&sub, &step.d, xi);
            let caps = XiCaps { g_inf: step.g.amax(), rho_u_max: it.u.iter().map(|v| rho * v).fold(f64::NEG_INFINITY, f64::max) };
            let xu = update_xi(xi, piv.linear, piv.delta, step.curvature, config.delta, caps);
            let xi_before = xi;
            xi = xu.xi;
            let pi = xi * piv.linear - piv.delta;
            let merit_before = merit_value(point.eval.f, &point.slack, xi);

            // Predicted decrease lost in the rounding of the merit value.
            let roundoff = pi.abs() <= ROUNDOFF_RATIO * merit_before.abs().max(1.0);
            let no_progress = xu.stalled || !(pi < 0.0) || step.d.norm() == 0.0 || roundoff;
            let (next, alpha, backtracks, merit_after) = if no_progress {
                if !xu.stalled && xi == xi_before {
                    xi *= 0.5;
                }
                (point, 0.0, 0, merit_before)
            } else {
                let ls = match line_search(
                    problem,
                    &it.x,
                    &it.u,
                    &step.dx,
                    &step.du,
                    xi,
                    beta,
                    rho,
                    config.sigma,
                    config.delta,
                    merit_before,
                    pi,
                ) {
                    Ok(ls) => ls,
                    Err(e) => break LoopEnd::Failure(e),
                };
                let (_, c_new) = match problem.eval(ls.x.as_slice()) {
                    Ok(v) => v,
                    Err(e) => break LoopEnd::Failure(e),
                };
                let u_new = dual_safeguard(&c_new, &ls.u_hat, beta, m_ineq);
                let next = match Point::new(problem, &ls.x, &u_new, beta, rho) {
                    Ok(p) => p,
                    Err(e) => break LoopEnd::Failure(e),
                };
                let merit_after = merit_value(next.eval.f, &next.slack, xi);

                // Curvature pair on grad_x L with the multipliers of the new point.
                let s = &ls.x - &it.x;
                let yv = dual_residual(&next.eval, &next.slack.lambda, rho) - dual_residual(&point.eval, &next.slack.lambda, rho);
                it = Iterate { x: ls.x, u: u_new };
                hess.update(&s, &yv, rho);
                (next, ls.alpha, ls.backtracks, merit_after)
            };

            let phi = eval_phi(&next.eval, &next.slack);
            let phi_inf = inf_norm(&phi);
            let psi = match eval_psi(&next.eval, &it.u, m_ineq, beta, xi * rho) {
                Ok(p) => p,
                Err(e) => break LoopEnd::Failure(e),
            };
            let psi_inf = inf_norm(&psi);
            let v = problem.infeasibility(&next.eval.c);
            last_xi = xi;
            let stagnant = !no_progress
                && step.residual_decrease < STALL_RATIO * sub.residual.norm()
                && merit_before - merit_after < STALL_RATIO * merit_before.abs();
            stall_streak = if stagnant { stall_streak + 1 } else { 0 };
            let dual_stalled = psi_inf > 0.5 * prev_psi;
            prev_psi = psi_inf;

            if config.record_inner {
                let r_min = next.slack.r.rows(0, m_ineq).iter().copied().fold(f64::INFINITY, f64::min);
                inner_log.push(InnerRecord {
                    l,
                    k,
                    beta,
                    rho,
                    xi_before,
                    xi_after: xi,
                    xi_capped: xu.capped,
                    stalled: xu.stalled,
                    merit_before,
                    merit_after,
                    pi,
                    alpha,
                    backtracks,
                    r_min,
                    normal_kind: step.normal.kind,
                    normal_norm: step.normal.d.norm(),
                    normal_grad_norm: step.normal.grad_norm,
                    normal_residual: step.normal.residual_norm,
                    normal_residual_after: step.normal.residual_after,
                    eta1: step.normal.eta1,
                    eta2: step.normal.eta2,
                    rank_deficient: step.normal.rank_deficient,
                    residual_decrease: step.residual_decrease,
                    reduced_shift: step.reduced_shift,
                    f: next.eval.f,
                    v,
                    phi_inf,
                    psi_inf,
                    x: it.x.iter().copied().collect(),
                });
            }

            // Parameter update.
            let floor = config.eps * FINAL_PARAM_RATIO;
            let stalled_out = stall_streak >= STALL_STREAK && dual_stalled && rho <= floor;
            if final_pass && (roundoff || stalled_out) {
                break LoopEnd::Finished;
            }
            let beta_test = phi_inf <= 10.0 * rho * beta;
            let rho_test = xi <= 0.1 * rho.sqrt().min(1.0);
            if beta_test {
                last_test = Some(ParamTest::Beta);
                if final_pass {
                    break LoopEnd::Finished;
                }
                beta = (0.1 * beta).min(phi_inf.powf(1.5)).max(floor);
            } else if rho_test {
                last_test = Some(ParamTest::Rho);
                if rho <= floor {
                    break LoopEnd::Finished;
                }
                let mut next_rho = xi * rho;
                if step.residual_decrease < 0.01 * sub.residual.norm() {
                    let lam_inf = next.slack.lambda.amax().max(1e-12);
                    next_rho = next_rho.min(psi_inf * psi_inf).min((rho / lam_inf).powi(2));
                }
                rho = next_rho.max(floor);
            } else {
                if stall_streak >= STALL_STREAK && rho > floor {
                    xi *= 0.5;
                }
                continue;
            }
            final_pass = !(beta > config.eps && rho > config.eps);
            rows.push(OuterRow { l: l + 1, f: next.eval.f, v, phi_inf, psi_inf, beta: Some(beta), rho: Some(rho), k: Some(k) });
            break LoopEnd::Reduced;
        };

        match outcome {
            LoopEnd::Reduced => {}
            LoopEnd::Finished => break,
            LoopEnd::Limit => {
                end_kind = Some(TerminationKind::IterationLimit);
                break;
            }
            LoopEnd::Failure(e) => {
                end_kind = Some(TerminationKind::NumericalFailure);
                failure = Some(e.to_string());
                break;
            }
        }
    }

    let fin = Point::new(problem, &it.x, &it.u, beta, rho)?;
    let phi_inf = inf_norm(&eval_phi(&fin.eval, &fin.slack));
    let psi_inf = inf_norm(&eval_psi(&fin.eval, &it.u, m_ineq, beta, last_xi * rho)?);
    let v = problem.infeasibility(&fin.eval.c);
    rows.push(OuterRow { l: rows.len(), f: fin.eval.f, v, phi_inf, psi_inf, beta: None, rho: None, k: None });

    let classification = classify_termination(problem, &fin.eval, beta, rho, last_test, config);
    let kind = end_kind.unwrap_or(classification.kind);

    Ok(SolveReport {
        problem: problem.name().to_string(),
        config: config.clone(),
        rows,
        inner: inner_log,
        terminal: Terminal {
            kind,
            x: it.x.iter().copied().collect(),
            u: it.u.iter().copied().collect(),
            f: fin.eval.f,
            v,
            phi_inf,
            psi_inf,
            beta,
            rho,
            classification,
            failure,
        },
        total_iterations: total,
        hessian_resets: hess.resets,
    })
}
