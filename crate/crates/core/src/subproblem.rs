//! Step computation: the normal step and the null-space QP.
//!
//! The QP lives in the space `d = (d_x, d_u)` where `d_u` has one entry per
//! inequality. Equality duals have no curvature in the model; their step is
//! recovered afterwards from the QP multipliers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SolverError};
use crate::linalg::{min_norm_solve, nullspace_basis, spd_solve};
use crate::model::Evaluation;
use crate::slack::SlackState;

/// Matrices and vectors defining one QP solve.
#[derive(Debug, Clone)]
pub struct SubproblemData {
    pub n: usize,
    pub m_ineq: usize,
    pub m_eq: usize,
    pub rho: f64,
    pub beta: f64,
    /// `(n + m_ineq) x (m_ineq + m_eq)`; column `i` is `(nu_i grad c_i ; -rho (1 - nu_i) e_i)`
    /// for inequalities and `(grad c_j ; 0)` for equalities.
    pub r_mat: DMatrix<f64>,
    /// `r = c + y`.
    pub residual: DVector<f64>,
    /// Model Hessian over `(d_x, d_u)`.
    pub q_mat: DMatrix<f64>,
    /// `H + sum nu_i grad c_i grad c_i^T` over all constraints.
    pub b_mat: DMatrix<f64>,
    /// Linear part of the reduced model objective.
    pub gradient_term: DVector<f64>,
    pub lambda: DVector<f64>,
    pub nu: DVector<f64>,
    pub y: DVector<f64>,
    pub jac: DMatrix<f64>,
}

impl SubproblemData {
    /// Dimension of the QP variable `(d_x, d_u_ineq)`.
    pub fn dim(&self) -> usize {
        self.n + self.m_ineq
    }

    /// Scaling of `(d_x, d_u)` under which a dual step counts as `rho d_u`.
    pub fn variable_scale(&self) -> DVector<f64> {
        let mut scale = DVector::from_element(self.dim(), 1.0);
        scale.rows_mut(self.n, self.m_ineq).fill(1.0 / self.rho);
        scale
    }

    /// `r + R^T d`.
    pub fn linearized_residual(&self, d: &DVector<f64>) -> DVector<f64> {
        &self.residual + self.r_mat.tr_mul(d)
    }

    /// `||r|| - ||r + R^T d||`, evaluated without cancellation when `R^T d`
    /// is small next to `r`.
    pub fn residual_decrease(&self, d: &DVector<f64>) -> f64 {
        let rd = self.r_mat.tr_mul(d);
        let before = self.residual.norm();
        let after = (&self.residual + &rd).norm();
        let denom = before + after;
        if denom == 0.0 {
            return 0.0;
        }
        -(2.0 * self.residual.dot(&rd) + rd.norm_squared()) / denom
    }

    /// `q_hat(d)`.
    pub fn model_value(&self, d: &DVector<f64>) -> f64 {
        self.gradient_term.dot(d) + 0.5 * d.dot(&(&self.q_mat * d))
    }

    pub fn model_gradient(&self, d: &DVector<f64>) -> DVector<f64> {
        &self.gradient_term + &self.q_mat * d
    }
}

/// Assemble `R`, `Q`, `B` and the model gradient at the current iterate.
pub fn build_subproblem(eval: &Evaluation, slack: &SlackState, h: &DMatrix<f64>) -> Result<SubproblemData> {
    let n = eval.grad.len();
    let m = slack.r.len();
    let m_ineq = slack.m_ineq();
    let m_eq = m - m_ineq;
    if h.nrows() != n || h.ncols() != n {
        return Err(SolverError::Dimension { expected: n, got: h.nrows() });
    }
    if eval.jac.nrows() != m {
        return Err(SolverError::Dimension { expected: m, got: eval.jac.nrows() });
    }
    let rho = slack.rho;
    let dim = n + m_ineq;

    let mut r_mat = DMatrix::zeros(dim, m);
    let mut q_mat = DMatrix::zeros(dim, dim);
    let mut b_mat = h.clone();
    let mut gradient_term = DVector::zeros(dim);
    gradient_term.rows_mut(0, n).copy_from(&(&eval.grad * rho));
    q_mat.view_mut((0, 0), (n, n)).copy_from(h);

    for i in 0..m {
        let grad_c = eval.jac.row(i).transpose();
        let nu = slack.nu[i];
        b_mat.ger(nu, &grad_c, &grad_c, 1.0);
        if i < m_ineq {
            let one_minus_nu = slack.y[i] / slack.scale(i);
            r_mat.view_mut((0, i), (n, 1)).copy_from(&(&grad_c * nu));
            r_mat[(n + i, i)] = -rho * one_minus_nu;

            let curv = slack.curvature(i);
            let weight = slack.barrier_weight(i);
            {
                let mut qxx = q_mat.view_mut((0, 0), (n, n));
                qxx.ger(curv, &grad_c, &grad_c, 1.0);
            }
            for k in 0..n {
                q_mat[(k, n + i)] = rho * curv * grad_c[k];
                q_mat[(n + i, k)] = rho * curv * grad_c[k];
            }
            q_mat[(n + i, n + i)] = rho * rho * curv;

            {
                let mut gx = gradient_term.rows_mut(0, n);
                gx.axpy(weight, &grad_c, 1.0);
            }
            gradient_term[n + i] = rho * weight;
        } else {
            r_mat.view_mut((0, i), (n, 1)).copy_from(&grad_c);
        }
    }

    Ok(SubproblemData {
        n,
        m_ineq,
        m_eq,
        rho,
        beta: slack.beta,
        r_mat,
        residual: slack.r.clone(),
        q_mat,
        b_mat,
        gradient_term,
        lambda: slack.lambda.clone(),
        nu: slack.nu.clone(),
        y: slack.y.clone(),
        jac: eval.jac.clone(),
    })
}

/// How the normal step is constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalStepRule {
    /// Steepest-descent step on `||r + R^T d||^2` with exact line minimization.
    Cauchy,
    /// Minimum-norm Gauss-Newton step `-R (R^T R)^+ r`.
    #[serde(rename = "gauss_newton")]
    GaussNewton,
    /// Levenberg-Marquardt step `-R (R^T R + tau I)^{-1} r` with `tau = ||r||`.
    #[default]
    Levenberg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalStepKind {
    Zero,
    Cauchy,
    GaussNewton,
    Levenberg,
}

/// A normal step together with the quantities needed to audit the
/// sufficient-decrease conditions
/// (i) `||d|| <= eta1 ||R r||` and (ii) `||r|| - ||r + R^T d|| >= eta2 ||R r||^2 / ||r||`.
#[derive(Debug, Clone)]
pub struct NormalStep {
    pub d: DVector<f64>,
    pub kind: NormalStepKind,
    /// Step length used for the Cauchy point.
    pub cauchy_t: f64,
    /// `||R r||`.
    pub grad_norm: f64,
    /// `||r||`.
    pub residual_norm: f64,
    /// `||r + R^T d||`.
    pub residual_after: f64,
    /// Bound in condition (i): the step-length cap.
    pub eta1: f64,
    /// Constant guaranteed in condition (ii): half the Cauchy step length.
    pub eta2: f64,
    /// `R r` vanished while `r` did not.
    pub rank_deficient: bool,
}

impl NormalStep {
    pub fn eta1_achieved(&self) -> f64 {
        if self.grad_norm > 0.0 {
            self.d.norm() / self.grad_norm
        } else {
            0.0
        }
    }

    pub fn eta2_achieved(&self) -> f64 {
        if self.grad_norm > 0.0 {
            (self.residual_norm - self.residual_after) * self.residual_norm / (self.grad_norm * self.grad_norm)
        } else {
            f64::INFINITY
        }
    }

    /// Both conditions hold with the recorded constants (relative slack `tol`).
    pub fn satisfies_conditions(&self, tol: f64) -> bool {
        if self.residual_norm == 0.0 || self.grad_norm == 0.0 {
            return self.d.norm() == 0.0;
        }
        let cond_i = self.d.norm() <= self.eta1 * self.grad_norm * (1.0 + tol);
        let decrease = self.residual_norm - self.residual_after;
        let required = self.eta2 * self.grad_norm * self.grad_norm / self.residual_norm;
        let cond_ii = decrease >= required * (1.0 - tol) - tol * self.residual_norm * f64::EPSILON;
        cond_i && cond_ii
    }
}

/// Residual-reducing step in the range of `R`.
///
/// `eta1` caps the Cauchy step length (`t <= eta1`) and bounds the length
/// of any step returned. The step selected by `rule` is built for the
/// variable `d / scale` and replaces the plain Cauchy step only when it is
/// no longer than `eta1 ||R r||` and leaves a linearized residual no larger.
/// `r = 0` gives `d = 0`.
pub fn normal_step(r_mat: &DMatrix<f64>, r: &DVector<f64>, eta1: f64, rule: NormalStepRule, scale: &DVector<f64>) -> NormalStep {
    let dim = r_mat.nrows();
    let residual_norm = r.norm();
    let zero = |grad_norm: f64, rank_deficient: bool| NormalStep {
        d: DVector::zeros(dim),
        kind: NormalStepKind::Zero,
        cauchy_t: 0.0,
        grad_norm,
        residual_norm,
        residual_after: residual_norm,
        eta1,
        eta2: 0.0,
        rank_deficient,
    };
    if residual_norm == 0.0 {
        return zero(0.0, false);
    }
    let g = r_mat * r;
    let grad_norm = g.norm();
    let rtg = r_mat.tr_mul(&g);
    let rtg_sq = rtg.norm_squared();
    if grad_norm <= f64::EPSILON * r_mat.norm() * residual_norm || rtg_sq == 0.0 {
        return zero(grad_norm, true);
    }

    let t = (grad_norm * grad_norm / rtg_sq).min(eta1);
    let d_cauchy = &g * -t;
    let after_cauchy = (r - &rtg * t).norm();
    let cauchy = NormalStep {
        d: d_cauchy,
        kind: NormalStepKind::Cauchy,
        cauchy_t: t,
        grad_norm,
        residual_norm,
        residual_after: after_cauchy,
        eta1,
        eta2: 0.5 * t,
        rank_deficient: false,
    };
    let radius = eta1 * grad_norm;
    let accept = |candidate: DVector<f64>, kind: NormalStepKind| -> Option<NormalStep> {
        let after = (r + r_mat.tr_mul(&candidate)).norm();
        (after.is_finite() && after <= cauchy.residual_after && candidate.norm() <= radius * (1.0 + 1e-12)).then(|| NormalStep {
            d: candidate,
            kind,
            residual_after: after,
            ..cauchy.clone()
        })
    };

    // Candidates are computed for the scaled variable d^ = d / scale.
    let r_hat = DMatrix::from_fn(dim, r_mat.ncols(), |i, j| scale[i] * r_mat[(i, j)]);
    let unscale = |d_hat: DVector<f64>| d_hat.component_mul(scale);
    let candidate = match rule {
        NormalStepRule::Cauchy => {
            let g_hat = &r_hat * r;
            let rtg_hat = r_hat.tr_mul(&g_hat);
            let denom = rtg_hat.norm_squared();
            if denom == 0.0 {
                return cauchy;
            }
            let t_hat = g_hat.norm_squared() / denom;
            Some((unscale(&g_hat * -t_hat), NormalStepKind::Cauchy))
        }
        NormalStepRule::Levenberg => {
            let tau = residual_norm;
            let mut gram = r_hat.tr_mul(&r_hat);
            for i in 0..gram.nrows() {
                gram[(i, i)] += tau;
            }
            spd_solve(&gram, r).ok().map(|sol| (unscale(&r_hat * sol.x * -1.0), NormalStepKind::Levenberg))
        }
        NormalStepRule::GaussNewton => min_norm_solve(&r_hat, &(-r)).ok().map(|d| (unscale(d), NormalStepKind::GaussNewton)),
    };
    candidate.and_then(|(d, kind)| accept(d, kind)).unwrap_or(cauchy)
}

/// Solution of the null-space QP and its recovered multipliers.
#[derive(Debug, Clone)]
pub struct StepResult {
    /// Full QP variable `(d_x, d_u_ineq)`.
    pub d: DVector<f64>,
    pub dx: DVector<f64>,
    /// Dual step for every constraint (equality entries recovered from `g`).
    pub du: DVector<f64>,
    /// QP multiplier, one per constraint.
    pub g: DVector<f64>,
    pub normal: NormalStep,
    /// `||r|| - ||r + R^T d||`.
    pub residual_decrease: f64,
    /// `d^T Q d`.
    pub curvature: f64,
    /// `q_hat(d)`.
    pub model_value: f64,
    /// Linear part `gradient_term^T d`.
    pub linear_term: f64,
    /// `||W^T grad q_hat(d)||`.
    pub projected_gradient: f64,
    /// `||R^T d - R^T d^c||`.
    pub constraint_error: f64,
    /// Diagonal shift needed by the reduced Hessian factorization.
    pub reduced_shift: f64,
    pub nullspace_dim: usize,
}

/// Minimize `q_hat(d)` subject to `R^T d = R^T d^c`.
pub fn solve_nullspace_qp(sub: &SubproblemData, normal: NormalStep) -> Result<StepResult> {
    let n = sub.n;
    let m_ineq = sub.m_ineq;
    let m = m_ineq + sub.m_eq;
    let rho = sub.rho;
    let dc = normal.d.clone();
    if dc.len() != sub.dim() {
        return Err(SolverError::Dimension { expected: sub.dim(), got: dc.len() });
    }

    let scale = sub.variable_scale();
    let r_hat = DMatrix::from_fn(sub.dim(), m, |i, j| scale[i] * sub.r_mat[(i, j)]);
    let mut w = nullspace_basis(&r_hat);
    for (i, s) in scale.iter().enumerate() {
        w.row_mut(i).scale_mut(*s);
    }
    let grad_c = sub.model_gradient(&dc);
    let (d, reduced_shift) = if w.ncols() > 0 {
        let reduced = w.tr_mul(&(&sub.q_mat * &w));
        let rhs = -w.tr_mul(&grad_c);
        let sol = spd_solve(&reduced, &rhs).map_err(|e| SolverError::Subproblem(e.to_string()))?;
        (&dc + &w * &sol.x, sol.shift)
    } else {
        (dc.clone(), 0.0)
    };
    let grad_d = sub.model_gradient(&d);
    let projected_gradient = if w.ncols() > 0 { w.tr_mul(&grad_d).norm() } else { 0.0 };

    let dx = d.rows(0, n).clone_owned();
    let mut du = DVector::zeros(m);
    du.rows_mut(0, m_ineq).copy_from(&d.rows(n, m_ineq));

    // Inequality multipliers from the dual-block optimality condition:
    // g_i = lambda_i (1 + (grad c_i^T d_x + rho d_u_i) / (y_i + lambda_i)).
    let mut g = DVector::zeros(m);
    let jd = &sub.jac * &dx;
    for i in 0..m_ineq {
        let s = sub.y[i] + sub.lambda[i];
        let t = jd[i] + rho * du[i];
        g[i] = sub.lambda[i] * (1.0 + t / s);
    }

    if sub.m_eq > 0 {
        // Least squares on the stationarity block for the equality multipliers.
        let mut v = grad_d.rows(0, n).clone_owned();
        for i in 0..m_ineq {
            v.axpy(sub.nu[i] * g[i], &sub.jac.row(i).transpose(), 1.0);
        }
        let je = sub.jac.rows(m_ineq, sub.m_eq).clone_owned();
        let gram = &je * je.transpose();
        let sol = spd_solve(&gram, &(-(&je * v))).map_err(|e| SolverError::Subproblem(e.to_string()))?;
        for j in 0..sub.m_eq {
            let row = m_ineq + j;
            g[row] = sol.x[j];
            du[row] = (g[row] - sub.lambda[row] - jd[row]) / rho;
        }
    }

    let residual_decrease = sub.residual_decrease(&d);
    let curvature = d.dot(&(&sub.q_mat * &d));
    let linear_term = sub.gradient_term.dot(&d);
    let constraint_error = sub.r_mat.tr_mul(&(&d - &dc)).norm();

    Ok(StepResult {
        d,
        dx,
        du,
        g,
        normal,
        residual_decrease,
        curvature,
        model_value: linear_term + 0.5 * curvature,
        linear_term,
        projected_gradient,
        constraint_error,
        reduced_shift,
        nullspace_dim: w.ncols(),
    })
}
