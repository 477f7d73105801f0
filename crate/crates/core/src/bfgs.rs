//! Powell-damped BFGS updates of the Hessian approximation.

use nalgebra::{DMatrix, DVector};

/// Smallest eigenvalue accepted after an update before falling back to a reset.
pub const MIN_EIGENVALUE: f64 = 1e-12;

/// Hessian approximation plus diagnostics about the last update.
#[derive(Debug, Clone)]
pub struct HessianState {
    pub h: DMatrix<f64>,
    /// Damping factor of the last update (1 means undamped).
    pub last_theta: f64,
    /// `s^T y~` of the last accepted pair.
    pub last_curvature: f64,
    pub resets: usize,
}

impl HessianState {
    /// `scale * I`.
    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        Self { h: DMatrix::identity(n, n) * scale, last_theta: 1.0, last_curvature: 0.0, resets: 0 }
    }

    pub fn reset(&mut self, scale: f64) {
        let n = self.h.nrows();
        self.h = DMatrix::identity(n, n) * scale;
        self.resets += 1;
    }

    /// Apply a damped update, resetting to `reset_scale * I` if it breaks down.
    pub fn update(&mut self, s: &DVector<f64>, yv: &DVector<f64>, reset_scale: f64) -> BfgsOutcome {
        let out = damped_bfgs_update(&self.h, s, yv);
        match out {
            BfgsOutcome::Updated { ref h, theta, curvature } => {
                self.h = h.clone();
                self.last_theta = theta;
                self.last_curvature = curvature;
            }
            BfgsOutcome::Skipped => {}
            BfgsOutcome::Reset => self.reset(reset_scale),
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BfgsOutcome {
    Updated {
        h: DMatrix<f64>,
        theta: f64,
        curvature: f64,
    },
    /// Zero step: nothing to learn from.
    Skipped,
    /// The update lost positive definiteness; the caller resets `H`.
    Reset,
}

/// One Powell-damped BFGS update of `h` with step `s` and gradient change `yv`.
///
/// `theta = 1` if `s^T yv >= 0.2 s^T H s`, else `0.8 s^T H s / (s^T H s - s^T yv)`;
/// the update uses `y~ = theta yv + (1 - theta) H s`.
pub fn damped_bfgs_update(h: &DMatrix<f64>, s: &DVector<f64>, yv: &DVector<f64>) -> BfgsOutcome {
    if s.norm() == 0.0 {
        return BfgsOutcome::Skipped;
    }
    let hs = h * s;
    let shs = s.dot(&hs);
    if !(shs > 0.0) || !shs.is_finite() {
        return BfgsOutcome::Reset;
    }
    let sy = s.dot(yv);
    let theta = if sy >= 0.2 * shs { 1.0 } else { 0.8 * shs / (shs - sy) };
    let y_tilde = yv * theta + &hs * (1.0 - theta);
    let sty = s.dot(&y_tilde);
    if !(sty > 0.0) || !sty.is_finite() {
        return BfgsOutcome::Reset;
    }
    let mut next = h.clone();
    next.ger(-1.0 / shs, &hs, &hs, 1.0);
    next.ger(1.0 / sty, &y_tilde, &y_tilde, 1.0);
    // restore exact symmetry lost to rounding
    let next = (&next + next.transpose()) * 0.5;
    let min_eig = next.clone().symmetric_eigenvalues().min();
    if !(min_eig >= MIN_EIGENVALUE) {
        return BfgsOutcome::Reset;
    }
    BfgsOutcome::Updated { h: next, theta, curvature: sty }
}
