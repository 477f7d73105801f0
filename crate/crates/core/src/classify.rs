//! Terminal-point classification.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::smallest_right_singular;
use crate::model::{violation, Evaluation, Problem};
use crate::solver::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationKind {
    #[serde(rename = "KKT")]
    Kkt,
    InfeasibleStationary,
    SingularStationary,
    IterationLimit,
    NumericalFailure,
}

impl TerminationKind {
    pub const ALL: [TerminationKind; 5] = [
        TerminationKind::Kkt,
        TerminationKind::InfeasibleStationary,
        TerminationKind::SingularStationary,
        TerminationKind::IterationLimit,
        TerminationKind::NumericalFailure,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationKind::Kkt => "KKT",
            TerminationKind::InfeasibleStationary => "InfeasibleStationary",
            TerminationKind::SingularStationary => "SingularStationary",
            TerminationKind::IterationLimit => "IterationLimit",
            TerminationKind::NumericalFailure => "NumericalFailure",
        }
    }

    /// True for the three kinds that describe a converged run.
    pub fn is_success(&self) -> bool {
        matches!(self, TerminationKind::Kkt | TerminationKind::InfeasibleStationary | TerminationKind::SingularStationary)
    }
}

impl std::fmt::Display for TerminationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TerminationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.iter().copied().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown termination kind '{s}'"))
    }
}

/// Parameter test that ended an inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamTest {
    /// The residual was small enough to reduce `beta`.
    Beta,
    /// The merit penalty collapsed and `rho` was reduced.
    Rho,
}

/// Classification of the terminal point with supporting measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub kind: TerminationKind,
    /// `||max(0, c(x))||_inf` (equalities by absolute value).
    pub violation_inf: f64,
    /// `||sum_i max(c_i, 0) grad c_i||_inf`: stationarity of the violation measure.
    pub infeasibility_stationarity: f64,
    /// Indices of the constraints treated as active.
    pub active: Vec<usize>,
    /// Unit vector `b` over the active set with `sum b_i grad c_i` close to zero.
    pub singular_direction: Option<Vec<f64>>,
    /// Smallest singular value of the active gradient matrix.
    pub singular_value: Option<f64>,
    /// Inequality entries of `b` are nonnegative (up to `1e-8`).
    pub direction_nonnegative: bool,
}

/// Classify the end point of a run with final parameters `beta` and `rho`.
///
/// `last_test` is the parameter test that fired last. `beta <= eps` is checked
/// first and gives a KKT point, unless `rho` was also driven below `eps` by
/// the last test. Otherwise, with `rho <= eps`, the point is
/// infeasible stationary when its violation exceeds `feasibility_tol` and
/// singular stationary when it is feasible. Any other state is reported as an
/// iteration limit.
pub fn classify_termination(
    problem: &Problem,
    eval: &Evaluation,
    beta: f64,
    rho: f64,
    last_test: Option<ParamTest>,
    config: &RunConfig,
) -> Classification {
    let m_ineq = problem.m_ineq();
    let viol = violation(&eval.c, m_ineq);
    let violation_inf = viol.amax();
    let infeasibility_stationarity = if viol.is_empty() { 0.0 } else { eval.jac.tr_mul(&viol).amax() };

    let active: Vec<usize> = (0..eval.c.len()).filter(|&i| i >= m_ineq || eval.c[i] >= -config.active_tol).collect();
    let (singular_direction, singular_value, direction_nonnegative) = singular_multiplier(eval, &active, m_ineq);

    let rho_path = rho <= config.eps && last_test == Some(ParamTest::Rho);
    let kind = if beta <= config.eps && !rho_path {
        TerminationKind::Kkt
    } else if rho <= config.eps {
        if violation_inf > config.feasibility_tol {
            TerminationKind::InfeasibleStationary
        } else {
            TerminationKind::SingularStationary
        }
    } else {
        TerminationKind::IterationLimit
    };

    Classification { kind, violation_inf, infeasibility_stationarity, active, singular_direction, singular_value, direction_nonnegative }
}

fn singular_multiplier(eval: &Evaluation, active: &[usize], m_ineq: usize) -> (Option<Vec<f64>>, Option<f64>, bool) {
    if active.is_empty() {
        return (None, None, false);
    }
    let n = eval.jac.ncols();
    let mut a = DMatrix::zeros(n, active.len());
    for (col, &i) in active.iter().enumerate() {
        a.set_column(col, &eval.jac.row(i).transpose());
    }
    let Some((mut b, sigma)) = smallest_right_singular(&a) else {
        return (None, None, false);
    };
    if b.sum() < 0.0 {
        b = -b;
    }
    let nonneg = nonnegative_on_inequalities(&b, active, m_ineq);
    (Some(b.iter().copied().collect()), Some(sigma), nonneg)
}

fn nonnegative_on_inequalities(b: &DVector<f64>, active: &[usize], m_ineq: usize) -> bool {
    active.iter().zip(b.iter()).all(|(&i, &bi)| i >= m_ineq || bi >= -1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProblemRegistry;

    fn at(problem: &Problem, x: &[f64]) -> Evaluation {
        problem.evaluate(x).unwrap()
    }

    #[test]
    fn kkt_checked_first() {
        let p = ProblemRegistry.get("tp1").unwrap();
        let cfg = RunConfig::default();
        let cl = classify_termination(&p, &at(&p, &[0.0, 0.0]), 1e-9, 1e-9, None, &cfg);
        assert_eq!(cl.kind, TerminationKind::Kkt);
    }

    #[test]
    fn tp1_origin_is_infeasible_stationary() {
        let p = ProblemRegistry.get("tp1").unwrap();
        let cl = classify_termination(&p, &at(&p, &[0.0, 0.0]), 0.1, 1e-9, None, &RunConfig::default());
        assert_eq!(cl.kind, TerminationKind::InfeasibleStationary);
        assert!(cl.infeasibility_stationarity < 1e-12);
        assert!((cl.violation_inf - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tp4_corner_is_singular() {
        let p = ProblemRegistry.get("tp4").unwrap();
        let cl = classify_termination(&p, &at(&p, &[1.0, 0.0]), 0.01, 1e-9, None, &RunConfig::default());
        assert_eq!(cl.kind, TerminationKind::SingularStationary);
        assert_eq!(cl.active, vec![0, 2]);
        assert!(cl.singular_value.unwrap() < 1e-12);
        assert!(cl.direction_nonnegative);
        let b = cl.singular_direction.unwrap();
        assert!((b[0] - b[1]).abs() < 1e-12);
    }

    #[test]
    fn rho_test_with_small_beta_is_not_kkt() {
        let p = ProblemRegistry.get("tp4").unwrap();
        let eval = at(&p, &[1.0, 0.0]);
        let config = RunConfig::default();
        let by_rho = classify_termination(&p, &eval, 1e-10, 1e-10, Some(ParamTest::Rho), &config);
        assert_eq!(by_rho.kind, TerminationKind::SingularStationary);
        let by_beta = classify_termination(&p, &eval, 1e-10, 1e-10, Some(ParamTest::Beta), &config);
        assert_eq!(by_beta.kind, TerminationKind::Kkt);
    }

    #[test]
    fn neither_parameter_small_is_iteration_limit() {
        let p = ProblemRegistry.get("tp1").unwrap();
        let cl = classify_termination(&p, &at(&p, &[0.0, 0.0]), 0.1, 0.1, None, &RunConfig::default());
        assert_eq!(cl.kind, TerminationKind::IterationLimit);
    }

    #[test]
    fn kind_round_trips_through_strings() {
        for k in TerminationKind::ALL {
            assert_eq!(k.as_str().parse::<TerminationKind>().unwrap(), k);
        }
        assert!("Bogus".parse::<TerminationKind>().is_err());
    }
}
