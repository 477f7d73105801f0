//! Problem definitions, the built-in test problem registry, and gradient
//! evaluation with a central-difference fallback.
//!
//! Every inequality is stored in the form `c_i(x) <= 0`; equalities as
//! `c_j(x) = 0`. Constraint vectors always list inequalities first.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{EvalTarget, Result, SolverError};

pub type ObjectiveFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type ConstraintFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Fills the constraint Jacobian; row `i` is `grad c_i(x)^T`.
pub type JacobianFn = Arc<dyn Fn(&[f64], &mut DMatrix<f64>) + Send + Sync>;

/// A smooth nonlinear program `min f(x)` s.t. `c_I(x) <= 0`, `c_E(x) = 0`.
#[derive(Clone)]
pub struct Problem {
    name: String,
    n: usize,
    m_ineq: usize,
    m_eq: usize,
    x0: Vec<f64>,
    objective: ObjectiveFn,
    constraints: ConstraintFn,
    gradient: Option<GradientFn>,
    jacobian: Option<JacobianFn>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m_ineq", &self.m_ineq)
            .field("m_eq", &self.m_eq)
            .field("x0", &self.x0)
            .field("analytic_gradient", &self.gradient.is_some())
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

/// `f`, `c`, `grad f` and the constraint Jacobian at one point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub f: f64,
    pub c: DVector<f64>,
    pub grad: DVector<f64>,
    pub jac: DMatrix<f64>,
}

impl Problem {
    /// Build a problem from objective and constraint closures. Gradients
    /// default to central differences until supplied.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        m_ineq: usize,
        m_eq: usize,
        objective: ObjectiveFn,
        constraints: ConstraintFn,
    ) -> Result<Self> {
        if n == 0 {
            return Err(SolverError::InvalidProblem("dimension n must be at least 1".into()));
        }
        if m_ineq + m_eq == 0 {
            return Err(SolverError::InvalidProblem("at least one constraint is required".into()));
        }
        Ok(Self { name: name.into(), n, m_ineq, m_eq, x0: vec![0.0; n], objective, constraints, gradient: None, jacobian: None })
    }

    pub fn with_gradient(mut self, gradient: GradientFn) -> Self {
        self.gradient = Some(gradient);
        self
    }

    pub fn with_jacobian(mut self, jacobian: JacobianFn) -> Self {
        self.jacobian = Some(jacobian);
        self
    }

    pub fn with_start(mut self, x0: Vec<f64>) -> Result<Self> {
        check_dim(self.n, x0.len())?;
        self.x0 = x0;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m_ineq(&self) -> usize {
        self.m_ineq
    }

    pub fn m_eq(&self) -> usize {
        self.m_eq
    }

    /// Total number of constraints.
    pub fn m(&self) -> usize {
        self.m_ineq + self.m_eq
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn has_analytic_gradients(&self) -> bool {
        self.gradient.is_some() && self.jacobian.is_some()
    }

    /// Objective and constraint values.
    pub fn eval(&self, x: &[f64]) -> Result<(f64, DVector<f64>)> {
        check_dim(self.n, x.len())?;
        let f = (self.objective)(x);
        if !f.is_finite() {
            return Err(SolverError::Evaluation { target: EvalTarget::Objective, index: 0 });
        }
        let mut c = DVector::zeros(self.m());
        (self.constraints)(x, c.as_mut_slice());
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::Evaluation { target: EvalTarget::Constraint, index: i });
        }
        Ok((f, c))
    }

    /// Objective gradient and constraint Jacobian (rows are constraints).
    pub fn eval_gradients(&self, x: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        check_dim(self.n, x.len())?;
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::Evaluation { target: EvalTarget::Gradient, index: i });
        }
        let grad = match &self.gradient {
            Some(g) => {
                let mut out = DVector::zeros(self.n);
                g(x, out.as_mut_slice());
                out
            }
            None => self.fd_gradient(x),
        };
        if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::Evaluation { target: EvalTarget::Gradient, index: i });
        }
        let jac = match &self.jacobian {
            Some(j) => {
                let mut out = DMatrix::zeros(self.m(), self.n);
                j(x, &mut out);
                out
            }
            None => self.fd_jacobian(x),
        };
        if let Some(i) = jac.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::Evaluation { target: EvalTarget::Jacobian, index: i });
        }
        Ok((grad, jac))
    }

    /// Values and first derivatives in one call.
    pub fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let (f, c) = self.eval(x)?;
        let (grad, jac) = self.eval_gradients(x)?;
        Ok(Evaluation { f, c, grad, jac })
    }

    /// Central-difference gradient of the objective.
    pub fn fd_gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut xp = x.to_vec();
        DVector::from_iterator(
            self.n,
            (0..self.n).map(|i| {
                let h = fd_step(x[i]);
                xp[i] = x[i] + h;
                let fp = (self.objective)(&xp);
                xp[i] = x[i] - h;
                let fm = (self.objective)(&xp);
                xp[i] = x[i];
                (fp - fm) / (2.0 * h)
            }),
        )
    }

    /// Central-difference constraint Jacobian.
    pub fn fd_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.m();
        let mut jac = DMatrix::zeros(m, self.n);
        let mut xp = x.to_vec();
        let mut cp = vec![0.0; m];
        let mut cm = vec![0.0; m];
        for i in 0..self.n {
            let h = fd_step(x[i]);
            xp[i] = x[i] + h;
            (self.constraints)(&xp, &mut cp);
            xp[i] = x[i] - h;
            (self.constraints)(&xp, &mut cm);
            xp[i] = x[i];
            for r in 0..m {
                jac[(r, i)] = (cp[r] - cm[r]) / (2.0 * h);
            }
        }
        jac
    }

    /// Compare analytic derivatives against central differences.
    pub fn check_gradients(&self, x: &[f64]) -> Result<GradientCheck> {
        check_dim(self.n, x.len())?;
        let (grad, jac) = self.eval_gradients(x)?;
        let fd_grad = self.fd_gradient(x);
        let fd_jac = self.fd_jacobian(x);

        let mut check = GradientCheck::default();
        for i in 0..self.n {
            let dev = relative_deviation(grad[i], fd_grad[i]);
            if dev > check.gradient_deviation {
                check.gradient_deviation = dev;
                check.gradient_index = i;
            }
        }
        for r in 0..self.m() {
            for c in 0..self.n {
                let dev = relative_deviation(jac[(r, c)], fd_jac[(r, c)]);
                if dev > check.jacobian_deviation {
                    check.jacobian_deviation = dev;
                    check.jacobian_index = (r, c);
                }
            }
        }
        Ok(check)
    }

    /// `|| (max(0, c_I), c_E) ||_2`, the infeasibility measure.
    pub fn infeasibility(&self, c: &DVector<f64>) -> f64 {
        violation(c, self.m_ineq).norm()
    }

    /// `|| (max(0, c_I), c_E) ||_inf`.
    pub fn infeasibility_inf(&self, c: &DVector<f64>) -> f64 {
        violation(c, self.m_ineq).amax()
    }
}

/// Componentwise violation: `max(0, c_i)` for inequalities, `c_j` for equalities.
pub fn violation(c: &DVector<f64>, m_ineq: usize) -> DVector<f64> {
    DVector::from_iterator(c.len(), c.iter().enumerate().map(|(i, &v)| if i < m_ineq { v.max(0.0) } else { v }))
}

/// Worst analytic-vs-finite-difference discrepancy per oracle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientCheck {
    pub gradient_deviation: f64,
    pub gradient_index: usize,
    pub jacobian_deviation: f64,
    /// (constraint row, variable column)
    pub jacobian_index: (usize, usize),
}

impl GradientCheck {
    pub fn max_deviation(&self) -> f64 {
        self.gradient_deviation.max(self.jacobian_deviation)
    }
}

fn relative_deviation(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (1.0 + fd.abs())
}

fn fd_step(xi: f64) -> f64 {
    1e-6 * xi.abs().max(1.0)
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(SolverError::Dimension { expected, got });
    }
    Ok(())
}

/// The built-in test problems, keyed by lower-case identifier.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProblemRegistry;

impl ProblemRegistry {
    pub const IDS: [&'static str; 5] = ["tp1", "tp2", "tp3", "tp4", "qp2"];

    pub fn ids(&self) -> &'static [&'static str] {
        &Self::IDS
    }

    pub fn get(&self, id: &str) -> Result<Problem> {
        match id.to_ascii_lowercase().as_str() {
            "tp1" => Ok(tp1()),
            "tp2" => Ok(tp2()),
            "tp3" => Ok(tp3()),
            "tp4" => Ok(tp4()),
            "qp2" => Ok(qp2()),
            _ => Err(SolverError::UnknownProblem(id.to_string())),
        }
    }

    pub fn all(&self) -> Vec<Problem> {
        Self::IDS.iter().map(|id| self.get(id).expect("registry id")).collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn build(
    name: &str,
    n: usize,
    m_ineq: usize,
    m_eq: usize,
    x0: &[f64],
    objective: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    constraints: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    jacobian: impl Fn(&[f64], &mut DMatrix<f64>) + Send + Sync + 'static,
) -> Problem {
    Problem::new(name, n, m_ineq, m_eq, Arc::new(objective), Arc::new(constraints))
        .and_then(|p| p.with_start(x0.to_vec()))
        .expect("built-in problem is well formed")
        .with_gradient(Arc::new(gradient))
        .with_jacobian(Arc::new(jacobian))
}

/// Infeasible "isolated" problem: four convex constraints with no common point.
fn tp1() -> Problem {
    build(
        "tp1",
        2,
        4,
        0,
        &[3.0, 2.0],
        |x| x[0] + x[1],
        |x, c| {
            c[0] = x[0] * x[0] - x[1] + 1.0;
            c[1] = x[0] * x[0] + x[1] + 1.0;
            c[2] = -x[0] + x[1] * x[1] + 1.0;
            c[3] = x[0] + x[1] * x[1] + 1.0;
        },
        |_, g| {
            g[0] = 1.0;
            g[1] = 1.0;
        },
        |x, j| {
            j[(0, 0)] = 2.0 * x[0];
            j[(0, 1)] = -1.0;
            j[(1, 0)] = 2.0 * x[0];
            j[(1, 1)] = 1.0;
            j[(2, 0)] = -1.0;
            j[(2, 1)] = 2.0 * x[1];
            j[(3, 0)] = 1.0;
            j[(3, 1)] = 2.0 * x[1];
        },
    )
}

/// Infeasible "nactive" problem.
fn tp2() -> Problem {
    build(
        "tp2",
        2,
        3,
        0,
        &[-20.0, 10.0],
        |x| x[0],
        |x, c| {
            c[0] = 0.5 * (x[0] + x[1] * x[1] + 1.0);
            c[1] = -x[0] + x[1] * x[1];
            c[2] = x[0] - x[1] * x[1];
        },
        |_, g| {
            g[0] = 1.0;
            g[1] = 0.0;
        },
        |x, j| {
            j[(0, 0)] = 0.5;
            j[(0, 1)] = x[1];
            j[(1, 0)] = -1.0;
            j[(1, 1)] = 2.0 * x[1];
            j[(2, 0)] = 1.0;
            j[(2, 1)] = -2.0 * x[1];
        },
    )
}

/// Well-posed counterexample for truncated-step interior methods; minimizer (2, 3, 0).
fn tp3() -> Problem {
    build(
        "tp3",
        3,
        2,
        2,
        &[-4.0, 1.0, 1.0],
        |x| x[0],
        |x, c| {
            c[0] = -x[1];
            c[1] = -x[2];
            c[2] = x[0] * x[0] - x[1] - 1.0;
            c[3] = x[0] - x[2] - 2.0;
        },
        |_, g| {
            g[0] = 1.0;
            g[1] = 0.0;
            g[2] = 0.0;
        },
        |x, j| {
            j.fill(0.0);
            j[(0, 1)] = -1.0;
            j[(1, 2)] = -1.0;
            j[(2, 0)] = 2.0 * x[0];
            j[(2, 1)] = -1.0;
            j[(3, 0)] = 1.0;
            j[(3, 2)] = -1.0;
        },
    )
}

/// Degenerate problem whose minimizer (1, 0) is a singular stationary point.
fn tp4() -> Problem {
    build(
        "tp4",
        2,
        3,
        0,
        &[-2.0, -2.0],
        |x| (x[0] - 2.0).powi(2) + x[1] * x[1],
        |x, c| {
            c[0] = -(1.0 - x[0]).powi(3) + x[1];
            c[1] = -x[0];
            c[2] = -x[1];
        },
        |x, g| {
            g[0] = 2.0 * (x[0] - 2.0);
            g[1] = 2.0 * x[1];
        },
        |x, j| {
            j.fill(0.0);
            j[(0, 0)] = 3.0 * (1.0 - x[0]).powi(2);
            j[(0, 1)] = 1.0;
            j[(1, 0)] = -1.0;
            j[(2, 1)] = -1.0;
        },
    )
}

/// Small convex QP with one active linear constraint; minimizer (0.5, 1.5).
fn qp2() -> Problem {
    build(
        "qp2",
        2,
        1,
        0,
        &[3.0, 3.0],
        |x| (x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2),
        |x, c| {
            c[0] = x[0] + x[1] - 2.0;
        },
        |x, g| {
            g[0] = 2.0 * (x[0] - 1.0);
            g[1] = 2.0 * (x[1] - 2.0);
        },
        |_, j| {
            j[(0, 0)] = 1.0;
            j[(0, 1)] = 1.0;
        },
    )
}
