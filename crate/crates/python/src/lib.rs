use std::sync::{Arc, Mutex};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use pdip::{NormalStepRule, Problem, ProblemRegistry, RunConfig, SolveReport, SolverError};

fn to_py_err(err: SolverError) -> PyErr {
    match err {
        SolverError::UnknownProblem(_) | SolverError::InvalidConfig(_) | SolverError::InvalidProblem(_) => {
            PyValueError::new_err(err.to_string())
        }
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

fn build_config(eps: Option<f64>, beta0: Option<f64>, max_iter: Option<usize>, normal_step: Option<&str>) -> PyResult<RunConfig> {
    let mut config = RunConfig { record_inner: false, ..RunConfig::default() };
    if let Some(eps) = eps {
        config.eps = eps;
    }
    if let Some(beta0) = beta0 {
        config.beta0 = beta0;
    }
    if let Some(max_iter) = max_iter {
        config.max_total_iterations = max_iter;
    }
    if let Some(rule) = normal_step {
        config.normal_step_rule = match rule {
            "cauchy" => NormalStepRule::Cauchy,
            "gauss_newton" | "gauss-newton" => NormalStepRule::GaussNewton,
            "levenberg" => NormalStepRule::Levenberg,
            other => return Err(PyValueError::new_err(format!("unknown normal step rule '{other}'"))),
        };
    }
    Ok(config)
}

fn report_dict<'py>(py: Python<'py>, report: &SolveReport) -> PyResult<Bound<'py, PyDict>> {
    let t = &report.terminal;
    let out = PyDict::new(py);
    out.set_item("problem", &report.problem)?;
    out.set_item("kind", t.kind.as_str())?;
    out.set_item("success", t.kind.is_success())?;
    out.set_item("x", t.x.clone())?;
    out.set_item("u", t.u.clone())?;
    out.set_item("f", t.f)?;
    out.set_item("v", t.v)?;
    out.set_item("phi_inf", t.phi_inf)?;
    out.set_item("psi_inf", t.psi_inf)?;
    out.set_item("beta", t.beta)?;
    out.set_item("rho", t.rho)?;
    out.set_item("iterations", report.total_iterations)?;
    out.set_item("failure", t.failure.clone())?;

    let rows = PyList::empty(py);
    for r in &report.rows {
        let row = PyDict::new(py);
        row.set_item("l", r.l)?;
        row.set_item("f", r.f)?;
        row.set_item("v", r.v)?;
        row.set_item("phi_inf", r.phi_inf)?;
        row.set_item("psi_inf", r.psi_inf)?;
        row.set_item("beta", r.beta)?;
        row.set_item("rho", r.rho)?;
        row.set_item("k", r.k)?;
        rows.append(row)?;
    }
    out.set_item("rows", rows)?;
    out.set_item("csv", pdip::to_csv(report))?;
    Ok(out)
}

/// Identifiers of the built-in test problems.
#[pyfunction]
fn list_problems() -> Vec<&'static str> {
    ProblemRegistry.ids().to_vec()
}

/// Solve a built-in problem and return the terminal point and iteration table.
#[pyfunction]
#[pyo3(signature = (problem, eps=None, beta0=None, max_iter=None, normal_step=None))]
fn solve<'py>(
    py: Python<'py>,
    problem: &str,
    eps: Option<f64>,
    beta0: Option<f64>,
    max_iter: Option<usize>,
    normal_step: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let config = build_config(eps, beta0, max_iter, normal_step)?;
    let problem = ProblemRegistry.get(problem).map_err(to_py_err)?;
    let report = py.detach(|| pdip::solve(&problem, &config)).map_err(to_py_err)?;
    report_dict(py, &report)
}

/// Solve `min f(x)` subject to `c_i(x) <= 0` for the first `m_ineq` entries
/// returned by `constraints` and `c_j(x) = 0` for the remaining `m_eq`.
///
/// Gradients are approximated by central differences.
#[pyfunction]
#[pyo3(signature = (objective, constraints, x0, m_ineq, m_eq=0, eps=None, beta0=None, max_iter=None, normal_step=None))]
#[allow(clippy::too_many_arguments)]
fn solve_callable<'py>(
    py: Python<'py>,
    objective: Py<PyAny>,
    constraints: Py<PyAny>,
    x0: Vec<f64>,
    m_ineq: usize,
    m_eq: usize,
    eps: Option<f64>,
    beta0: Option<f64>,
    max_iter: Option<usize>,
    normal_step: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let config = build_config(eps, beta0, max_iter, normal_step)?;
    let first_error: Arc<Mutex<Option<PyErr>>> = Arc::new(Mutex::new(None));

    let keep = first_error.clone();
    let f = move |x: &[f64]| {
        Python::attach(|py| match objective.call1(py, (x.to_vec(),)).and_then(|v| v.extract::<f64>(py)) {
            Ok(v) => v,
            Err(e) => {
                keep.lock().unwrap().get_or_insert(e);
                f64::NAN
            }
        })
    };
    let keep = first_error.clone();
    let c = move |x: &[f64], out: &mut [f64]| {
        let values = Python::attach(|py| constraints.call1(py, (x.to_vec(),)).and_then(|v| v.extract::<Vec<f64>>(py)));
        match values {
            Ok(v) if v.len() == out.len() => out.copy_from_slice(&v),
            Ok(v) => {
                let msg = format!("constraints returned {} values, expected {}", v.len(), out.len());
                keep.lock().unwrap().get_or_insert(PyValueError::new_err(msg));
                out.fill(f64::NAN);
            }
            Err(e) => {
                keep.lock().unwrap().get_or_insert(e);
                out.fill(f64::NAN);
            }
        }
    };

    let problem =
        Problem::new("python", x0.len(), m_ineq, m_eq, Arc::new(f), Arc::new(c)).and_then(|p| p.with_start(x0)).map_err(to_py_err)?;
    let result = py.detach(|| pdip::solve(&problem, &config));
    if let Some(err) = first_error.lock().unwrap().take() {
        return Err(err);
    }
    report_dict(py, &result.map_err(to_py_err)?)
}

/// `rho_0` for a starting objective value `f0` and infeasibility `v0`.
#[pyfunction]
fn initial_rho(f0: f64, v0: f64) -> f64 {
    pdip::initial_rho(f0, v0)
}

/// Closed-form slack and multiplier `(y, lambda)` of one inequality.
#[pyfunction]
fn eval_slack(c: f64, u: f64, beta: f64, rho: f64) -> PyResult<(f64, f64)> {
    pdip::eval_slack(c, u, beta, rho).map_err(to_py_err)
}

#[pymodule]
fn pdip_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(list_problems, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(solve_callable, m)?)?;
    m.add_function(wrap_pyfunction!(initial_rho, m)?)?;
    m.add_function(wrap_pyfunction!(eval_slack, m)?)?;
    Ok(())
}
