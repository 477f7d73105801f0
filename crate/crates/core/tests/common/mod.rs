#![allow(dead_code)]

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pdip::report::RATE_EXPONENT;
use pdip::slack::slack_derivatives;
use pdip::subproblem::NormalStepKind;
use pdip::{
    build_subproblem, eval_slack, initialize, rate_check, solve, solve_nullspace_qp, Evaluation, NormalStep, ProblemRegistry, RateTarget,
    RunConfig, SlackState, SolveReport, TerminationKind,
};

pub type Check = Result<(), String>;

pub fn run(id: &str) -> SolveReport {
    let problem = ProblemRegistry.get(id).expect("registry problem");
    solve(&problem, &RunConfig::default()).expect("solve")
}

pub fn timed_run(id: &str) -> (SolveReport, Duration) {
    let start = Instant::now();
    let report = run(id);
    (report, start.elapsed())
}

fn inf_dist(x: &[f64], target: &[f64]) -> f64 {
    x.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn expect_kind(report: &SolveReport, kind: TerminationKind) -> Check {
    ensure(report.terminal.kind == kind, || format!("terminated {} instead of {kind}", report.terminal.kind))
}

fn expect_near(report: &SolveReport, target: &[f64], tol: f64) -> Check {
    let d = inf_dist(&report.terminal.x, target);
    ensure(d <= tol, || format!("x = {:?} is {d:.3e} from {target:?}", report.terminal.x))
}

fn expect_rate(report: &SolveReport, target: RateTarget) -> Check {
    let rc = rate_check(&report.rows, target, RATE_EXPONENT);
    ensure(rc.passed, || format!("rate check failed: rows {:?}, chain {:?}", rc.rows, rc.chain))
}

pub fn tp1_terminal(report: &SolveReport, elapsed: Duration) -> Check {
    let t = &report.terminal;
    expect_kind(report, TerminationKind::InfeasibleStationary)?;
    ensure(t.rho <= 1e-8, || format!("rho = {:e}", t.rho))?;
    ensure((t.v - 2.0).abs() <= 1e-3, || format!("v = {}", t.v))?;
    expect_near(report, &[0.0, 0.0], 1e-2)?;
    ensure(report.total_iterations <= 200, || format!("{} iterations", report.total_iterations))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))
}

pub fn tp1_rate(report: &SolveReport) -> Check {
    expect_rate(report, RateTarget::PsiOverRho)
}

pub fn tp2_terminal(report: &SolveReport) -> Check {
    expect_kind(report, TerminationKind::InfeasibleStationary)?;
    ensure((report.terminal.v - 0.4472).abs() <= 1e-3, || format!("v = {}", report.terminal.v))?;
    expect_near(report, &[-0.2, 0.0], 1e-2)?;
    expect_rate(report, RateTarget::PsiOverRho)
}

pub fn tp3_terminal(report: &SolveReport) -> Check {
    let t = &report.terminal;
    expect_kind(report, TerminationKind::Kkt)?;
    expect_near(report, &[2.0, 3.0, 0.0], 1e-3)?;
    ensure((t.f - 2.0).abs() <= 1e-3, || format!("f = {}", t.f))?;
    ensure(t.phi_inf <= 1e-8, || format!("terminal ||phi|| = {:e}", t.phi_inf))?;
    expect_rate(report, RateTarget::PhiOverBeta)
}

pub fn tp4_terminal(report: &SolveReport) -> Check {
    expect_kind(report, TerminationKind::SingularStationary)?;
    expect_near(report, &[1.0, 0.0], 0.1)?;
    ensure(report.terminal.v <= 5e-3, || format!("v = {:e}", report.terminal.v))
}

pub fn initial_rho_values() -> Check {
    let cfg = RunConfig::default();
    for (id, want) in [("tp1", 3.3226), ("tp2", 6.3325)] {
        let (_, rho, _, _) = initialize(&ProblemRegistry.get(id).unwrap(), &cfg).map_err(|e| e.to_string())?;
        ensure((rho - want).abs() <= 1e-4, || format!("{id}: rho0 = {rho}, want {want}"))?;
    }
    Ok(())
}

/// Every logged inner step and outer row of `report` obeys the run invariants.
pub fn run_invariants(report: &SolveReport) -> Check {
    let name = &report.problem;
    ensure(!report.inner.is_empty(), || format!("{name}: no inner records"))?;
    for rec in &report.inner {
        let at = || format!("{name} l={} k={}", rec.l, rec.k);
        ensure(rec.r_min >= 0.0, || format!("{}: min(c + y) = {:e}", at(), rec.r_min))?;
        ensure(rec.merit_after <= rec.merit_before, || format!("{}: merit rose {:e} -> {:e}", at(), rec.merit_before, rec.merit_after))?;
        ensure(rec.xi_after <= rec.xi_before, || format!("{}: xi rose", at()))?;

        let (d, g, r, r_after) = (rec.normal_norm, rec.normal_grad_norm, rec.normal_residual, rec.normal_residual_after);
        if r > 0.0 && g > 0.0 {
            let cond_i = d <= rec.eta1 * g * (1.0 + 1e-12);
            let cond_ii = r - r_after >= rec.eta2 * g * g / r * (1.0 - 1e-9) - 1e-15 * r;
            ensure(cond_i && cond_ii, || {
                format!("{}: normal step ||d||={d:e} ||Rr||={g:e} ||r||={r:e}->{r_after:e} eta=({},{})", at(), rec.eta1, rec.eta2)
            })?;
        } else {
            ensure(d == 0.0, || format!("{}: nonzero normal step without a residual gradient", at()))?;
        }
    }
    for pair in report.inner.windows(2) {
        if pair[0].l == pair[1].l {
            ensure(pair[1].xi_before <= pair[0].xi_after, || format!("{name} l={}: xi rose between steps", pair[1].l))?;
        }
    }
    let params: Vec<(f64, f64)> = report.rows.iter().filter_map(|r| Some((r.beta?, r.rho?))).collect();
    for w in params.windows(2) {
        ensure(w[1].0 <= w[0].0 && w[1].1 <= w[0].1, || format!("{name}: parameters rose {:?} -> {:?}", w[0], w[1]))?;
    }
    Ok(())
}

pub fn all_run_invariants() -> Check {
    for id in ProblemRegistry.ids() {
        run_invariants(&run(id))?;
    }
    Ok(())
}

pub fn deterministic_csv() -> Check {
    for id in ProblemRegistry.ids() {
        let a = pdip::to_csv(&run(id));
        let b = pdip::to_csv(&run(id));
        ensure(a == b, || format!("{id}: CSV differs between runs"))?;
    }
    Ok(())
}

/// `(y, lambda)` straight from the quadratic `y^2 + (c + rho u) y - rho beta = 0`.
pub fn textbook_slack(c: f64, u: f64, beta: f64, rho: f64) -> (f64, f64) {
    let w = c + rho * u;
    let s = (w * w + 4.0 * rho * beta).sqrt();
    (0.5 * (s - w), 0.5 * (s + w))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.ln()..hi.ln()).prop_map(f64::exp)
}

#[derive(Debug, Clone)]
pub struct SlackSample {
    pub c: f64,
    pub u: f64,
    pub beta: f64,
    pub rho: f64,
    pub x: [f64; 2],
    pub duals: [f64; 4],
}

pub fn slack_sample() -> impl Strategy<Value = SlackSample> {
    (
        -10.0..10.0f64,
        -5.0..10.0f64,
        log_uniform(1e-6, 1.0),
        log_uniform(1e-4, 10.0),
        prop::array::uniform2(-3.0..3.0f64),
        prop::array::uniform4(0.0..5.0f64),
    )
        .prop_map(|(c, u, beta, rho, x, duals)| SlackSample { c, u, beta, rho, x, duals })
}

fn fail(msg: String) -> TestCaseError {
    TestCaseError::fail(msg)
}

/// Closed-form identities, monotonicity facts and derivative formulas for one sample.
pub fn check_slack_sample(s: &SlackSample) -> Result<(), TestCaseError> {
    let SlackSample { c, u, beta, rho, .. } = *s;
    let (y, lambda) = eval_slack(c, u, beta, rho).map_err(|e| fail(e.to_string()))?;
    let rb = rho * beta;
    if !(y > 0.0 && lambda > 0.0) {
        return Err(fail(format!("nonpositive pair y={y:e} lambda={lambda:e}")));
    }
    if rel_err(lambda * y, rb) > 1e-12 {
        return Err(fail(format!("lambda y = {:e}, rho beta = {rb:e}", lambda * y)));
    }

    let w = c + rho * u;
    let root = (w * w + 4.0 * rb).sqrt();
    let cy = 0.5 * (root + (c - rho * u));
    let scale = c.abs() + rho * u.abs() + root;
    if ((c + y) - cy).abs() > 1e-13 * scale {
        return Err(fail(format!("c + y = {:e}, closed form {cy:e}", c + y)));
    }
    if ((lambda - rho * u - c - y) / scale).abs() > 1e-13 {
        return Err(fail("lambda != rho u + c + y".into()));
    }

    let state = SlackState::from_constraints(&DVector::from_vec(vec![c]), &DVector::from_vec(vec![u]), 1, beta, rho)
        .map_err(|e| fail(e.to_string()))?;
    let nu = state.nu[0];
    let want = rb / (y + lambda).powi(2);
    if rel_err(nu * (1.0 - nu), want) > 1e-9 && (nu * (1.0 - nu) - want).abs() > 1e-15 {
        return Err(fail(format!("nu(1 - nu) = {:e}, rho beta/(y + lambda)^2 = {want:e}", nu * (1.0 - nu))));
    }
    if rel_err(state.curvature(0), want) > 1e-12 {
        return Err(fail(format!("stored curvature {:e} vs {want:e}", state.curvature(0))));
    }

    // Monotonicity in u, beta and rho.
    let h = 1e-3 * (1.0 + u.abs());
    let (y_up, l_up) = eval_slack(c, u + h, beta, rho).unwrap();
    if y_up > y || l_up < lambda {
        return Err(fail("y must decrease and lambda increase in u".into()));
    }
    let (y_small_beta, _) = eval_slack(c, u, 0.5 * beta, rho).unwrap();
    if y_small_beta > y {
        return Err(fail("y must shrink with beta".into()));
    }
    if c + y > 0.0 {
        let (y_small_rho, _) = eval_slack(c, u, beta, 0.5 * rho).unwrap();
        if y_small_rho > y * (1.0 + 1e-14) {
            return Err(fail(format!("y must shrink with rho when c + y > 0: {y_small_rho:e} > {y:e}")));
        }
    }

    check_u_derivatives(c, u, beta, rho, &state)?;
    check_x_derivatives(s)
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-5 * analytic.abs().max(numeric.abs()).max(1.0)
}

fn check_u_derivatives(c: f64, u: f64, beta: f64, rho: f64, state: &SlackState) -> Result<(), TestCaseError> {
    let jac = DMatrix::from_element(1, 1, 1.0);
    let der = slack_derivatives(state, &jac);
    let h = 1e-6 * (1.0 + u.abs());
    let (yp, lp) = textbook_slack(c, u + h, beta, rho);
    let (ym, lm) = textbook_slack(c, u - h, beta, rho);
    let (dy, dl) = ((yp - ym) / (2.0 * h), (lp - lm) / (2.0 * h));
    if !close(der.dy_du[0], dy) || !close(der.dlambda_du[0], dl) {
        return Err(fail(format!("u-derivatives ({:e}, {:e}) vs differences ({dy:e}, {dl:e})", der.dy_du[0], der.dlambda_du[0])));
    }
    // x enters only through c, so d/dc with a unit Jacobian is the x-derivative.
    let hc = 1e-6 * (1.0 + c.abs());
    let (yp, lp) = textbook_slack(c + hc, u, beta, rho);
    let (ym, lm) = textbook_slack(c - hc, u, beta, rho);
    let (dy, dl) = ((yp - ym) / (2.0 * hc), (lp - lm) / (2.0 * hc));
    if !close(der.dy_dx[(0, 0)], dy) || !close(der.dlambda_dx[(0, 0)], dl) {
        return Err(fail(format!("c-derivatives ({:e}, {:e}) vs ({dy:e}, {dl:e})", der.dy_dx[(0, 0)], der.dlambda_dx[(0, 0)])));
    }
    Ok(())
}

/// Derivatives with respect to `x` on the four constraints of `tp1`.
fn check_x_derivatives(s: &SlackSample) -> Result<(), TestCaseError> {
    let problem = ProblemRegistry.get("tp1").unwrap();
    let u = DVector::from_column_slice(&s.duals);
    let eval = problem.evaluate(&s.x).map_err(|e| fail(e.to_string()))?;
    let state = SlackState::from_constraints(&eval.c, &u, 4, s.beta, s.rho).map_err(|e| fail(e.to_string()))?;
    let der = slack_derivatives(&state, &eval.jac);
    for j in 0..2 {
        let h = 1e-6 * (1.0 + s.x[j].abs());
        let mut xp = s.x;
        let mut xm = s.x;
        xp[j] += h;
        xm[j] -= h;
        let (_, cp) = problem.eval(&xp).unwrap();
        let (_, cm) = problem.eval(&xm).unwrap();
        for i in 0..4 {
            let (yp, lp) = textbook_slack(cp[i], u[i], s.beta, s.rho);
            let (ym, lm) = textbook_slack(cm[i], u[i], s.beta, s.rho);
            let (dy, dl) = ((yp - ym) / (2.0 * h), (lp - lm) / (2.0 * h));
            if !close(der.dy_dx[(i, j)], dy) || !close(der.dlambda_dx[(i, j)], dl) {
                return Err(fail(format!("x-derivative ({i},{j}) mismatch")));
            }
        }
    }
    Ok(())
}

/// Runs the identity suite on `cases` samples with a fixed seed.
pub fn identity_suite(cases: u32) -> Check {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner =
        TestRunner::new_with_rng(config, proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha));
    runner.run(&slack_sample(), |s| check_slack_sample(&s)).map_err(|e| e.to_string())
}

/// Random instance for the Newton-equation oracle.
pub struct NewtonInstance {
    pub eval: Evaluation,
    pub u: DVector<f64>,
    pub beta: f64,
    pub rho: f64,
    pub h: DMatrix<f64>,
}

pub fn newton_instance(rng: &mut ChaCha8Rng) -> NewtonInstance {
    let n = rng.gen_range(1..=5);
    let m = rng.gen_range(1..=5);
    let mut uniform = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let grad = DVector::from_fn(n, |_, _| uniform(-2.0, 2.0));
    let jac = DMatrix::from_fn(m, n, |_, _| uniform(-2.0, 2.0));
    let c = DVector::from_fn(m, |_, _| uniform(-2.0, 2.0));
    let u = DVector::from_fn(m, |_, _| uniform(0.0, 3.0));
    let a = DMatrix::from_fn(n, n, |_, _| uniform(-1.0, 1.0));
    let h = &a * a.transpose() + DMatrix::identity(n, n) * uniform(0.1, 2.0);
    let beta = uniform(1e-3, 1.0);
    let rho = uniform(0.05, 5.0);
    NewtonInstance { eval: Evaluation { f: 0.0, c, grad, jac }, u, beta, rho, h }
}

/// Largest residual of the two Newton-equation blocks at the QP step of `inst`.
pub fn newton_residual(inst: &NewtonInstance) -> Result<f64, String> {
    let NewtonInstance { eval, u, beta, rho, h } = inst;
    let (n, m) = (eval.grad.len(), eval.c.len());
    let slack = SlackState::from_constraints(&eval.c, u, m, *beta, *rho).map_err(|e| e.to_string())?;
    let sub = build_subproblem(eval, &slack, h).map_err(|e| e.to_string())?;

    // Exact normal step: minimum-norm solution of R^T d = -r.
    let r_mat = &sub.r_mat;
    let gram = r_mat.tr_mul(r_mat);
    let coef = gram.cholesky().ok_or("R^T R is singular")?.solve(&sub.residual);
    let dc = -(r_mat * coef);
    let g = r_mat * &sub.residual;
    let normal = NormalStep {
        d: dc,
        kind: NormalStepKind::GaussNewton,
        cauchy_t: 0.0,
        grad_norm: g.norm(),
        residual_norm: sub.residual.norm(),
        residual_after: 0.0,
        eta1: f64::INFINITY,
        eta2: 0.0,
        rank_deficient: false,
    };
    let step = solve_nullspace_qp(&sub, normal).map_err(|e| e.to_string())?;

    let mut worst: f64 = 0.0;
    let mut y = DVector::zeros(m);
    let mut lambda = DVector::zeros(m);
    for i in 0..m {
        let (yi, li) = textbook_slack(eval.c[i], u[i], *beta, *rho);
        y[i] = yi;
        lambda[i] = li;
    }
    let nu = lambda.zip_map(&y, |l, y| l / (y + l));
    let mut b = h.clone();
    let mut block1 = &eval.grad * *rho + eval.jac.tr_mul(&lambda);
    for i in 0..m {
        let gc = eval.jac.row(i).transpose();
        b += &gc * gc.transpose() * nu[i];
        block1 += &gc * (rho * nu[i] * step.du[i]);
    }
    block1 += &b * &step.dx;
    worst = worst.max(block1.amax());
    for i in 0..m {
        let gc = eval.jac.row(i).transpose();
        let lhs = rho * nu[i] * gc.dot(&step.dx) - rho * rho * (1.0 - nu[i]) * step.du[i];
        worst = worst.max((lhs + rho * (eval.c[i] + y[i])).abs());
    }
    debug_assert_eq!(step.dx.len(), n);
    Ok(worst)
}

pub fn newton_oracle(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for k in 0..instances {
        let inst = newton_instance(&mut rng);
        let res = newton_residual(&inst)?;
        ensure(res <= 1e-8, || format!("instance {k}: Newton residual {res:e}"))?;
    }
    Ok(())
}
