use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pdip::{build_subproblem, merit, normal_step, pi_value, solve_nullspace_qp, NormalStepRule, Problem, StepResult};

const H: f64 = 1e-7;

/// `f = g^T x + 1/2 sum w_j x_j^2`, `c_i = a_i^T x + b_i + 1/2 k_i ||x||^2`.
struct Instance {
    problem: Problem,
    x: Vec<f64>,
    u: DVector<f64>,
    beta: f64,
    rho: f64,
    xi: f64,
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Problem {
    let g = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let w = DVector::from_fn(n, |_, _| rng.gen_range(0.1..2.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-2.0..2.0));
    let b = DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0));
    let k = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));

    let (gf, wf) = (g.clone(), w.clone());
    let objective = Arc::new(move |x: &[f64]| (0..x.len()).map(|j| gf[j] * x[j] + 0.5 * wf[j] * x[j] * x[j]).sum());
    let (ac, bc, kc) = (a.clone(), b, k.clone());
    let constraints = Arc::new(move |x: &[f64], c: &mut [f64]| {
        let sq: f64 = x.iter().map(|v| v * v).sum();
        for i in 0..c.len() {
            c[i] = (0..x.len()).map(|j| ac[(i, j)] * x[j]).sum::<f64>() + bc[i] + 0.5 * kc[i] * sq;
        }
    });
    let (gg, wg) = (g, w);
    let gradient = Arc::new(move |x: &[f64], out: &mut [f64]| {
        for j in 0..x.len() {
            out[j] = gg[j] + wg[j] * x[j];
        }
    });
    let (aj, kj) = (a, k);
    let jacobian = Arc::new(move |x: &[f64], jac: &mut DMatrix<f64>| {
        for i in 0..jac.nrows() {
            for j in 0..x.len() {
                jac[(i, j)] = aj[(i, j)] + kj[i] * x[j];
            }
        }
    });
    Problem::new("random", n, m, 0, objective, constraints).unwrap().with_gradient(gradient).with_jacobian(jacobian)
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(1..=4);
    let problem = random_problem(rng, n, m);
    let x = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let u = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..3.0));
    Instance { problem, x, u, beta: rng.gen_range(1e-3..1.0), rho: rng.gen_range(0.05..5.0), xi: rng.gen_range(1e-2..1.0) }
}

/// Feasible point with `u_i = -beta / c_i`, so every residual `c_i + y_i` vanishes.
fn zero_residual_instance(rng: &mut ChaCha8Rng) -> Instance {
    loop {
        let n = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=4);
        let problem = random_problem(rng, n, m);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, c) = problem.eval(&x).unwrap();
        if c.iter().any(|&ci| ci > -0.1) {
            continue;
        }
        let beta = rng.gen_range(1e-3..1.0);
        let u = c.map(|ci| -beta / ci);
        return Instance { problem, x, u, beta, rho: rng.gen_range(0.05..5.0), xi: rng.gen_range(1e-2..1.0) };
    }
}

fn step(inst: &Instance) -> (pdip::SubproblemData, StepResult) {
    let eval = inst.problem.evaluate(&inst.x).unwrap();
    let slack = pdip::SlackState::from_constraints(&eval.c, &inst.u, inst.problem.m_ineq(), inst.beta, inst.rho).unwrap();
    let n = inst.x.len();
    let sub = build_subproblem(&eval, &slack, &DMatrix::identity(n, n)).unwrap();
    let normal = normal_step(&sub.r_mat, &sub.residual, 1e4, NormalStepRule::default(), &sub.variable_scale());
    let result = solve_nullspace_qp(&sub, normal).unwrap();
    (sub, result)
}

fn merit_at(inst: &Instance, res: &StepResult, t: f64) -> f64 {
    let x: Vec<f64> = inst.x.iter().zip(res.dx.iter()).map(|(a, b)| a + t * b).collect();
    let u = &inst.u + &res.du * t;
    merit(&inst.problem, &x, &u, inst.beta, inst.rho, inst.xi).unwrap()
}

#[test]
fn pi_bounds_one_sided_slope() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..300 {
        let inst = random_instance(&mut rng);
        let (sub, mut res) = step(&inst);
        let len = res.dx.norm().hypot(res.du.norm());
        if len == 0.0 {
            continue;
        }
        res.d /= len;
        res.dx /= len;
        res.du /= len;
        let pi = pi_value(&sub, &res.d, inst.xi).pi;
        let slope = (merit_at(&inst, &res, H) - merit_at(&inst, &res, 0.0)) / H;
        assert!(slope <= pi + 1e-5, "case {case}: slope {slope:e} exceeds pi {pi:e}");
    }
}

#[test]
fn smooth_part_slope_matches_linear_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..300 {
        let inst = random_instance(&mut rng);
        let (sub, res) = step(&inst);
        let smooth = |t: f64| {
            let x: Vec<f64> = inst.x.iter().zip(res.dx.iter()).map(|(a, b)| a + t * b).collect();
            let u = &inst.u + &res.du * t;
            let (_, c) = inst.problem.eval(&x).unwrap();
            let slack = pdip::SlackState::from_constraints(&c, &u, inst.problem.m_ineq(), inst.beta, inst.rho).unwrap();
            merit(&inst.problem, &x, &u, inst.beta, inst.rho, inst.xi).unwrap() - slack.r.norm()
        };
        let h = 1e-5;
        let central = (smooth(h) - smooth(-h)) / (2.0 * h);
        let linear = inst.xi * pi_value(&sub, &res.d, inst.xi).linear;
        let tol = 1e-5 * (1.0 + linear.abs());
        assert!((central - linear).abs() <= tol, "case {case}: central {central:e} vs model {linear:e}");
    }
}

#[test]
fn zero_residual_pi_bounded_by_curvature() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..200 {
        let inst = zero_residual_instance(&mut rng);
        let (sub, res) = step(&inst);
        assert!(sub.residual.amax() <= 1e-12, "case {case}: residual {:e}", sub.residual.amax());
        let pi = pi_value(&sub, &res.d, inst.xi).pi;
        let bound = -0.5 * inst.xi * res.curvature;
        assert!(pi <= bound + 1e-12 * (1.0 + bound.abs()), "case {case}: pi {pi:e} above {bound:e}");
    }
}

#[test]
fn zero_direction_has_zero_pi() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let inst = random_instance(&mut rng);
    let (sub, _) = step(&inst);
    let zero = DVector::zeros(sub.dim());
    assert_eq!(pi_value(&sub, &zero, inst.xi).pi, 0.0);
}
