//! Two-parameter primal-dual interior-point solver for smooth nonlinear
//! programs.
//!
//! The method drives a barrier parameter `beta` to zero to reach KKT points
//! and, when the constraints cannot be satisfied, drives a scaling parameter
//! `rho` to zero instead, which converges quickly to a stationary point of the
//! constraint violation.
//!
//! ```
//! use pdip::{solve, ProblemRegistry, RunConfig, TerminationKind};
//!
//! let problem = ProblemRegistry.get("tp1").unwrap();
//! let report = solve(&problem, &RunConfig::default()).unwrap();
//! assert_eq!(report.terminal.kind, TerminationKind::InfeasibleStationary);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bfgs;
pub mod classify;
pub mod error;
pub mod linalg;
pub mod merit;
pub mod model;
pub mod report;
pub mod slack;
pub mod solver;
pub mod subproblem;

pub use bfgs::{damped_bfgs_update, BfgsOutcome, HessianState};
pub use classify::{classify_termination, Classification, ParamTest, TerminationKind};
pub use error::{EvalTarget, Result, SolverError};
pub use merit::{dual_safeguard, line_search, merit, pi_value, update_xi, XiCaps, XiUpdate};
pub use model::{Evaluation, Problem, ProblemRegistry};
pub use report::{compare, parse_csv, rate_check, to_csv, to_json, RateTarget, RunTable};
pub use slack::{eval_phi, eval_psi, eval_slack, Params, SlackState};
pub use solver::{initial_rho, initialize, solve, InnerRecord, OuterRow, RunConfig, SolveReport, Terminal};
pub use subproblem::{build_subproblem, normal_step, solve_nullspace_qp, NormalStep, NormalStepRule, StepResult, SubproblemData};
