use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pdip::report::{format_inner, format_table};
use pdip::{compare, parse_csv, solve, to_csv, to_json, NormalStepRule, ProblemRegistry, RunConfig, SolverError, TerminationKind};

const EXIT_COMPARE_FAIL: u8 = 1;
const EXIT_ITERATION_LIMIT: u8 = 2;
const EXIT_NUMERICAL_FAILURE: u8 = 3;
const EXIT_USAGE: u8 = 64;
const EXIT_FORMAT: u8 = 65;
const EXIT_IO: u8 = 74;

#[derive(Parser)]
#[command(name = "pdip", version, about = "Primal-dual interior-point solver with infeasibility detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a built-in problem and print the outer-iteration table
    Run(RunArgs),
    /// Compare a run CSV against a reference CSV
    Compare(CompareArgs),
    /// List built-in problems
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalStepArg {
    Cauchy,
    GaussNewton,
    Levenberg,
}

#[derive(Args)]
struct RunArgs {
    /// Problem identifier (tp1, tp2, tp3, tp4, qp2)
    #[arg(value_name = "PROBLEM", required_unless_present = "problem")]
    id: Option<String>,
    #[arg(long, conflicts_with = "id")]
    problem: Option<String>,
    /// Termination tolerance on beta and rho
    #[arg(long)]
    eps: Option<f64>,
    /// Initial barrier parameter
    #[arg(long)]
    beta0: Option<f64>,
    /// Budget of QP solves
    #[arg(long)]
    max_iter: Option<usize>,
    /// Also print inner iterations
    #[arg(long)]
    inner_log: bool,
    #[arg(long, value_enum)]
    normal_step: Option<NormalStepArg>,
    /// Write the iteration table as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the full report as JSON
    #[arg(long)]
    json: Option<PathBuf>,
    /// Do not print the table
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct CompareArgs {
    run: PathBuf,
    reference: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    tol_f: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol_v: f64,
}

fn error_code(err: &SolverError) -> u8 {
    match err {
        SolverError::UnknownProblem(_) | SolverError::InvalidConfig(_) => EXIT_USAGE,
        SolverError::Format(_) | SolverError::Json(_) => EXIT_FORMAT,
        SolverError::Io(_) => EXIT_IO,
        _ => EXIT_NUMERICAL_FAILURE,
    }
}

fn run(args: RunArgs) -> Result<u8, SolverError> {
    let id = args.problem.or(args.id).unwrap_or_default();
    let problem = ProblemRegistry.get(&id)?;
    let mut config = RunConfig::default();
    if let Some(eps) = args.eps {
        config.eps = eps;
    }
    if let Some(beta0) = args.beta0 {
        config.beta0 = beta0;
    }
    if let Some(max_iter) = args.max_iter {
        config.max_total_iterations = max_iter;
    }
    if let Some(rule) = args.normal_step {
        config.normal_step_rule = match rule {
            NormalStepArg::Cauchy => NormalStepRule::Cauchy,
            NormalStepArg::GaussNewton => NormalStepRule::GaussNewton,
            NormalStepArg::Levenberg => NormalStepRule::Levenberg,
        };
    }
    config.record_inner = args.inner_log;
    let report = solve(&problem, &config)?;

    if !args.quiet {
        print!("{}", format_table(&report));
        if args.inner_log {
            print!("{}", format_inner(&report.inner));
        }
    }
    if let Some(path) = &args.csv {
        std::fs::write(path, to_csv(&report))?;
    }
    if let Some(path) = &args.json {
        std::fs::write(path, to_json(&report)?)?;
    }
    Ok(match report.terminal.kind {
        TerminationKind::IterationLimit => EXIT_ITERATION_LIMIT,
        TerminationKind::NumericalFailure => EXIT_NUMERICAL_FAILURE,
        _ => 0,
    })
}

fn compare_cmd(args: CompareArgs) -> Result<u8, SolverError> {
    let run = parse_csv(&std::fs::read_to_string(&args.run)?)?;
    let reference = parse_csv(&std::fs::read_to_string(&args.reference)?)?;
    let cmp = compare(&run, &reference, args.tol_f, args.tol_v);
    print!("{}", cmp.render());
    Ok(if cmp.passed() { 0 } else { EXIT_COMPARE_FAIL })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Compare(args) => compare_cmd(args),
        Command::List => {
            for p in ProblemRegistry.all() {
                println!("{:<4} n={} inequalities={} equalities={}", p.name(), p.n(), p.m_ineq(), p.m_eq());
            }
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}
