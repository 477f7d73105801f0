//! Run artifacts: human table, CSV and JSON writers, CSV reader, and the
//! comparison against a stored reference.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classify::TerminationKind;
use crate::error::{Result, SolverError};
use crate::solver::{InnerRecord, OuterRow, RunConfig, SolveReport};

pub const CSV_HEADER: &str = "l,f,v,phi_inf,psi_inf,beta,rho,k";
const TERMINAL_TAG: &str = "#terminal";

/// Exponent applied in the superlinear-rate check.
pub const RATE_EXPONENT: f64 = 1.3;

/// Terminal line of a CSV artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSummary {
    pub kind: TerminationKind,
    pub f: f64,
    pub v: f64,
    pub phi_inf: f64,
    pub psi_inf: f64,
}

/// Contents of a CSV artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTable {
    pub rows: Vec<OuterRow>,
    pub terminal: TerminalSummary,
}

impl RunTable {
    pub fn from_report(report: &SolveReport) -> Self {
        let t = &report.terminal;
        Self {
            rows: report.rows.clone(),
            terminal: TerminalSummary { kind: t.kind, f: t.f, v: t.v, phi_inf: t.phi_inf, psi_inf: t.psi_inf },
        }
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Full-precision CSV: one row per outer iteration plus a terminal line.
pub fn to_csv(report: &SolveReport) -> String {
    table_to_csv(&RunTable::from_report(report))
}

pub fn table_to_csv(table: &RunTable) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &table.rows {
        let k = r.k.map(|k| k.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.l,
            num(r.f),
            num(r.v),
            num(r.phi_inf),
            num(r.psi_inf),
            opt_num(r.beta),
            opt_num(r.rho),
            k
        );
    }
    let t = &table.terminal;
    let _ = writeln!(out, "{TERMINAL_TAG},{},{},{},{},{}", t.kind, num(t.f), num(t.v), num(t.phi_inf), num(t.psi_inf));
    out
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| SolverError::Format(format!("line {line}: bad number '{field}'")))
}

fn parse_opt<T: std::str::FromStr>(field: &str, line: usize) -> Result<Option<T>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field.parse::<T>().map(Some).map_err(|_| SolverError::Format(format!("line {line}: bad value '{field}'")))
}

/// Parse a CSV artifact written by [`to_csv`].
pub fn parse_csv(text: &str) -> Result<RunTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(SolverError::Format("empty CSV".into()));
    };
    if header.trim() != CSV_HEADER {
        return Err(SolverError::Format(format!("unexpected header '{}'", header.trim())));
    }
    let mut rows = Vec::new();
    let mut terminal = None;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if terminal.is_some() {
            return Err(SolverError::Format(format!("line {lineno}: data after terminal line")));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields[0] == TERMINAL_TAG {
            if fields.len() != 6 {
                return Err(SolverError::Format(format!("line {lineno}: terminal line needs 6 fields")));
            }
            let kind = fields[1].parse::<TerminationKind>().map_err(|e| SolverError::Format(format!("line {lineno}: {e}")))?;
            terminal = Some(TerminalSummary {
                kind,
                f: parse_f64(fields[2], lineno)?,
                v: parse_f64(fields[3], lineno)?,
                phi_inf: parse_f64(fields[4], lineno)?,
                psi_inf: parse_f64(fields[5], lineno)?,
            });
            continue;
        }
        if fields.len() != 8 {
            return Err(SolverError::Format(format!("line {lineno}: expected 8 fields, found {}", fields.len())));
        }
        rows.push(OuterRow {
            l: fields[0].trim().parse().map_err(|_| SolverError::Format(format!("line {lineno}: bad index '{}'", fields[0])))?,
            f: parse_f64(fields[1], lineno)?,
            v: parse_f64(fields[2], lineno)?,
            phi_inf: parse_f64(fields[3], lineno)?,
            psi_inf: parse_f64(fields[4], lineno)?,
            beta: parse_opt(fields[5], lineno)?,
            rho: parse_opt(fields[6], lineno)?,
            k: parse_opt(fields[7], lineno)?,
        });
    }
    let terminal = terminal.ok_or_else(|| SolverError::Format("missing terminal line".into()))?;
    if rows.is_empty() {
        return Err(SolverError::Format("no iteration rows".into()));
    }
    Ok(RunTable { rows, terminal })
}

/// JSON artifact layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonArtifact {
    pub problem: String,
    pub config: RunConfig,
    pub rows: Vec<OuterRow>,
    pub terminal: JsonTerminal,
    /// Inner-iteration diagnostics, present when they were recorded.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inner: Vec<InnerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonTerminal {
    pub kind: TerminationKind,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub f: f64,
    pub v: f64,
    pub phi_inf: f64,
    pub psi_inf: f64,
}

pub fn to_json_artifact(report: &SolveReport) -> JsonArtifact {
    let t = &report.terminal;
    JsonArtifact {
        problem: report.problem.clone(),
        config: report.config.clone(),
        rows: report.rows.clone(),
        terminal: JsonTerminal { kind: t.kind, x: t.x.clone(), u: t.u.clone(), f: t.f, v: t.v, phi_inf: t.phi_inf, psi_inf: t.psi_inf },
        inner: report.inner.clone(),
    }
}

pub fn to_json(report: &SolveReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(&to_json_artifact(report))?)
}

/// Four significant decimals, switching to exponent form for very small or large values.
pub fn short(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let a = x.abs();
    if (1e-3..1e4).contains(&a) {
        return format!("{x:.4}");
    }
    let s = format!("{x:.4e}");
    let (mantissa, exp) = s.split_once('e').unwrap_or((&s, "0"));
    let e: i32 = exp.parse().unwrap_or(0);
    format!("{mantissa}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
}

fn opt_short<T, F: Fn(T) -> String>(x: Option<T>, f: F) -> String {
    x.map(f).unwrap_or_else(|| "-".into())
}

/// Outer-iteration table in the style of a printed results table.
pub fn format_table(report: &SolveReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "problem {}", report.problem);
    let _ =
        writeln!(out, "{:>3} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>4}", "l", "f", "v", "|phi|inf", "|psi|inf", "beta", "rho", "k");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:>3} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>4}",
            r.l,
            short(r.f),
            short(r.v),
            short(r.phi_inf),
            short(r.psi_inf),
            opt_short(r.beta, short),
            opt_short(r.rho, short),
            opt_short(r.k, |k| k.to_string())
        );
    }
    let t = &report.terminal;
    let xs: Vec<String> = t.x.iter().map(|v| short(*v)).collect();
    let _ = writeln!(out, "terminal {} at x = ({}) after {} QP solves", t.kind, xs.join(", "), report.total_iterations);
    if let Some(msg) = &t.failure {
        let _ = writeln!(out, "failure: {msg}");
    }
    out
}

/// Inner iterations of one outer loop, with iterate components.
pub fn format_inner(records: &[InnerRecord]) -> String {
    let mut out = String::new();
    let mut current = None;
    for r in records {
        if current != Some(r.l) {
            current = Some(r.l);
            let _ = writeln!(out, "inner iterations for l={} (beta={}, rho={})", r.l, short(r.beta), short(r.rho));
            let _ = writeln!(out, "{:>4} {:>12} {:>12} {:>12} {:>12}  x", "k", "f", "v", "|phi|inf", "|psi|inf");
        }
        let xs: Vec<String> = r.x.iter().map(|v| short(*v)).collect();
        let _ = writeln!(
            out,
            "{:>4} {:>12} {:>12} {:>12} {:>12}  {}",
            r.k,
            short(r.f),
            short(r.v),
            short(r.phi_inf),
            short(r.psi_inf),
            xs.join(" ")
        );
    }
    out
}

/// Which residual and which parameter a rate check follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateTarget {
    /// `||phi||_inf` across `beta` reductions.
    PhiOverBeta,
    /// `||psi||_inf` across `rho` reductions.
    PsiOverRho,
}

impl RateTarget {
    pub fn for_kind(kind: TerminationKind) -> Option<Self> {
        match kind {
            TerminationKind::Kkt => Some(RateTarget::PhiOverBeta),
            TerminationKind::InfeasibleStationary => Some(RateTarget::PsiOverRho),
            _ => None,
        }
    }
}

/// Outcome of a superlinear-rate check over the last two parameter reductions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    pub target: RateTarget,
    /// Rows `(j1, j2)` carrying the last two reductions.
    pub rows: Option<(usize, usize)>,
    /// Residuals at rows `j1 - 1`, `j1`, `j2`.
    pub chain: Option<[f64; 3]>,
    pub passed: bool,
}

/// Check `m_{j1} <= m_{j1-1}^p` and `m_{j2} <= m_{j1}^p` where `j1 < j2` are the
/// last two rows whose parameter dropped below the previous row's.
pub fn rate_check(rows: &[OuterRow], target: RateTarget, exponent: f64) -> RateCheck {
    let param = |r: &OuterRow| match target {
        RateTarget::PhiOverBeta => r.beta,
        RateTarget::PsiOverRho => r.rho,
    };
    let measure = |r: &OuterRow| match target {
        RateTarget::PhiOverBeta => r.phi_inf,
        RateTarget::PsiOverRho => r.psi_inf,
    };
    let reductions: Vec<usize> =
        (1..rows.len()).filter(|&j| matches!((param(&rows[j - 1]), param(&rows[j])), (Some(a), Some(b)) if b < a)).collect();
    if reductions.len() < 2 {
        return RateCheck { target, rows: None, chain: None, passed: false };
    }
    let j2 = reductions[reductions.len() - 1];
    let j1 = reductions[reductions.len() - 2];
    let chain = [measure(&rows[j1 - 1]), measure(&rows[j1]), measure(&rows[j2])];
    let passed = chain[1] <= chain[0].powf(exponent) && chain[2] <= chain[1].powf(exponent);
    RateCheck { target, rows: Some((j1, j2)), chain: Some(chain), passed }
}

/// One compared quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDiff {
    pub field: &'static str,
    pub run: String,
    pub reference: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub fields: Vec<FieldDiff>,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.fields.iter().all(|f| f.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for f in &self.fields {
            let _ = writeln!(out, "{:<6} {:<5} run={} reference={}", f.field, if f.passed { "ok" } else { "FAIL" }, f.run, f.reference);
        }
        let _ = writeln!(out, "{}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }
}

/// Compare a run against a reference on terminal kind, `f`, `v` and the rate check.
pub fn compare(run: &RunTable, reference: &RunTable, tol_f: f64, tol_v: f64) -> Comparison {
    let (a, b) = (&run.terminal, &reference.terminal);
    let mut fields = vec![
        FieldDiff { field: "kind", run: a.kind.to_string(), reference: b.kind.to_string(), passed: a.kind == b.kind },
        FieldDiff { field: "f", run: num(a.f), reference: num(b.f), passed: (a.f - b.f).abs() <= tol_f },
        FieldDiff { field: "v", run: num(a.v), reference: num(b.v), passed: (a.v - b.v).abs() <= tol_v },
    ];
    if let Some(target) = RateTarget::for_kind(b.kind) {
        let ours = rate_check(&run.rows, target, RATE_EXPONENT);
        let theirs = rate_check(&reference.rows, target, RATE_EXPONENT);
        let show = |c: &RateCheck| match c.chain {
            Some(ch) => format!("{}:{:.3e}>{:.3e}>{:.3e}", if c.passed { "pass" } else { "fail" }, ch[0], ch[1], ch[2]),
            None => "n/a".into(),
        };
        fields.push(FieldDiff { field: "rate", run: show(&ours), reference: show(&theirs), passed: ours.passed || !theirs.passed });
    }
    Comparison { fields }
}
