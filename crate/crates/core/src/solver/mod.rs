//! The clearing operator and the solvers built on it.
//!
//! `apply_phi` maps `p` to `(p * pi + e) min p_bar`. It is increasing and
//! concave on `[0, p_bar]`, and because every floating point step involved is
//! a sum or product of nonnegative numbers followed by a `min`, the computed
//! operator is increasing too. Iterates from `0` therefore rise and iterates
//! from `p_bar` fall exactly, not just up to rounding.

mod certificate;

pub use certificate::{positivity_certificate, PositivityCertificate};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::graph::{partition_pan, restrict, GraphError, NodePartition};
use crate::model::{
    check_absolute_priority, check_limited_liability, inflow, sup_distance, FinancialSystem,
    PaymentVector,
};

pub const DEFAULT_TOL: f64 = 1e-12;

/// `100 n + 1000`.
pub fn default_max_iter(n: usize) -> usize {
    100 * n + 1000
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("iteration did not converge within {iterations} steps (last step {last_step:e})")]
    NonConvergence { iterations: usize, last_step: f64 },
    #[error(
        "bracket gap {gap:e} still above tolerance after {iterations} steps{}",
        if *.stagnated { " and no longer shrinking" } else { "" }
    )]
    BracketGap {
        gap: f64,
        iterations: usize,
        stagnated: bool,
    },
    #[error("restriction failed: {0}")]
    Restriction(#[from] GraphError),
    #[error("internal solver failure: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Decomposition into P/A/N, bracketed iteration on P.
    #[default]
    Decompose,
    /// Plain iteration from zero on the whole system.
    Iterate,
    /// Two-sided iteration from zero and from `p_bar` on the whole system.
    Bracket,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Decompose => "decompose",
            Method::Iterate => "iterate",
            Method::Bracket => "bracket",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "decompose" => Ok(Method::Decompose),
            "iterate" => Ok(Method::Iterate),
            "bracket" => Ok(Method::Bracket),
            other => Err(format!(
                "unknown method `{other}` (expected decompose, iterate or bracket)"
            )),
        }
    }
}

/// How much of an iteration to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceMode {
    /// Only the last two iterates of each sequence.
    #[default]
    LastTwo,
    /// Every iterate, starting with the initial vector.
    Full,
}

/// Iterates of one or two sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    /// `Phi^k start` for the single-sequence iteration, `Phi^k 0` when bracketing.
    pub iterates: Vec<PaymentVector>,
    /// `Phi^k p_bar`, present when bracketing.
    pub upper_iterates: Option<Vec<PaymentVector>>,
    /// Successive-iterate distances for a single sequence, bracket gaps
    /// `|Phi^k p_bar - Phi^k 0|_inf` when bracketing.
    pub sup_norm_gaps: Vec<f64>,
    pub converged: bool,
    /// Number of applications of the operator to each sequence.
    pub iterations_used: usize,
}

impl IterationTrace {
    pub fn last(&self) -> &PaymentVector {
        self.iterates.last().expect("trace holds the start vector")
    }

    pub fn last_upper(&self) -> Option<&PaymentVector> {
        self.upper_iterates.as_ref().and_then(|v| v.last())
    }
}

fn push_iterate(seq: &mut Vec<PaymentVector>, p: PaymentVector, mode: TraceMode) {
    if mode == TraceMode::LastTwo && seq.len() == 2 {
        seq.remove(0);
    }
    seq.push(p);
}

/// `(p * pi + e) min p_bar`.
pub fn apply_phi(sys: &FinancialSystem, p: &[f64]) -> PaymentVector {
    let mut x = inflow(sys, p);
    for (xj, &bar) in x.iter_mut().zip(sys.p_bar()) {
        *xj = xj.min(bar);
    }
    PaymentVector::from(x)
}

/// Iterates the operator from `start` until two successive iterates are within
/// `tol` in sup norm, or `max_iter` applications have been made.
pub fn iterate_phi(
    sys: &FinancialSystem,
    start: &[f64],
    tol: f64,
    max_iter: usize,
    mode: TraceMode,
) -> IterationTrace {
    let mut current = PaymentVector::from(start.to_vec());
    let mut iterates = vec![current.clone()];
    let mut steps = Vec::new();
    let mut converged = false;
    let mut used = 0;
    while used < max_iter {
        let next = apply_phi(sys, &current);
        used += 1;
        let step = next.sup_distance(&current);
        if mode == TraceMode::Full {
            steps.push(step);
        } else {
            steps = vec![step];
        }
        push_iterate(&mut iterates, next.clone(), mode);
        current = next;
        if step <= tol {
            converged = true;
            break;
        }
    }
    IterationTrace {
        iterates,
        upper_iterates: None,
        sup_norm_gaps: steps,
        converged,
        iterations_used: used,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    /// `None` means [`default_max_iter`] of the system being iterated.
    pub max_iter: Option<usize>,
    pub trace: TraceMode,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: None,
            trace: TraceMode::LastTwo,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    fn max_iter_for(&self, n: usize) -> usize {
        self.max_iter.unwrap_or_else(|| default_max_iter(n))
    }
}

/// Result of a solve, in parent-system node labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub p_star: PaymentVector,
    pub method: Method,
    pub iterations: usize,
    /// Largest limited liability violation of `p_star`.
    pub residual_ll: f64,
    /// Largest absolute priority residual of `p_star`.
    pub residual_ap: f64,
    /// `|phi(p_star) - p_star|_inf`.
    pub fixed_point_residual: f64,
    pub bracket_gap: Option<f64>,
    pub partition: NodePartition,
    pub trace: Option<IterationTrace>,
}

fn finish_report(
    sys: &FinancialSystem,
    p_star: PaymentVector,
    method: Method,
    iterations: usize,
    bracket_gap: Option<f64>,
    partition: NodePartition,
    trace: Option<IterationTrace>,
) -> SolveReport {
    let residual_ll = check_limited_liability(sys, &p_star, 0.0).max_violation();
    let residual_ap = check_absolute_priority(sys, &p_star, 0.0).max_residual();
    let fixed_point_residual = apply_phi(sys, &p_star).sup_distance(&p_star);
    SolveReport {
        p_star,
        method,
        iterations,
        residual_ll,
        residual_ap,
        fixed_point_residual,
        bracket_gap,
        partition,
        trace,
    }
}

/// Raw outcome of a two-sided iteration.
struct Bracket {
    midpoint: Vec<f64>,
    gap: f64,
    trace: IterationTrace,
}

fn run_bracket(sys: &FinancialSystem, opts: &SolveOptions) -> Result<Bracket, SolveError> {
    let n = sys.n();
    let max_iter = opts.max_iter_for(n);
    let mut lower = PaymentVector::zeros(n);
    let mut upper = PaymentVector::from(sys.p_bar().to_vec());
    let mut lowers = vec![lower.clone()];
    let mut uppers = vec![upper.clone()];
    let mut gap = upper.sup_distance(&lower);
    let mut gaps = vec![gap];
    let mut used = 0;
    let mut stagnated = false;

    while gap > opts.tol && used < max_iter {
        let next_lower = apply_phi(sys, &lower);
        let next_upper = apply_phi(sys, &upper);
        used += 1;
        if next_lower == lower && next_upper == upper {
            stagnated = true;
            break;
        }
        lower = next_lower;
        upper = next_upper;
        gap = upper.sup_distance(&lower);
        if opts.trace == TraceMode::Full {
            gaps.push(gap);
        } else {
            gaps = vec![gap];
        }
        push_iterate(&mut lowers, lower.clone(), opts.trace);
        push_iterate(&mut uppers, upper.clone(), opts.trace);
    }

    if gap > opts.tol {
        return Err(SolveError::BracketGap {
            gap,
            iterations: used,
            stagnated,
        });
    }
    let midpoint = lower
        .iter()
        .zip(upper.iter())
        .map(|(lo, hi)| lo + (hi - lo) / 2.0)
        .collect();
    Ok(Bracket {
        midpoint,
        gap,
        trace: IterationTrace {
            iterates: lowers,
            upper_iterates: Some(uppers),
            sup_norm_gaps: gaps,
            converged: true,
            iterations_used: used,
        },
    })
}

/// Iterates from `0` and from `p_bar` together until the bracket closes to
/// within `tol`, and reports its midpoint.
///
/// When every node is cash accessible both sequences converge to the unique
/// clearing vector. Otherwise the bracket may stall above `tol`, which is
/// reported as [`SolveError::BracketGap`].
pub fn solve_bracketed(
    sys: &FinancialSystem,
    opts: &SolveOptions,
) -> Result<SolveReport, SolveError> {
    let bracket = run_bracket(sys, opts)?;
    Ok(finish_report(
        sys,
        PaymentVector::from(bracket.midpoint),
        Method::Bracket,
        bracket.trace.iterations_used,
        Some(bracket.gap),
        partition_pan(sys),
        Some(bracket.trace),
    ))
}

/// Iterates from `0` on the whole system.
pub fn solve_iterate(
    sys: &FinancialSystem,
    opts: &SolveOptions,
) -> Result<SolveReport, SolveError> {
    let trace = iterate_phi(
        sys,
        &vec![0.0; sys.n()],
        opts.tol,
        opts.max_iter_for(sys.n()),
        opts.trace,
    );
    if !trace.converged {
        return Err(SolveError::NonConvergence {
            iterations: trace.iterations_used,
            last_step: trace.sup_norm_gaps.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok(finish_report(
        sys,
        trace.last().clone(),
        Method::Iterate,
        trace.iterations_used,
        None,
        partition_pan(sys),
        Some(trace),
    ))
}

/// The clearing vector of any valid system.
///
/// Nodes that can reach cash only by passing through cashless nodes (A) pay
/// nothing, since any mass they pass on drains into the cash-accessible block
/// and never returns. Nodes that cannot reach cash at all (N) pay nothing by
/// convention. The cash-accessible block (P) is absorbing, so it is solved as
/// a standalone system by bracketed iteration and scattered back.
///
/// The result is checked against both clearing conditions at `10 * tol` and
/// for strict positivity on P; a failure there is an internal error. If the
/// iteration budget runs out first, [`SolveError::BracketGap`] is returned.
pub fn solve_clearing(
    sys: &FinancialSystem,
    opts: &SolveOptions,
) -> Result<SolveReport, SolveError> {
    let partition = partition_pan(sys);
    let n = sys.n();

    let (p_star, iterations, gap, trace) = if partition.p_set.is_empty() {
        if sys.e().iter().any(|&x| x > 0.0) {
            return Err(SolveError::Internal(
                "cash nodes present but the cash accessible set is empty".into(),
            ));
        }
        (vec![0.0; n], 0, None, None)
    } else {
        let sub = restrict(sys, &partition.p_set)?;
        // running out of iterations is reported as is; a stalled bracket on
        // the cash accessible block cannot happen for a valid system
        let bracket = run_bracket(&sub.system, opts).map_err(|err| match err {
            SolveError::BracketGap {
                stagnated: true, ..
            } => SolveError::Internal(format!("cash accessible block failed to clear: {err}")),
            other => other,
        })?;
        if let Some(k) = bracket.midpoint.iter().position(|&v| v <= 0.0) {
            return Err(SolveError::Internal(format!(
                "payment of cash accessible node {} is not strictly positive",
                sub.nodes[k]
            )));
        }
        let p = sub.scatter(&bracket.midpoint, n);
        let iterations = bracket.trace.iterations_used;
        (p, iterations, Some(bracket.gap), Some(bracket.trace))
    };

    let report = finish_report(
        sys,
        PaymentVector::from(p_star),
        Method::Decompose,
        iterations,
        gap,
        partition,
        trace,
    );
    let allowed = 10.0 * opts.tol;
    if report.residual_ll > allowed
        || report.residual_ap > allowed
        || report.fixed_point_residual > allowed
    {
        return Err(SolveError::Internal(format!(
            "clearing conditions violated: limited liability {:e}, absolute priority {:e}, fixed point {:e}",
            report.residual_ll, report.residual_ap, report.fixed_point_residual
        )));
    }
    Ok(report)
}

pub fn solve(
    sys: &FinancialSystem,
    method: Method,
    opts: &SolveOptions,
) -> Result<SolveReport, SolveError> {
    match method {
        Method::Decompose => solve_clearing(sys, opts),
        Method::Iterate => solve_iterate(sys, opts),
        Method::Bracket => solve_bracketed(sys, opts),
    }
}

/// `e + e pi + ... + e pi^(k-1) + p pi^k`.
///
/// For `p` satisfying limited liability the result dominates `p`. At nodes
/// that reach cash only through cashless nodes the entries shrink to zero as
/// `k` grows.
pub fn iterated_liability_bound(sys: &FinancialSystem, p: &[f64], k: usize) -> Vec<f64> {
    let n = sys.n();
    let times_pi = |v: &[f64]| {
        let mut out = vec![0.0; n];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(sys.row(i)) {
                *o += vi * w;
            }
        }
        out
    };
    let mut total = vec![0.0; n];
    let mut cash = sys.e().to_vec();
    let mut carried = p.to_vec();
    for _ in 0..k {
        for (t, c) in total.iter_mut().zip(&cash) {
            *t += c;
        }
        cash = times_pi(&cash);
        carried = times_pi(&carried);
    }
    for (t, c) in total.iter_mut().zip(&carried) {
        *t += c;
    }
    total
}

/// Componentwise `a <= b`.
pub fn dominated(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

pub fn sup_norm(v: &[f64]) -> f64 {
    sup_distance(v, &vec![0.0; v.len()])
}
