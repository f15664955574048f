//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input, 2 solver failure, 3 verification
//! mismatch, 64 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::gen::{generate, Family, GenSpec};
use crate::graph::cash_accessible_set;
use crate::model::{
    check_absolute_priority, check_limited_liability, sup_distance, validate_system,
    FinancialSystem, RawSystem, ROW_SUM_TOL,
};
use crate::oracle::{
    oracle_default_sets, oracle_grid_fixed_points, FixedPointSet, DEDUP_TOL, DEFAULT_SET_MAX_NODES,
    GRID_MAX_NODES,
};
use crate::report;
use crate::solver::{
    positivity_certificate, solve, solve_bracketed, solve_clearing, solve_iterate, Method,
    SolveError, SolveOptions, SolveReport, DEFAULT_TOL,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Agreement tolerance between the solver and the oracles.
pub const VERIFY_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(
    name = "clearing",
    version,
    about = "Clearing payment vectors for liability networks"
)]
struct Cli {
    /// Emit JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Write the report to a file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check an instance file against the schema and model invariants.
    Validate { input: PathBuf },
    /// Risk orbits, regularity and the P/A/N partition.
    Analyze { input: PathBuf },
    /// Compute the clearing vector.
    Solve {
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        max_iter: Option<usize>,
        /// decompose, iterate or bracket.
        #[arg(long, default_value = "decompose")]
        method: Method,
    },
    /// Positivity certificate for the iterates from zero.
    Certify { input: PathBuf },
    /// Cross-check the solver against the brute-force oracles.
    Verify {
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long, default_value_t = 10)]
        grid_steps: usize,
        /// Shift the solver's first payment before comparing (harness use).
        #[arg(long, hide = true, allow_negative_numbers = true)]
        inject_perturbation: Option<f64>,
    },
    /// Generate a seeded instance.
    Gen {
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "random_sparse")]
        family: Family,
        #[arg(long, default_value_t = GenSpec::DEFAULT_DENSITY)]
        density: f64,
        #[arg(long, default_value_t = GenSpec::DEFAULT_CASH_FRACTION)]
        cash_fraction: f64,
    },
}

struct Failure {
    code: i32,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INVALID,
            kind: "invalid_input",
            message: message.into(),
        }
    }

    fn solver(err: SolveError) -> Self {
        Self {
            code: EXIT_SOLVER,
            kind: "solver",
            message: err.to_string(),
        }
    }
}

/// What a subcommand produced: a report and the exit code to return with it.
struct Output {
    json: Value,
    text: String,
    code: i32,
}

/// Runs the CLI with process stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            };
            let rendered = err.render().to_string();
            if code == EXIT_OK {
                let _ = write!(stdout, "{rendered}");
            } else {
                let _ = write!(stderr, "{rendered}");
            }
            return code;
        }
    };

    match dispatch(&cli.command) {
        Ok(output) => {
            let body = if cli.json {
                let mut s = serde_json::to_string_pretty(&output.json).expect("report serializes");
                s.push('\n');
                s
            } else {
                output.text
            };
            if let Err(err) = emit(&body, cli.out.as_deref(), stdout) {
                return report_failure(
                    &Failure::invalid(format!("cannot write output: {err}")),
                    cli.json,
                    stderr,
                );
            }
            output.code
        }
        Err(failure) => report_failure(&failure, cli.json, stderr),
    }
}

fn emit(body: &str, out: Option<&Path>, stdout: &mut dyn Write) -> io::Result<()> {
    match out {
        Some(path) => fs::write(path, body),
        None => stdout.write_all(body.as_bytes()),
    }
}

fn report_failure(failure: &Failure, json: bool, stderr: &mut dyn Write) -> i32 {
    if json {
        let v = json!({
            "error": failure.kind,
            "message": failure.message,
            "exit_code": failure.code,
        });
        let _ = writeln!(stderr, "{v}");
    } else {
        let _ = writeln!(stderr, "error: {}", failure.message);
    }
    failure.code
}

fn read_raw(path: &Path) -> Result<RawSystem, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::invalid(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::invalid(format!("malformed instance {}: {e}", path.display())))
}

fn load(path: &Path) -> Result<FinancialSystem, Failure> {
    let raw = read_raw(path)?;
    validate_system(&raw).map_err(|e| Failure::invalid(e.to_string()))
}

fn dispatch(command: &Command) -> Result<Output, Failure> {
    match command {
        Command::Validate { input } => {
            let raw = read_raw(input)?;
            Ok(validate_report(&raw))
        }
        Command::Analyze { input } => {
            let sys = load(input)?;
            Ok(Output {
                json: report::analysis_json(&sys),
                text: report::analysis_text(&sys),
                code: EXIT_OK,
            })
        }
        Command::Solve {
            input,
            tol,
            max_iter,
            method,
        } => {
            let sys = load(input)?;
            let opts = solve_options(*tol, *max_iter)?;
            let r = solve(&sys, *method, &opts).map_err(Failure::solver)?;
            Ok(Output {
                json: report::solve_report_json(&r),
                text: report::solve_report_text(&sys, &r),
                code: EXIT_OK,
            })
        }
        Command::Certify { input } => {
            let sys = load(input)?;
            let cert = positivity_certificate(&sys);
            let all = cash_accessible_set(&sys).len() == sys.n();
            Ok(Output {
                json: report::certificate_json(&cert, all),
                text: report::certificate_text(&cert, all),
                code: EXIT_OK,
            })
        }
        Command::Verify {
            input,
            tol,
            max_iter,
            grid_steps,
            inject_perturbation,
        } => {
            let sys = load(input)?;
            let opts = VerifyOptions {
                solve: solve_options(*tol, *max_iter)?,
                grid_steps: *grid_steps,
                perturbation: *inject_perturbation,
            };
            let v = verify(&sys, &opts).map_err(Failure::solver)?;
            Ok(Output {
                json: v.to_json(),
                text: v.to_text(),
                code: if v.pass { EXIT_OK } else { EXIT_MISMATCH },
            })
        }
        Command::Gen {
            nodes,
            seed,
            family,
            density,
            cash_fraction,
        } => {
            let spec = GenSpec {
                n: *nodes,
                seed: *seed,
                family: *family,
                density: *density,
                cash_fraction: *cash_fraction,
            };
            let sys = generate(&spec).map_err(|e| Failure::invalid(e.to_string()))?;
            // the instance file is JSON with or without --json
            let mut text = sys.to_json_string();
            text.push('\n');
            Ok(Output {
                json: serde_json::to_value(sys.to_raw()).expect("instance serializes"),
                text,
                code: EXIT_OK,
            })
        }
    }
}

fn solve_options(tol: f64, max_iter: Option<usize>) -> Result<SolveOptions, Failure> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Failure {
            code: EXIT_USAGE,
            kind: "usage",
            message: format!("--tol must be a positive number, got {tol}"),
        });
    }
    Ok(SolveOptions {
        max_iter,
        ..SolveOptions::with_tol(tol)
    })
}

fn validate_report(raw: &RawSystem) -> Output {
    match validate_system(raw) {
        Ok(sys) => {
            let deviation = raw
                .pi
                .iter()
                .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max);
            let edges: usize = (0..sys.n()).map(|i| sys.successors(i).count()).sum();
            let cash_nodes = sys.e().iter().filter(|&&x| x > 0.0).count();
            let json = json!({
                "valid": true,
                "n": sys.n(),
                "edges": edges,
                "cash_nodes": cash_nodes,
                "max_row_sum_deviation": deviation,
                "row_sum_tolerance": ROW_SUM_TOL,
            });
            let text = format!(
                "valid: {} nodes, {} liabilities, {} cash nodes, max row-sum deviation {:e}\n",
                sys.n(),
                edges,
                cash_nodes,
                deviation
            );
            Output {
                json,
                text,
                code: EXIT_OK,
            }
        }
        Err(err) => Output {
            json: json!({ "valid": false, "error": err.to_string() }),
            text: format!("invalid: {err}\n"),
            code: EXIT_INVALID,
        },
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub solve: SolveOptions,
    pub grid_steps: usize,
    /// Added to the solver's first payment before any comparison.
    pub perturbation: Option<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            grid_steps: 10,
            perturbation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub solver: SolveReport,
    pub checked_payment: Vec<f64>,
    pub default_sets: Option<FixedPointSet>,
    pub grid: Option<FixedPointSet>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl VerifyReport {
    pub fn to_json(&self) -> Value {
        json!({
            "pass": self.pass,
            "p_star": self.checked_payment,
            "solver": report::solve_report_json(&self.solver),
            "oracle_default_sets": self.default_sets.as_ref().map(report::fixed_point_set_json),
            "oracle_grid": self.grid.as_ref().map(report::fixed_point_set_json),
            "checks": self.checks.iter().map(|c| json!({
                "name": c.name,
                "pass": c.pass,
                "detail": c.detail,
            })).collect::<Vec<_>>(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "[{}] {}: {}\n",
                if c.pass { "pass" } else { "FAIL" },
                c.name,
                c.detail
            ));
        }
        s.push_str(if self.pass {
            "verification passed\n"
        } else {
            "verification FAILED\n"
        });
        s
    }
}

fn oracle_check(name: &'static str, set: &FixedPointSet, p: &[f64]) -> Check {
    if set.is_singleton {
        let d = sup_distance(&set.points[0], p);
        Check {
            name,
            pass: d <= VERIFY_TOL,
            detail: format!("unique fixed point, distance {d:e}"),
        }
    } else {
        let found = set.contains(p, VERIFY_TOL);
        Check {
            name,
            pass: found,
            detail: format!(
                "{} fixed points{}, solver output {}",
                set.points.len(),
                if set.continuum_detected {
                    " (continuum)"
                } else {
                    ""
                },
                if found {
                    "among them"
                } else {
                    "not among them"
                }
            ),
        }
    }
}

/// Runs the decomposition solver, the plain iteration and, size permitting,
/// both oracles, and compares their answers.
pub fn verify(sys: &FinancialSystem, opts: &VerifyOptions) -> Result<VerifyReport, SolveError> {
    let (solved, iterated, bracketed, default_sets, grid) = std::thread::scope(|scope| {
        let default_sets = scope.spawn(|| {
            (sys.n() <= DEFAULT_SET_MAX_NODES)
                .then(|| oracle_default_sets(sys, DEDUP_TOL).ok())
                .flatten()
        });
        let grid = scope.spawn(|| {
            (sys.n() <= GRID_MAX_NODES)
                .then(|| oracle_grid_fixed_points(sys, opts.grid_steps, DEDUP_TOL).ok())
                .flatten()
        });
        let solved = solve_clearing(sys, &opts.solve);
        let iterated = solve_iterate(sys, &opts.solve);
        let all_cash = cash_accessible_set(sys).len() == sys.n();
        let bracketed = all_cash.then(|| solve_bracketed(sys, &opts.solve));
        (
            solved,
            iterated,
            bracketed,
            default_sets.join().expect("oracle thread"),
            grid.join().expect("oracle thread"),
        )
    });
    let solver = solved?;

    let mut p = solver.p_star.as_slice().to_vec();
    if let Some(delta) = opts.perturbation {
        p[0] += delta;
    }
    let tol = 10.0 * opts.solve.tol;
    let mut checks = Vec::new();

    let ll = check_limited_liability(sys, &p, tol);
    let ap = check_absolute_priority(sys, &p, tol);
    checks.push(Check {
        name: "clearing conditions",
        pass: ll.all() && ap.all(),
        detail: format!(
            "limited liability residual {:e}, absolute priority residual {:e}",
            ll.max_violation(),
            ap.max_residual()
        ),
    });

    checks.push(match &iterated {
        Ok(r) => {
            let d = sup_distance(&r.p_star, &p);
            Check {
                name: "iteration from zero",
                pass: d <= VERIFY_TOL,
                detail: format!("distance {d:e} after {} steps", r.iterations),
            }
        }
        Err(e) => Check {
            name: "iteration from zero",
            pass: false,
            detail: e.to_string(),
        },
    });

    if let Some(b) = &bracketed {
        checks.push(match b {
            Ok(r) => {
                let d = sup_distance(&r.p_star, &p);
                Check {
                    name: "two-sided iteration",
                    pass: d <= VERIFY_TOL,
                    detail: format!(
                        "distance {d:e}, bracket gap {:e}",
                        r.bracket_gap.unwrap_or(f64::NAN)
                    ),
                }
            }
            Err(e) => Check {
                name: "two-sided iteration",
                pass: false,
                detail: e.to_string(),
            },
        });
    }
    if let Some(set) = &default_sets {
        checks.push(oracle_check("default-set oracle", set, &p));
    }
    if let Some(set) = &grid {
        checks.push(oracle_check("grid oracle", set, &p));
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport {
        solver,
        checked_payment: p,
        default_sets,
        grid,
        checks,
        pass,
    })
}
