//! Scenario matrix runs: every listed scenario under every listed
//! formulation and init strategy, with local-solution matching.
//!
//! Suite file (JSON, paths relative to the suite file):
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "time_limit": 300,
//!   "runs": [
//!     {"scenario": "parking_single_car_1obs.json",
//!      "formulations": ["hyperplane", "dual"],
//!      "inits": ["geometry", "constant"]}
//!   ]
//! }
//! ```
//!
//! Two converged runs of one scenario are taken to reach the same local
//! solution when their objectives agree within [`SAME_SOLUTION_TOL`]; their
//! TS values are then expected to agree as well.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use sepplan_core::baseline_dual::FormulationKind;
use sepplan_core::initializer::InitStrategy;
use sepplan_core::io::load_scenario;
use sepplan_core::ocp::{count_variables_with, Scenario};
use sepplan_core::par::Exec;
use sepplan_core::solver::{SolverOptions, Status};

use crate::error::{io_err, CliError, Result};
use crate::solve::{solve_scenario, SolveConfig};
use crate::REPORT_SCHEMA_VERSION;

/// Objective agreement, relative to `max(1, |objective|)`, that marks two
/// runs as the same local solution.
pub const SAME_SOLUTION_TOL: f64 = 1e-6;
/// TS agreement, relative to `max(1, |TS|)`.
pub const TS_TOL: f64 = 1e-6;

fn default_formulations() -> Vec<FormulationKind> {
    vec![FormulationKind::Hyperplane, FormulationKind::Dual]
}

fn default_inits() -> Vec<InitStrategy> {
    vec![InitStrategy::Geometry, InitStrategy::Constant]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteRun {
    pub scenario: PathBuf,
    #[serde(default = "default_formulations")]
    pub formulations: Vec<FormulationKind>,
    #[serde(default = "default_inits")]
    pub inits: Vec<InitStrategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSuite {
    pub schema_version: u32,
    /// Per-solve wall-clock budget, seconds.
    #[serde(default)]
    pub time_limit: Option<f64>,
    pub runs: Vec<SuiteRun>,
}

impl BenchSuite {
    /// Reads a suite and resolves scenario paths against its directory.
    pub fn load(path: &Path) -> Result<BenchSuite> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut suite: BenchSuite = serde_json::from_str(&text)?;
        if suite.schema_version != REPORT_SCHEMA_VERSION {
            return Err(CliError::Suite(format!(
                "schema_version {} is not supported (expected {REPORT_SCHEMA_VERSION})",
                suite.schema_version
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for run in &mut suite.runs {
            if run.scenario.is_relative() {
                run.scenario = base.join(&run.scenario);
            }
        }
        Ok(suite)
    }
}

/// One prepared solve.
#[derive(Debug, Clone)]
pub struct BenchJob {
    pub scenario: Scenario,
    pub formulation: FormulationKind,
    pub init: InitStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: String,
    pub formulation: FormulationKind,
    pub init: InitStrategy,
    pub aux_variables: Option<usize>,
    pub total_variables: Option<usize>,
    pub status: Option<Status>,
    pub certified: bool,
    pub objective: Option<f64>,
    pub t_f: Option<f64>,
    pub ts: Option<f64>,
    pub iterations: Option<usize>,
    pub wall_time: f64,
    /// Set when the combination cannot be transcribed or the solve errors.
    pub error: Option<String>,
}

impl BenchRow {
    pub fn converged(&self) -> bool {
        self.status == Some(Status::Converged)
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.formulation, self.init)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: String,
    pub a: String,
    pub b: String,
    pub objective_diff: f64,
    pub ts_diff: f64,
    pub same_local_solution: bool,
    /// Meaningful only for the same local solution.
    pub ts_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub threads: Option<usize>,
    pub rows: Vec<BenchRow>,
    pub comparisons: Vec<Comparison>,
}

impl BenchReport {
    pub fn row(
        &self,
        scenario: &str,
        formulation: FormulationKind,
        init: InitStrategy,
    ) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.formulation == formulation && r.init == init)
    }
}

/// Expands a suite into jobs, loading each scenario once.
pub fn expand(suite: &BenchSuite) -> Result<Vec<BenchJob>> {
    let mut jobs = Vec::new();
    for run in &suite.runs {
        let s = load_scenario(&run.scenario)?;
        for &formulation in &run.formulations {
            for &init in &run.inits {
                jobs.push(BenchJob {
                    scenario: s.clone(),
                    formulation,
                    init,
                });
            }
        }
    }
    Ok(jobs)
}

pub fn run_job(job: &BenchJob, solver: &SolverOptions) -> BenchRow {
    let start = Instant::now();
    let counts = count_variables_with(&job.scenario, job.formulation).ok();
    let mut row = BenchRow {
        scenario: job.scenario.name.clone(),
        formulation: job.formulation,
        init: job.init,
        aux_variables: counts.as_ref().map(|c| c.aux),
        total_variables: counts.as_ref().map(|c| c.total),
        status: None,
        certified: false,
        objective: None,
        t_f: None,
        ts: None,
        iterations: None,
        wall_time: 0.0,
        error: None,
    };
    let cfg = SolveConfig {
        formulation: Some(job.formulation),
        init: job.init,
        solver: solver.clone(),
        ..SolveConfig::default()
    };
    match solve_scenario(&job.scenario, &cfg) {
        Ok(o) => {
            let r = o.report;
            row.status = Some(r.status);
            row.certified = r.certified;
            row.objective = Some(r.objective);
            row.t_f = Some(r.t_f);
            row.ts = Some(r.ts);
            row.iterations = Some(r.iterations);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row.wall_time = start.elapsed().as_secs_f64();
    row
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Pairwise comparisons of converged runs within each scenario.
pub fn compare(rows: &[BenchRow]) -> Vec<Comparison> {
    let mut out = Vec::new();
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            if a.scenario != b.scenario || !a.converged() || !b.converged() {
                continue;
            }
            let (Some(oa), Some(ob), Some(ta), Some(tb)) = (a.objective, b.objective, a.ts, b.ts)
            else {
                continue;
            };
            let objective_diff = rel_diff(oa, ob);
            let ts_diff = rel_diff(ta, tb);
            out.push(Comparison {
                scenario: a.scenario.clone(),
                a: a.label(),
                b: b.label(),
                objective_diff,
                ts_diff,
                same_local_solution: objective_diff <= SAME_SOLUTION_TOL,
                ts_match: ts_diff <= TS_TOL,
            });
        }
    }
    out
}

/// Runs every job; independent solves go through `exec`, each solve itself
/// single-threaded.
pub fn run_suite(suite: &BenchSuite, exec: Exec, threads: Option<usize>) -> Result<BenchReport> {
    let jobs = expand(suite)?;
    let solver = SolverOptions {
        time_limit: suite.time_limit,
        ..SolverOptions::default()
    };
    let rows = exec.map(&jobs, |job| run_job(job, &solver));
    let comparisons = compare(&rows);
    Ok(BenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        threads,
        rows,
        comparisons,
    })
}

fn opt<T: std::fmt::Display>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_else(|| "-".into())
}

pub fn format_table(r: &BenchReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<26} {:<11} {:<9} {:>6} {:>7} {:<17} {:>5} {:>12} {:>9} {:>10} {:>6} {:>9}",
        "scenario",
        "formulation",
        "init",
        "aux",
        "total",
        "status",
        "cert",
        "objective",
        "t_f",
        "TS",
        "iters",
        "time [s]"
    );
    for row in &r.rows {
        let status = match (&row.status, &row.error) {
            (Some(s), _) => s.to_string(),
            (None, Some(_)) => "error".into(),
            (None, None) => "-".into(),
        };
        let _ = writeln!(
            out,
            "{:<26} {:<11} {:<9} {:>6} {:>7} {:<17} {:>5} {:>12} {:>9} {:>10} {:>6} {:>9.2}",
            row.scenario,
            row.formulation.name(),
            row.init.to_string(),
            opt(row.aux_variables, |v| v.to_string()),
            opt(row.total_variables, |v| v.to_string()),
            status,
            if row.certified { "yes" } else { "no" },
            opt(row.objective, |v| format!("{v:.6}")),
            opt(row.t_f, |v| format!("{v:.3}")),
            opt(row.ts, |v| format!("{v:.6}")),
            opt(row.iterations, |v| v.to_string()),
            row.wall_time
        );
        if let Some(e) = &row.error {
            let _ = writeln!(out, "    {e}");
        }
    }
    if !r.comparisons.is_empty() {
        let _ = writeln!(out, "\nlocal-solution matching (converged pairs):");
        for c in &r.comparisons {
            let _ = writeln!(
                out,
                "  {:<26} {:<20} vs {:<20} objective diff {:.2e} TS diff {:.2e} -> {}",
                c.scenario,
                c.a,
                c.b,
                c.objective_diff,
                c.ts_diff,
                match (c.same_local_solution, c.ts_match) {
                    (true, true) => "same solution, TS match",
                    (true, false) => "same objective, TS MISMATCH",
                    (false, _) => "different local solutions",
                }
            );
        }
    }
    out
}
