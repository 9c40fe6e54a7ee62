//! One solve: transcribe, warm start, optimize, certify, write artifacts.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use sepplan_core::baseline_dual::FormulationKind;
use sepplan_core::initializer::{assemble_guess, InitStrategy};
use sepplan_core::io::{save_trajectory, trajectory_from_solution, write_planes_csv};
use sepplan_core::ocp::{build, count_variables, NlpProblem, Scenario, VariableCount};
use sepplan_core::solver::{solve, Problem, SolverOptions, Status};
use sepplan_core::verification::{
    certify_trajectory, CertificationReport, CertifyOptions, Trajectory,
};

use crate::error::{io_err, Result};
use crate::{ExitStatus, REPORT_SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    /// Overrides the scenario's formulation when set.
    pub formulation: Option<FormulationKind>,
    pub init: InitStrategy,
    pub solver: SolverOptions,
    pub certify: CertifyOptions,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            formulation: None,
            init: InitStrategy::Geometry,
            solver: SolverOptions::default(),
            certify: CertifyOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub schema_version: u32,
    pub scenario: String,
    pub formulation: FormulationKind,
    pub init: InitStrategy,
    pub status: Status,
    pub certified: bool,
    pub objective: f64,
    pub t_f: f64,
    /// Control effort `sum a^2 + omega^2`, for telling local solutions apart.
    pub ts: f64,
    pub iterations: usize,
    pub inner_iterations: usize,
    /// Solver time, seconds.
    pub solve_time: f64,
    /// Transcription, solve and certification, seconds.
    pub wall_time: f64,
    pub feasibility: f64,
    pub optimality: f64,
    pub message: Option<String>,
    pub variables: VariableCount,
    pub n_eq: usize,
    pub n_ineq: usize,
    pub certification: CertificationReport,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }

    pub fn exit_status(&self) -> ExitStatus {
        if !self.converged() {
            ExitStatus::SolverFailure
        } else if !self.certified {
            ExitStatus::CertificationFailure
        } else {
            ExitStatus::Ok
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub report: SolveReport,
    pub trajectory: Trajectory,
    pub nlp: NlpProblem,
    pub z: Vec<f64>,
}

pub fn solve_scenario(scenario: &Scenario, cfg: &SolveConfig) -> Result<SolveOutcome> {
    let start = Instant::now();
    let mut s = scenario.clone();
    if let Some(f) = cfg.formulation {
        s.formulation = f;
    }
    let nlp = build(&s)?;
    let z0 = assemble_guess(&s, &nlp, cfg.init)?;
    let sol = solve(&nlp, &z0, &cfg.solver)?;
    let trajectory = trajectory_from_solution(&nlp, &sol.z);
    let certification = certify_trajectory(&trajectory, &s, &cfg.certify)?;
    log::info!(
        "{} {} {}: {} objective {:.6} in {:.2}s, certified {}",
        s.name,
        s.formulation,
        cfg.init,
        sol.status,
        sol.objective,
        sol.timing,
        certification.certified
    );
    let report = SolveReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: s.name.clone(),
        formulation: s.formulation,
        init: cfg.init,
        status: sol.status,
        certified: certification.certified,
        objective: sol.objective,
        t_f: trajectory.t_f,
        ts: trajectory.ts_metric(),
        iterations: sol.iterations,
        inner_iterations: sol.inner_iterations,
        solve_time: sol.timing,
        wall_time: start.elapsed().as_secs_f64(),
        feasibility: sol.feas_norm,
        optimality: sol.opt_norm,
        message: sol.message.clone(),
        variables: count_variables(&s)?,
        n_eq: nlp.n_eq(),
        n_ineq: nlp.n_ineq(),
        certification,
    };
    Ok(SolveOutcome {
        report,
        trajectory,
        nlp,
        z: sol.z,
    })
}

/// Artifact paths derived from an output prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub trajectory: PathBuf,
    pub planes: PathBuf,
    pub report: PathBuf,
}

impl OutputPaths {
    pub fn from_prefix(prefix: &Path) -> Self {
        let with = |suffix: &str| {
            let mut name = prefix.as_os_str().to_owned();
            name.push(suffix);
            PathBuf::from(name)
        };
        OutputPaths {
            trajectory: with("_traj.csv"),
            planes: with("_planes.csv"),
            report: with("_report.json"),
        }
    }
}

pub fn write_outputs(outcome: &SolveOutcome, prefix: &Path) -> Result<OutputPaths> {
    let paths = OutputPaths::from_prefix(prefix);
    if let Some(dir) = paths.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    save_trajectory(&outcome.trajectory, &paths.trajectory)?;
    let planes = File::create(&paths.planes).map_err(io_err(&paths.planes))?;
    write_planes_csv(&outcome.nlp, &outcome.z, planes)?;
    write_json(&paths.report, &outcome.report)?;
    Ok(paths)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

/// One-line human summary.
pub fn summary(r: &SolveReport) -> String {
    format!(
        "{} [{} / {}]: {} objective {:.6} t_f {:.3} s TS {:.6} iterations {} ({} inner) time {:.2} s certified {}",
        r.scenario,
        r.formulation,
        r.init,
        r.status,
        r.objective,
        r.t_f,
        r.ts,
        r.iterations,
        r.inner_iterations,
        r.solve_time,
        r.certified
    )
}
