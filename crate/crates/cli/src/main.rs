use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use sepplan::bench::{format_table, run_suite, BenchSuite};
use sepplan::count::{count, format_table as count_table, parse_formulations};
use sepplan::solve::{solve_scenario, summary, write_outputs, SolveConfig};
use sepplan::verify::{format_report, verify_files};
use sepplan::{ExitStatus, THREADS_ENV};
use sepplan_core::baseline_dual::FormulationKind;
use sepplan_core::initializer::InitStrategy;
use sepplan_core::io::load_scenario;
use sepplan_core::par::{parse_threads, with_threads, Exec};
use sepplan_core::solver::{InnerMethod, SolverOptions};
use sepplan_core::verification::CertifyOptions;

/// Trajectory planning with smooth separating and containing constraints.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Inner {
    Newton,
    Lbfgs,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write trajectory, planes and report files.
    Solve {
        scenario: PathBuf,
        /// hyperplane or dual; defaults to the scenario's own.
        #[arg(long)]
        formulation: Option<FormulationKind>,
        /// geometry or constant.
        #[arg(long, default_value = "geometry")]
        init: InitStrategy,
        /// Prefix of the written files.
        #[arg(long, default_value = "sepplan")]
        out: PathBuf,
        /// Wall-clock budget in seconds.
        #[arg(long)]
        time_limit: Option<f64>,
        #[arg(long, value_enum, default_value = "newton")]
        inner: Inner,
    },
    /// Count decision variables per formulation without solving.
    Count {
        scenario: PathBuf,
        /// `all` or a comma-separated list.
        #[arg(long, default_value = "all")]
        formulation: String,
        #[arg(long)]
        json: bool,
    },
    /// Certify a trajectory CSV against a scenario.
    Verify {
        trajectory: PathBuf,
        scenario: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run a scenario matrix and print a comparison table.
    Bench {
        suite: PathBuf,
        /// Also write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the solves one after another.
        #[arg(long)]
        sequential: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<ExitStatus> {
    match cli.command {
        Command::Solve {
            scenario,
            formulation,
            init,
            out,
            time_limit,
            inner,
        } => {
            let s = load_scenario(&scenario)
                .with_context(|| format!("loading {}", scenario.display()))?;
            let cfg = SolveConfig {
                formulation,
                init,
                solver: SolverOptions {
                    time_limit,
                    inner: match inner {
                        Inner::Newton => InnerMethod::Newton,
                        Inner::Lbfgs => InnerMethod::Lbfgs,
                    },
                    ..SolverOptions::default()
                },
                ..SolveConfig::default()
            };
            let outcome = solve_scenario(&s, &cfg)?;
            let paths = write_outputs(&outcome, &out)?;
            println!("{}", summary(&outcome.report));
            print!("{}", format_report(&outcome.report.certification));
            println!("wrote {}", paths.report.display());
            Ok(outcome.report.exit_status())
        }
        Command::Count {
            scenario,
            formulation,
            json,
        } => {
            let s = load_scenario(&scenario)
                .with_context(|| format!("loading {}", scenario.display()))?;
            let report = count(&s, &parse_formulations(&formulation)?);
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", count_table(&report));
            }
            Ok(ExitStatus::Ok)
        }
        Command::Verify {
            trajectory,
            scenario,
            json,
        } => {
            let report = verify_files(&trajectory, &scenario, &CertifyOptions::default())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", format_report(&report));
            }
            Ok(if report.certified {
                ExitStatus::Ok
            } else {
                ExitStatus::CertificationFailure
            })
        }
        Command::Bench {
            suite,
            out,
            sequential,
        } => {
            let threads = parse_threads(std::env::var(THREADS_ENV).ok().as_deref())?;
            let suite = BenchSuite::load(&suite)?;
            let exec = if sequential {
                Exec::Sequential
            } else {
                Exec::Parallel
            };
            let report = with_threads(threads, || run_suite(&suite, exec, threads))??;
            print!("{}", format_table(&report));
            if let Some(path) = out {
                let f = std::fs::File::create(&path)
                    .with_context(|| format!("creating {}", path.display()))?;
                serde_json::to_writer_pretty(f, &report)?;
            }
            Ok(ExitStatus::Ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap would exit with 2 on usage errors, which means solver failure here
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
