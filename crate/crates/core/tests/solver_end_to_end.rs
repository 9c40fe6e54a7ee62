//! End-to-end behaviour of the solver on the one-obstacle parking case.

use std::sync::OnceLock;

use sepplan_core::initializer::{assemble_guess, InitStrategy};
use sepplan_core::io::{load_scenario, trajectory_from_solution};
use sepplan_core::ocp::{build, NlpProblem, Scenario};
use sepplan_core::solver::{solve, Problem, Solution, SolverOptions, Status};
use sepplan_core::verification::{certify_trajectory, CertifyOptions};

struct Run {
    scenario: Scenario,
    nlp: NlpProblem,
    guess: Vec<f64>,
    sol: Solution,
}

fn run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../scenarios/parking_single_car_1obs.json");
        let scenario = load_scenario(&path).unwrap();
        let nlp = build(&scenario).unwrap();
        let guess = assemble_guess(&scenario, &nlp, InitStrategy::Geometry).unwrap();
        let sol = solve(&nlp, &guess, &SolverOptions::default()).unwrap();
        Run {
            scenario,
            nlp,
            guess,
            sol,
        }
    })
}

#[test]
fn converges_to_a_certified_trajectory() {
    let r = run();
    assert_eq!(r.sol.status, Status::Converged, "{:?}", r.sol.message);
    let traj = trajectory_from_solution(&r.nlp, &r.sol.z);
    let rep = certify_trajectory(&traj, &r.scenario, &CertifyOptions::default()).unwrap();
    assert!(rep.certified, "{:?}", rep.violations);
    assert!(rep.max_defect <= 1e-6);
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let r = run();
    let again = solve(&r.nlp, &r.guess, &SolverOptions::default()).unwrap();
    assert_eq!(again.z, r.sol.z);
    assert_eq!(again.iterations, r.sol.iterations);
    assert_eq!(again.objective.to_bits(), r.sol.objective.to_bits());
}

#[test]
fn infeasibility_trends_down_across_outer_iterations() {
    let h = &run().sol.history;
    assert!(h.len() >= 3);
    let half = h.len() / 2;
    let early = h[..half].iter().map(|r| r.feasibility).fold(0.0, f64::max);
    let late = h[half..].iter().map(|r| r.feasibility).fold(0.0, f64::max);
    assert!(late <= early, "late {late:e} vs early {early:e}");
    assert!(h.last().unwrap().feasibility <= SolverOptions::default().tol_feas);
}

#[test]
fn kkt_complementarity_is_small() {
    let r = run();
    let opts = SolverOptions::default();
    assert!(
        r.sol.comp_norm <= 10.0 * opts.tol_opt,
        "{:e}",
        r.sol.comp_norm
    );
    // recompute from the returned multipliers, with the solver's scaling of
    // large multipliers
    let mut eq = vec![0.0; r.nlp.n_eq()];
    let mut g = vec![0.0; r.nlp.n_ineq()];
    r.nlp.constraints(&r.sol.z, &mut eq, &mut g, None).unwrap();
    let w = &r.sol.ineq_multipliers;
    assert_eq!(g.len(), w.len());
    assert!(w.iter().all(|&wi| wi >= 0.0));
    let scale = (w.iter().sum::<f64>() / w.len().max(1) as f64).max(100.0) / 100.0;
    let worst = g
        .iter()
        .zip(w)
        .map(|(gi, wi)| (gi * wi).abs())
        .fold(0.0, f64::max)
        / scale;
    assert!(worst <= 10.0 * opts.tol_opt, "{worst:e}");
}
