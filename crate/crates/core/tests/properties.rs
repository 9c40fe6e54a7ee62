//! Property tests over geometry, constraints, oracles, I/O and the
//! transcription.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sepplan_core::containment::{contain_poly_in_poly, psd_cholesky};
use sepplan_core::dynamics::{deriv_jet, rk4_step, rollout};
use sepplan_core::equivalence::{boundary_samples, random_ellipse, random_polygon};
use sepplan_core::geometry::{ConvexSet, Hyperplane, Polytope, Pose};
use sepplan_core::initializer::{assemble_guess, orthogonal_plane_guess, InitStrategy};
use sepplan_core::io::{
    parse_scenario, read_trajectory_csv, scenario_to_json, write_trajectory_csv,
};
use sepplan_core::ocp::{build, count_variables, Scenario};
use sepplan_core::separation::sep_poly_poly;
use sepplan_core::solver::Problem;
use sepplan_core::verification::{
    certify_trajectory, oracle_disjoint, CertifyOptions, Trajectory, Witness, WITNESS_TOL,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn shape(seed: u64, polytope: bool, center: [f64; 2]) -> ConvexSet {
    let mut r = rng(seed);
    if polytope {
        random_polygon(&mut r, center, 1.0).into()
    } else {
        random_ellipse(&mut r, center, 1.0).into()
    }
}

fn unit(phi: f64) -> DVector<f64> {
    DVector::from_column_slice(&[phi.cos(), phi.sin()])
}

fn scenario(name: &str) -> Scenario {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"));
    sepplan_core::io::load_scenario(&path).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn support_bounds_every_boundary_point(seed in any::<u64>(), poly in any::<bool>(), phi in 0.0..std::f64::consts::TAU) {
        let set = shape(seed, poly, [0.5, -0.5]);
        let d = unit(phi);
        let h = set.support(&d);
        let best = boundary_samples(&set, 2000).iter().map(|p| d.dot(p)).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(best <= h + 1e-9);
        // dense samples come within the sampling resolution of the support value
        prop_assert!(h - best < 1e-2, "support {h} vs sampled {best}");
    }

    #[test]
    fn rigid_motion_moves_support_and_keeps_representations_consistent(
        seed in any::<u64>(), poly in any::<bool>(), x in -5.0..5.0f64, y in -5.0..5.0f64, theta in -3.2..3.2f64, phi in 0.0..6.3f64,
    ) {
        let set = shape(seed, poly, [0.0, 0.0]);
        let pose = Pose::planar(x, y, theta);
        let moved = set.transformed(&pose).unwrap();
        if let ConvexSet::Polytope(p) = &moved {
            p.check_consistency(1e-9).unwrap();
        }
        let d = unit(phi);
        let rotated = unit(phi - theta);
        let expect = set.support(&rotated) + d[0] * x + d[1] * y;
        prop_assert!((moved.support(&d) - expect).abs() < 1e-9);
    }

    #[test]
    fn separation_residuals_scale_with_the_plane(seed in any::<u64>(), alpha in 1.0..50.0f64, phi in 0.0..6.3f64, mu in -3.0..3.0f64) {
        let mut r = rng(seed);
        let a = random_polygon(&mut r, [0.0, 0.0], 1.0);
        let b = random_polygon(&mut r, [3.0, 1.0], 1.0);
        let h = Hyperplane::new(unit(phi), mu).unwrap();
        let hs = Hyperplane::new(unit(phi) * alpha, mu * alpha).unwrap();
        let r1 = sep_poly_poly(a.vertices(), b.vertices(), &h).unwrap();
        let r2 = sep_poly_poly(a.vertices(), b.vertices(), &hs).unwrap();
        // every row but the trailing norm guard is linear in (lambda, mu)
        for i in 0..r1.len() - 1 {
            prop_assert!((r2[i] - alpha * r1[i]).abs() < 1e-9 * alpha.max(1.0) * (1.0 + r1[i].abs()));
        }
    }

    #[test]
    fn feasible_separation_rows_imply_disjoint_sets(seed in any::<u64>(), phi in 0.0..6.3f64, gap in 0.0..2.0f64) {
        // polygons pushed to opposite sides of a known plane
        let mut r = rng(seed);
        let n = unit(phi);
        let a = random_polygon(&mut r, [0.0, 0.0], 1.0);
        let b = random_polygon(&mut r, [0.0, 0.0], 1.0);
        let shift_a = gap / 2.0 + a.support(&-&n);
        let shift_b = gap / 2.0 + b.support(&n);
        let a = a.transformed(&Pose::planar(n[0] * shift_a, n[1] * shift_a, 0.0)).unwrap();
        let b = b.transformed(&Pose::planar(-n[0] * shift_b, -n[1] * shift_b, 0.0)).unwrap();
        let h = Hyperplane::new(n.clone(), 0.0).unwrap();
        let rows = sep_poly_poly(a.vertices(), b.vertices(), &h).unwrap();
        prop_assert!(rows.max() <= 1e-9);
        let v = oracle_disjoint(&a.into(), &b.into(), 1e-9).unwrap();
        prop_assert!(v.disjoint);
        prop_assert!(v.signed_distance >= gap - 1e-6);
    }

    #[test]
    fn vertex_containment_covers_convex_combinations(seed in any::<u64>(), w in proptest::collection::vec(0.0..1.0f64, 8)) {
        let mut r = rng(seed);
        let outer = random_polygon(&mut r, [0.0, 0.0], 2.2);
        let inner = random_polygon(&mut r, [0.2, 0.1], 0.5);
        let rows = contain_poly_in_poly(inner.vertices(), &outer).unwrap();
        prop_assume!(rows.max() <= 0.0);
        let v = inner.vertices();
        let m = v.ncols();
        let total: f64 = w[..m].iter().sum::<f64>().max(1e-12);
        let p = (0..m).fold(DVector::zeros(2), |acc, j| acc + v.column(j) * (w[j] / total));
        prop_assert!(outer.contains(&p, 1e-9));
    }

    #[test]
    fn cholesky_reproduces_psd_matrices(entries in proptest::collection::vec(-2.0..2.0f64, 9), rank in 1usize..=3) {
        let b = DMatrix::from_column_slice(3, 3, &entries).columns(0, rank).into_owned();
        let g = &b * b.transpose();
        let y = psd_cholesky(&g).unwrap();
        prop_assert!((&y * y.transpose() - &g).amax() < 1e-8 * (1.0 + g.amax()));
    }

    #[test]
    fn cholesky_rejects_negative_eigenvalues(entries in proptest::collection::vec(-2.0..2.0f64, 9), neg in 0.1..3.0f64) {
        let q = DMatrix::from_column_slice(3, 3, &entries).qr().q();
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 2.0, -neg]));
        let g = &q * d * q.transpose();
        prop_assert!(psd_cholesky(&g).is_err());
    }

    #[test]
    fn oracle_is_symmetric_with_valid_witnesses(
        seed in any::<u64>(), p1 in any::<bool>(), p2 in any::<bool>(), cx in -3.5..3.5f64, cy in -3.5..3.5f64,
    ) {
        let a = shape(seed, p1, [0.0, 0.0]);
        let b = shape(seed.wrapping_add(1), p2, [cx, cy]);
        let ab = oracle_disjoint(&a, &b, 0.0).unwrap();
        let ba = oracle_disjoint(&b, &a, 0.0).unwrap();
        prop_assert_eq!(ab.disjoint, ba.disjoint);
        prop_assert!((ab.signed_distance - ba.signed_distance).abs() < 1e-6);
        match &ab.witness {
            Witness::Plane { lambda, mu } => {
                let l = DVector::from_column_slice(lambda);
                prop_assert!(a.support(&l) <= mu + WITNESS_TOL);
                prop_assert!(-b.support(&-&l) >= mu - WITNESS_TOL);
            }
            Witness::Point { point } => {
                let p = DVector::from_column_slice(point);
                prop_assert!(a.contains(&p, 1e-6) && b.contains(&p, 1e-6));
            }
        }
    }

    #[test]
    fn orthogonal_guess_at_half_weight_is_equidistant(seed in any::<u64>(), poly in any::<bool>(), x in -6.0..6.0f64, y in 3.0..8.0f64) {
        let obstacle = shape(seed, poly, [0.0, 0.0]);
        let sample = DVector::from_column_slice(&[x, y]);
        let h = orthogonal_plane_guess(&sample, &obstacle, 0.5).unwrap();
        let c = match &obstacle {
            ConvexSet::Polytope(p) => p.vertices().column_mean(),
            ConvexSet::Ellipsoid(e) => e.center().clone(),
        };
        let (ds, dc) = (h.eval(&sample), h.eval(&c));
        prop_assert!(ds > 0.0 && dc < 0.0);
        prop_assert!((ds + dc).abs() < 1e-9 * (1.0 + ds.abs()));
    }

    #[test]
    fn time_scaling_matches_a_stretched_step(
        xi in proptest::collection::vec(-1.0..1.0f64, 5), a in -1.0..1.0f64, w in -0.5..0.5f64, h in 0.01..0.2f64, s in 0.5..80.0f64,
    ) {
        let p = scenario("parking_single_car_1obs").model;
        let f = |x: &[f64]| Ok(deriv_jet(&p, x, &[a, w])?.f.as_slice().to_vec());
        let scaled = rk4_step(f, &xi, h, Some(s)).unwrap();
        let stretched = rk4_step(f, &xi, h * s, None).unwrap();
        for (u, v) in scaled.iter().zip(&stretched) {
            prop_assert!((u - v).abs() < 1e-10 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn rollouts_have_no_defects_and_survive_csv(seed in any::<u64>(), t_f in 20.0..60.0f64) {
        use rand::Rng;
        let s = scenario("parking_single_car_1obs");
        let mut r = rng(seed);
        let controls: Vec<[f64; 2]> = (0..s.k_f)
            .map(|_| [r.random_range(-0.1..0.1), r.random_range(-0.05..0.05)])
            .collect();
        let states = rollout(&s.model, &s.xi_init.to_vec(), &controls, s.time_step(), t_f).unwrap();
        let traj = Trajectory { t_f, states, controls };
        let rep = certify_trajectory(&traj, &s, &CertifyOptions::default()).unwrap();
        prop_assert!(rep.max_defect <= 1e-9);
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let back = read_trajectory_csv(buf.as_slice()).unwrap();
        prop_assert!((back.t_f - traj.t_f).abs() <= 1e-12 * t_f);
        let rep2 = certify_trajectory(&back, &s, &CertifyOptions::default()).unwrap();
        prop_assert_eq!(rep.certified, rep2.certified);
        prop_assert_eq!(rep.violations.len(), rep2.violations.len());
        prop_assert!((rep.max_defect - rep2.max_defect).abs() < 1e-9);
    }
}

fn assert_json_close(a: &serde_json::Value, b: &serde_json::Value, at: &str) {
    use serde_json::Value;
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!(
                (x - y).abs() <= 1e-12 * x.abs().max(1.0),
                "{at}: {x} vs {y}"
            );
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "{at}");
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                assert_json_close(u, v, &format!("{at}[{i}]"));
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(
                x.keys().collect::<Vec<_>>(),
                y.keys().collect::<Vec<_>>(),
                "{at}"
            );
            for (k, u) in x {
                assert_json_close(u, &y[k], &format!("{at}.{k}"));
            }
        }
        _ => assert_eq!(a, b, "{at}"),
    }
}

#[test]
fn scenarios_round_trip_through_json() {
    for name in [
        "parking_single_car_4obs",
        "parking_tractor_trailer",
        "overtaking_A",
    ] {
        let s = scenario(name);
        let json = scenario_to_json(&s).unwrap();
        let back = parse_scenario(&json).unwrap();
        // moving obstacle poses are re-derived from world geometry, so allow round-off
        let (a, b): (serde_json::Value, serde_json::Value) = (
            serde_json::from_str(&json).unwrap(),
            serde_json::from_str(&scenario_to_json(&back).unwrap()).unwrap(),
        );
        assert_json_close(&a, &b, name);
        assert_eq!(back.k_f, s.k_f);
        assert_eq!(back.obstacles.len(), s.obstacles.len());
    }
}

#[test]
fn guesses_are_deterministic() {
    for name in ["parking_single_car_2obs", "overtaking_B"] {
        let s = scenario(name);
        let nlp = build(&s).unwrap();
        for strategy in [InitStrategy::Geometry, InitStrategy::Constant] {
            let a = assemble_guess(&s, &nlp, strategy).unwrap();
            let b = assemble_guess(&s, &build(&s).unwrap(), strategy).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn removing_an_obstacle_shrinks_the_problem() {
    let mut s = scenario("parking_single_car_4obs");
    let mut last = build(&s).unwrap().n_vars();
    assert_eq!(last, count_variables(&s).unwrap().total);
    while !s.obstacles.is_empty() {
        s.obstacles.pop();
        let n = build(&s).unwrap().n_vars();
        assert!(n < last, "{n} !< {last}");
        last = n;
    }
}

#[test]
fn polytope_from_transformed_vertices_matches_transformed_polytope() {
    let p = Polytope::from_vertices_2d(&[[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]]).unwrap();
    let pose = Pose::planar(1.0, -2.0, 0.7);
    let moved = p.transformed(&pose).unwrap();
    moved.check_consistency(1e-12).unwrap();
    for j in 0..moved.n_vertices() {
        assert!(moved.max_violation(&moved.vertices().column(j).into_owned()) < 1e-12);
    }
}
