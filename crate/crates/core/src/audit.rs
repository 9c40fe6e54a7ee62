//! Finite-difference audit of every constraint family at random points.
//!
//! Each block is treated as a function of its aux variables and of the
//! planar poses `(x, y, yaw)` of its operands, and every analytic
//! derivative column is compared with a central difference. Deviations are
//! reported per family as `|an - fd| / max(1, |an|, |fd|)`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baseline_dual;
use crate::containment::{self, Body, Canvas, ContainmentKind};
use crate::dynamics::{rk4_step_jet, VehicleModelParams};
use crate::error::{Error, Result};
use crate::geometry::{Ellipsoid, PlacedEllipsoid, PlacedPoint, PlacedPolytope, Polytope, Pose};
use crate::par::Exec;
use crate::residual::BlockEval;
use crate::separation::{self, Operand, SeparationKind};
use crate::solver::DerivReport;

/// Central-difference step.
pub const AUDIT_STEP: f64 = 1e-6;

type Pose3 = [f64; 3];

/// Compares the derivative columns of `f` (one or more row blocks) with
/// central differences in the aux vector and both poses. Columns are
/// numbered aux first, then the three tangents of each operand.
fn audit_block<F>(family: &str, aux: &[f64], p1: Pose3, p2: Pose3, f: F) -> Result<DerivReport>
where
    F: Fn(&[f64], Pose3, Pose3) -> Result<Vec<BlockEval>>,
{
    let h = AUDIT_STEP;
    let base = f(aux, p1, p2)?;
    let mut report = DerivReport::default();
    let mut check =
        |part: usize, col: usize, an: &dyn Fn(usize) -> f64, lo: &[BlockEval], hi: &[BlockEval]| {
            let fd = (&hi[part].values - &lo[part].values) / (2.0 * h);
            for r in 0..fd.len() {
                report.record(format!("{family}[{part},{r}]"), col, an(r), fd[r]);
            }
        };
    for (part, ev) in base.iter().enumerate() {
        for a in 0..aux.len() {
            let (mut lo, mut hi) = (aux.to_vec(), aux.to_vec());
            lo[a] -= h;
            hi[a] += h;
            let (lo, hi) = (f(&lo, p1, p2)?, f(&hi, p1, p2)?);
            check(part, a, &|r| ev.d_aux[(r, a)], &lo, &hi);
        }
        for t in 0..ev.d_first.ncols() {
            let (mut lo, mut hi) = (p1, p1);
            lo[t] -= h;
            hi[t] += h;
            let (lo, hi) = (f(aux, lo, p2)?, f(aux, hi, p2)?);
            check(part, aux.len() + t, &|r| ev.d_first[(r, t)], &lo, &hi);
        }
        for t in 0..ev.d_second.ncols() {
            let (mut lo, mut hi) = (p2, p2);
            lo[t] -= h;
            hi[t] += h;
            let (lo, hi) = (f(aux, p1, lo)?, f(aux, p1, hi)?);
            check(part, aux.len() + 3 + t, &|r| ev.d_second[(r, t)], &lo, &hi);
        }
    }
    Ok(report)
}

fn random_rectangle(rng: &mut ChaCha8Rng) -> Polytope {
    let w: f64 = rng.random_range(0.5..3.0);
    let h: f64 = rng.random_range(0.5..2.0);
    let shift: f64 = rng.random_range(-0.5..0.5);
    Polytope::rectangle(-w + shift, 0.5 * w + shift, -h, h).expect("rectangle sides are positive")
}

fn random_ellipse(rng: &mut ChaCha8Rng) -> Ellipsoid {
    let axes = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
    let center = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
    Ellipsoid::axis_aligned(&center, &axes)
        .and_then(|e| e.transformed(&Pose::planar(0.0, 0.0, rng.random_range(0.0..3.0))))
        .expect("semi-axes are positive")
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose3 {
    [
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
    ]
}

fn rng_for(seed: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Clone)]
enum Local {
    Point,
    Poly(Polytope),
    Ell(Ellipsoid),
}

enum Placed {
    Point(PlacedPoint),
    Poly(PlacedPolytope),
    Ell(PlacedEllipsoid),
}

impl Local {
    fn place(&self, p: Pose3) -> Placed {
        match self {
            Local::Point => Placed::Point(PlacedPoint::free(DVector::from_column_slice(&p[..2]))),
            Local::Poly(q) => Placed::Poly(PlacedPolytope::planar(q, p[0], p[1], p[2])),
            Local::Ell(e) => Placed::Ell(PlacedEllipsoid::planar(e, p[0], p[1], p[2])),
        }
    }
}

impl Placed {
    fn operand(&self) -> Operand<'_> {
        match self {
            Placed::Point(p) => Operand::Point(p),
            Placed::Poly(p) => Operand::Poly(p),
            Placed::Ell(e) => Operand::Ell(e),
        }
    }
}

fn separation_point(kind: SeparationKind, rng: &mut ChaCha8Rng) -> Result<DerivReport> {
    use SeparationKind::*;
    let (s1, s2) = match kind {
        EllEll => (
            Local::Ell(random_ellipse(rng)),
            Local::Ell(random_ellipse(rng)),
        ),
        PolyEll => (
            Local::Poly(random_rectangle(rng)),
            Local::Ell(random_ellipse(rng)),
        ),
        PointPoly | PointPolyReduced => (Local::Point, Local::Poly(random_rectangle(rng))),
        PolyPoly | PolyPolyNormalized | PolyPolyFixedComponent => (
            Local::Poly(random_rectangle(rng)),
            Local::Poly(random_rectangle(rng)),
        ),
    };
    let (p1, p2) = (random_pose(rng), random_pose(rng));
    let aux: Vec<f64> = (0..kind.aux_count(2))
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    audit_block(
        &format!("sep_{}", kind.name()),
        &aux,
        p1,
        p2,
        |aux, p1, p2| {
            let (a, b) = (s1.place(p1), s2.place(p2));
            Ok(vec![separation::evaluate(
                kind,
                a.operand(),
                b.operand(),
                aux,
            )?])
        },
    )
}

fn containment_point(kind: ContainmentKind, rng: &mut ChaCha8Rng) -> Result<DerivReport> {
    let body_poly = matches!(
        kind,
        ContainmentKind::PolyInPoly | ContainmentKind::PolyInEll
    );
    let canvas_poly = matches!(
        kind,
        ContainmentKind::PolyInPoly | ContainmentKind::EllInPoly
    );
    let body = if body_poly {
        Local::Poly(random_rectangle(rng))
    } else {
        Local::Ell(random_ellipse(rng))
    };
    let canvas = if canvas_poly {
        Local::Poly(random_rectangle(rng).transformed(&Pose::planar(
            0.0,
            0.0,
            rng.random_range(0.0..3.0),
        ))?)
    } else {
        Local::Ell(random_ellipse(rng))
    };
    let p1 = random_pose(rng);
    let n_aux = kind.aux_count(2);
    let mut aux: Vec<f64> = (0..n_aux).map(|_| rng.random_range(-2.0..2.0)).collect();
    if let Some(l) = aux.first_mut() {
        *l = rng.random_range(0.1..2.0);
    }
    audit_block(
        &format!("contain_{}", kind.name()),
        &aux,
        p1,
        [0.0; 3],
        |aux, p1, _| {
            let placed = body.place(p1);
            let b = match &placed {
                Placed::Poly(p) => Body::Poly(p),
                Placed::Ell(e) => Body::Ell(e),
                Placed::Point(_) => unreachable!("containment bodies are sets"),
            };
            let c = match &canvas {
                Local::Poly(p) => Canvas::Poly(p),
                Local::Ell(e) => Canvas::Ell(e),
                Local::Point => unreachable!("canvases are sets"),
            };
            let ev = containment::evaluate(kind, b, c, aux)?;
            Ok(vec![ev.eq, ev.ineq])
        },
    )
}

fn dual_point(rng: &mut ChaCha8Rng) -> Result<DerivReport> {
    let body = random_rectangle(rng);
    let obstacle = random_rectangle(rng).transformed(&Pose::planar(
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(0.0..3.0),
    ))?;
    let n = body.n_faces() + obstacle.n_faces();
    let aux: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    audit_block("dual", &aux, random_pose(rng), [0.0; 3], |aux, p1, _| {
        let placed = PlacedPolytope::planar(&body, p1[0], p1[1], p1[2]);
        let ev = baseline_dual::evaluate(&placed, &obstacle, aux)?;
        Ok(vec![ev.eq, ev.ineq])
    })
}

fn dynamics_point(rng: &mut ChaCha8Rng) -> Result<DerivReport> {
    let deg = std::f64::consts::PI / 180.0;
    let trailer = rng.random_bool(0.5);
    let model = VehicleModelParams {
        l1: rng.random_range(1.0..3.0),
        l2: trailer.then(|| rng.random_range(2.0..5.0)),
        theta_max: 180.0 * deg,
        v_min: -5.0,
        v_max: 5.0,
        delta_max: 40.0 * deg,
        a_min: -1.0,
        a_max: 1.0,
        omega_max: 5.0 * deg,
        joint_max: None,
    };
    let n = model.n_states();
    let mut xi: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    xi[n - 1] = rng.random_range(-0.6..0.6);
    let u = [rng.random_range(-1.0..1.0), rng.random_range(-0.1..0.1)];
    let (h, scale) = (rng.random_range(0.01..0.1), rng.random_range(5.0..60.0));
    let jet = rk4_step_jet(&model, &xi, &u, h, scale)?;
    let fd_step = AUDIT_STEP;
    let mut report = DerivReport::default();
    let eval = |xi: &[f64], u: &[f64], s: f64| rk4_step_jet(&model, xi, u, h, s).map(|j| j.next);
    for c in 0..n + 3 {
        let (mut xl, mut xh, mut ul, mut uh, mut sl, mut sh) =
            (xi.clone(), xi.clone(), u, u, scale, scale);
        let an = match c {
            c if c < n => {
                xl[c] -= fd_step;
                xh[c] += fd_step;
                jet.d_xi.column(c).into_owned()
            }
            c if c < n + 2 => {
                ul[c - n] -= fd_step;
                uh[c - n] += fd_step;
                jet.d_u.column(c - n).into_owned()
            }
            _ => {
                sl -= fd_step;
                sh += fd_step;
                jet.d_scale.clone()
            }
        };
        let fd = (eval(&xh, &uh, sh)? - eval(&xl, &ul, sl)?) / (2.0 * fd_step);
        for r in 0..n {
            report.record(format!("rk4_step[{r}]"), c, an[r], fd[r]);
        }
    }
    Ok(report)
}

fn run(
    points: usize,
    seed: u64,
    exec: Exec,
    f: impl Fn(&mut ChaCha8Rng) -> Result<DerivReport> + Sync + Send,
) -> Result<DerivReport> {
    if points == 0 {
        return Err(Error::InvalidArgument(
            "audit needs at least one point".into(),
        ));
    }
    let mut total = DerivReport::default();
    for r in exec.map_range(points, |i| f(&mut rng_for(seed, i))) {
        total.merge(r?);
    }
    Ok(total)
}

pub fn audit_separation(
    kind: SeparationKind,
    points: usize,
    seed: u64,
    exec: Exec,
) -> Result<DerivReport> {
    run(points, seed, exec, |rng| separation_point(kind, rng))
}

pub fn audit_containment(
    kind: ContainmentKind,
    points: usize,
    seed: u64,
    exec: Exec,
) -> Result<DerivReport> {
    run(points, seed, exec, |rng| containment_point(kind, rng))
}

pub fn audit_dual(points: usize, seed: u64, exec: Exec) -> Result<DerivReport> {
    run(points, seed, exec, dual_point)
}

/// One RK4 step with and without a trailer.
pub fn audit_dynamics(points: usize, seed: u64, exec: Exec) -> Result<DerivReport> {
    run(points, seed, exec, dynamics_point)
}

/// Every separation and containment kind, the dual certificate and the
/// discretized dynamics, `points` random points each.
pub fn audit_all(points: usize, seed: u64, exec: Exec) -> Result<DerivReport> {
    let mut total = DerivReport::default();
    for kind in SeparationKind::ALL {
        total.merge(audit_separation(kind, points, seed, exec)?);
    }
    for kind in ContainmentKind::ALL {
        total.merge(audit_containment(kind, points, seed, exec)?);
    }
    total.merge(audit_dual(points, seed, exec)?);
    total.merge(audit_dynamics(points, seed, exec)?);
    Ok(total)
}
