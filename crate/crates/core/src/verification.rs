//! Formulation-agnostic collision and containment oracle, and a trajectory
//! certifier built on it. Nothing here looks at auxiliary variables.
//!
//! Disjointness uses the support-function identity
//!
//! ```text
//! dist(S1, S2) = max_{|d| = 1}  min_{s in S2} d^T s - max_{s in S1} d^T s
//! ```
//!
//! which is the separation distance when positive and minus the penetration
//! depth when negative. Polytope pairs evaluate it exactly on the Minkowski
//! difference polygon; pairs with an ellipsoid maximise over the direction
//! angle from several starts.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::rk4_step_jet;
use crate::error::{Error, Result};
use crate::geometry::{ConvexSet, Ellipsoid, Polytope};
use crate::ocp::{Attach, Scenario};

/// Tolerance for witness validity checks.
pub const WITNESS_TOL: f64 = 1e-8;

/// Evidence for an oracle verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Witness {
    /// `lambda^T s <= mu` on the first set and `>= mu` on the second.
    Plane { lambda: Vec<f64>, mu: f64 },
    /// A point lying in both sets.
    Point { point: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisjointVerdict {
    pub disjoint: bool,
    /// Separation distance (> 0) or minus the penetration depth (< 0).
    pub signed_distance: f64,
    pub witness: Witness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainVerdict {
    pub contained: bool,
    /// Smallest slack over the checks, in meters for polytope outers and
    /// as `1 - (s - e)^T E (s - e)` for ellipsoid outers. Negative when violated.
    pub margin: f64,
    /// Worst point of the inner set (outside the outer set when violated).
    pub witness: Vec<f64>,
}

fn unit(phi: f64) -> DVector<f64> {
    DVector::from_column_slice(&[phi.cos(), phi.sin()])
}

/// `min_{S2} d^T s - max_{S1} d^T s` for direction angle `phi`.
fn gap(s1: &ConvexSet, s2: &ConvexSet, phi: f64) -> f64 {
    let d = unit(phi);
    -s2.support(&-&d) - s1.support(&d)
}

fn check_planar(s1: &ConvexSet, s2: &ConvexSet) -> Result<()> {
    if s1.dim() != 2 || s2.dim() != 2 {
        return Err(Error::Unsupported(format!(
            "oracle is planar; got dimensions {} and {}",
            s1.dim(),
            s2.dim()
        )));
    }
    Ok(())
}

/// Decides whether two planar convex sets are disjoint. Touching sets
/// (signed distance within `tol` of zero) count as disjoint.
pub fn oracle_disjoint(s1: &ConvexSet, s2: &ConvexSet, tol: f64) -> Result<DisjointVerdict> {
    check_planar(s1, s2)?;
    let (dist, phi) = match (s1, s2) {
        (ConvexSet::Polytope(p), ConvexSet::Polytope(q)) => polygon_signed_distance(p, q),
        _ => angular_max(s1, s2),
    };
    let d = unit(phi);
    let disjoint = dist >= -tol;
    let witness = if disjoint {
        let hi1 = s1.support(&d);
        let lo2 = -s2.support(&-&d);
        Witness::Plane {
            lambda: d.iter().copied().collect(),
            mu: 0.5 * (hi1 + lo2),
        }
    } else {
        Witness::Point {
            point: common_point(s1, s2, &d).iter().copied().collect(),
        }
    };
    Ok(DisjointVerdict {
        disjoint,
        signed_distance: dist,
        witness,
    })
}

/// Exact signed distance between polygons via the Minkowski difference
/// `P - Q`: distance from the origin to it when outside, minus the depth
/// when inside. Returns the distance and the maximising direction angle.
fn polygon_signed_distance(p: &Polytope, q: &Polytope) -> (f64, f64) {
    let (vp, vq) = (p.vertices(), q.vertices());
    let mut pts = Vec::with_capacity(vp.ncols() * vq.ncols());
    for i in 0..vp.ncols() {
        for j in 0..vq.ncols() {
            pts.push([vp[(0, i)] - vq[(0, j)], vp[(1, i)] - vq[(1, j)]]);
        }
    }
    let hull = convex_hull(pts);
    let m = hull.len();
    // outward edge normals of a counter-clockwise hull
    let mut inside = m >= 3;
    let mut depth = f64::INFINITY;
    let mut depth_phi = 0.0;
    let mut best = f64::INFINITY;
    let mut best_dir = [1.0, 0.0];
    for k in 0..m {
        let a = hull[k];
        let b = hull[(k + 1) % m];
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let len = ex.hypot(ey);
        if len < 1e-15 {
            continue;
        }
        let (nx, ny) = (ey / len, -ex / len);
        // signed offset of the origin beyond this edge's supporting line
        let off = -(nx * a[0] + ny * a[1]);
        if off > 0.0 {
            inside = false;
        }
        if -off < depth {
            depth = -off;
            // S1 - S2 normal n: S1 moves along -n to escape, so the gap
            // direction (from S1 towards S2) is -n
            depth_phi = (-ny).atan2(-nx);
        }
        // closest point on the segment to the origin
        let t = (-(a[0] * ex + a[1] * ey) / (len * len)).clamp(0.0, 1.0);
        let (cx, cy) = (a[0] + t * ex, a[1] + t * ey);
        let dist = cx.hypot(cy);
        if dist < best {
            best = dist;
            best_dir = [cx, cy];
        }
    }
    if m == 1 {
        let c = hull[0];
        let dist = c[0].hypot(c[1]);
        return (dist, (-c[1]).atan2(-c[0]));
    }
    if inside {
        (-depth, depth_phi)
    } else {
        // gap direction points from S1 to S2, i.e. from P - Q towards the origin
        (best, (-best_dir[1]).atan2(-best_dir[0]))
    }
}

/// Andrew's monotone chain; counter-clockwise, no collinear points.
fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Maximises the gap over the direction angle: a coarse sweep, then golden
/// section refinement from the 8 best-seeded brackets (one of them on the
/// center line).
fn angular_max(s1: &ConvexSet, s2: &ConvexSet) -> (f64, f64) {
    use std::f64::consts::TAU;
    const SWEEP: usize = 720;
    const STARTS: usize = 8;
    let c1 = crate::geometry::centroid(s1);
    let c2 = crate::geometry::centroid(s2);
    let dc = &c2 - &c1;
    let center_phi = if dc.norm() > 1e-12 {
        dc[1].atan2(dc[0])
    } else {
        0.0
    };
    let step = TAU / SWEEP as f64;
    let mut samples: Vec<(f64, f64)> = (0..SWEEP)
        .map(|i| {
            let phi = center_phi + i as f64 * step;
            (gap(s1, s2, phi), phi)
        })
        .collect();
    // local maxima of the sweep, best first; the center line is always tried
    let mut seeds: Vec<(f64, f64)> = (0..SWEEP)
        .filter(|&i| {
            let (prev, next) = (
                samples[(i + SWEEP - 1) % SWEEP].0,
                samples[(i + 1) % SWEEP].0,
            );
            samples[i].0 >= prev && samples[i].0 >= next
        })
        .map(|i| samples[i])
        .collect();
    seeds.sort_by(|a, b| b.0.total_cmp(&a.0));
    seeds.truncate(STARTS - 1);
    seeds.push(samples[0]);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &(_, phi0) in &seeds {
        let (v, phi) = golden_max(|p| gap(s1, s2, p), phi0 - step, phi0 + step);
        if v > best.0 {
            best = (v, phi);
        }
    }
    samples.clear();
    best
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (fc, c)
    } else {
        (fd, d)
    }
}

/// A point in both sets: the midpoint of the two support points along the
/// minimum-translation direction when that works, otherwise alternating
/// projections from it.
fn common_point(s1: &ConvexSet, s2: &ConvexSet, d: &DVector<f64>) -> DVector<f64> {
    let p1 = s1.support_point(d);
    let p2 = s2.support_point(&-d);
    let mut x = (&p1 + &p2) * 0.5;
    let ok = |x: &DVector<f64>| s1.contains(x, WITNESS_TOL) && s2.contains(x, WITNESS_TOL);
    if ok(&x) {
        return x;
    }
    for c in [crate::geometry::centroid(s1), crate::geometry::centroid(s2)] {
        if ok(&c) {
            return c;
        }
    }
    for _ in 0..10_000 {
        x = project(s2, &project(s1, &x));
        if ok(&x) {
            break;
        }
    }
    x
}

/// Euclidean projection onto a planar convex set.
pub fn project(set: &ConvexSet, x: &DVector<f64>) -> DVector<f64> {
    match set {
        ConvexSet::Polytope(p) => project_polygon(p, x),
        ConvexSet::Ellipsoid(e) => project_ellipse(e, x),
    }
}

fn project_polygon(p: &Polytope, x: &DVector<f64>) -> DVector<f64> {
    if p.max_violation(x) <= 0.0 {
        return x.clone();
    }
    let v = p.vertices();
    let hull = convex_hull((0..v.ncols()).map(|j| [v[(0, j)], v[(1, j)]]).collect());
    let m = hull.len();
    let mut best = (f64::INFINITY, x.clone());
    for k in 0..m {
        let a = hull[k];
        let b = hull[(k + 1) % m];
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let l2 = ex * ex + ey * ey;
        let t = if l2 > 0.0 {
            (((x[0] - a[0]) * ex + (x[1] - a[1]) * ey) / l2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let c = DVector::from_column_slice(&[a[0] + t * ex, a[1] + t * ey]);
        let dist = (&c - x).norm();
        if dist < best.0 {
            best = (dist, c);
        }
    }
    best.1
}

/// Closest point of `{(s - e)^T E (s - e) <= 1}`: solve
/// `(I + t E) y = x - e` with `y^T E y = 1` for `t >= 0` by bisection on `t`.
fn project_ellipse(e: &Ellipsoid, x: &DVector<f64>) -> DVector<f64> {
    if e.level(x) <= 0.0 {
        return x.clone();
    }
    let r = x - e.center();
    let n = r.len();
    let solve = |t: f64| -> DVector<f64> {
        let m = nalgebra::DMatrix::identity(n, n) + e.shape() * t;
        m.lu().solve(&r).unwrap_or_else(|| r.clone())
    };
    let level = |y: &DVector<f64>| (y.transpose() * e.shape() * y)[(0, 0)];
    let (mut lo, mut hi) = (0.0, 1.0);
    while level(&solve(hi)) > 1.0 && hi < 1e300 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if level(&solve(mid)) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    e.center() + solve(hi)
}

/// Number of boundary samples for ellipsoid inner sets.
pub const CONTAIN_SAMPLES: usize = 10_000;

/// Decides whether `inner` lies inside `outer`. Boundary contact counts as
/// contained within `tol`.
pub fn oracle_contained(inner: &ConvexSet, outer: &ConvexSet, tol: f64) -> Result<ContainVerdict> {
    check_planar(inner, outer)?;
    let (margin, witness) = match inner {
        ConvexSet::Polytope(p) => {
            let v = p.vertices();
            let mut worst = (f64::INFINITY, DVector::zeros(2));
            for j in 0..v.ncols() {
                let pt = v.column(j).into_owned();
                let slack = point_slack(outer, &pt);
                if slack < worst.0 {
                    worst = (slack, pt);
                }
            }
            worst
        }
        ConvexSet::Ellipsoid(e) => match outer {
            ConvexSet::Polytope(q) => {
                // exact: support of the inner set against every face
                let (a, b) = (q.faces(), q.offsets());
                let mut worst = (f64::INFINITY, e.center().clone());
                for i in 0..a.nrows() {
                    let n = a.row(i).transpose();
                    let slack = (b[i] - e.support(&n)) / n.norm().max(1e-300);
                    if slack < worst.0 {
                        worst = (slack, e.support_point(&n));
                    }
                }
                // sampled cross-check of the same quantity
                for k in 0..CONTAIN_SAMPLES {
                    let phi = std::f64::consts::TAU * k as f64 / CONTAIN_SAMPLES as f64;
                    let pt = e.boundary_point(&unit(phi));
                    let slack = point_slack(outer, &pt);
                    if slack < worst.0 {
                        worst = (slack, pt);
                    }
                }
                worst
            }
            ConvexSet::Ellipsoid(_) => {
                let f = |phi: f64| point_slack(outer, &e.boundary_point(&unit(phi)));
                let mut worst = (f64::INFINITY, 0.0);
                for k in 0..CONTAIN_SAMPLES {
                    let phi = std::f64::consts::TAU * k as f64 / CONTAIN_SAMPLES as f64;
                    let s = f(phi);
                    if s < worst.0 {
                        worst = (s, phi);
                    }
                }
                let h = std::f64::consts::TAU / CONTAIN_SAMPLES as f64;
                let (neg, phi) = golden_max(|p| -f(p), worst.1 - h, worst.1 + h);
                let refined = if -neg < worst.0 { (-neg, phi) } else { worst };
                (refined.0, e.boundary_point(&unit(refined.1)))
            }
        },
    };
    Ok(ContainVerdict {
        contained: margin >= -tol,
        margin,
        witness: witness.iter().copied().collect(),
    })
}

/// How far inside `outer` a point is: distance-like slack for polytopes
/// (unit-normalised faces), `1 - (s - e)^T E (s - e)` for ellipsoids.
fn point_slack(outer: &ConvexSet, p: &DVector<f64>) -> f64 {
    match outer {
        ConvexSet::Polytope(q) => {
            let (a, b) = (q.faces(), q.offsets());
            (0..a.nrows())
                .map(|i| {
                    let n = a.row(i);
                    (b[i] - (n * p)[(0, 0)]) / n.norm().max(1e-300)
                })
                .fold(f64::INFINITY, f64::min)
        }
        ConvexSet::Ellipsoid(e) => -e.level(p),
    }
}

/// A planned motion: states at `0..=k_f`, controls at `0..k_f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t_f: f64,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn k_f(&self) -> usize {
        self.controls.len()
    }

    /// Control effort `sum a^2 + omega^2`, used to tell local solutions apart.
    pub fn ts_metric(&self) -> f64 {
        self.controls
            .iter()
            .map(|u| u[0] * u[0] + u[1] * u[1])
            .sum()
    }

    /// Checks lengths against a scenario.
    pub fn check_shape(&self, s: &Scenario) -> Result<()> {
        let n_x = s.n_states();
        if self.controls.len() != s.k_f || self.states.len() != s.k_f + 1 {
            return Err(Error::InvalidArgument(format!(
                "trajectory has {} states and {} controls; the scenario needs k_f = {} ({} states)",
                self.states.len(),
                self.controls.len(),
                s.k_f,
                s.k_f + 1
            )));
        }
        if let Some(k) = self.states.iter().position(|x| x.len() != n_x) {
            return Err(Error::dim(
                format!("state length at step {k}"),
                n_x,
                self.states[k].len(),
            ));
        }
        if !(self.t_f.is_finite()) {
            return Err(Error::NonFinite("t_f".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    /// Allowed penetration / containment overshoot, meters.
    pub geometry_tol: f64,
    pub defect_tol: f64,
    /// Slack on box bounds and boundary states.
    pub bound_tol: f64,
    /// Slack on path constraints the solver meets only to its feasibility
    /// tolerance (the joint-angle limit).
    pub constraint_tol: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            geometry_tol: 1e-5,
            defect_tol: 1e-6,
            bound_tol: 1e-9,
            constraint_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Collision {
        step: usize,
        body: usize,
        obstacle: usize,
        signed_distance: f64,
        witness: Witness,
    },
    Containment {
        step: usize,
        body: usize,
        canvas: usize,
        margin: f64,
        witness: Vec<f64>,
    },
    Defect {
        step: usize,
        max_abs: f64,
    },
    StateBound {
        step: usize,
        index: usize,
        value: f64,
    },
    ControlBound {
        step: usize,
        index: usize,
        value: f64,
    },
    Boundary {
        step: usize,
        index: usize,
        value: f64,
        target: f64,
    },
    JointAngle {
        step: usize,
        angle: f64,
    },
    Horizon {
        t_f: f64,
    },
}

impl Violation {
    pub fn step(&self) -> Option<usize> {
        match self {
            Violation::Collision { step, .. }
            | Violation::Containment { step, .. }
            | Violation::Defect { step, .. }
            | Violation::StateBound { step, .. }
            | Violation::ControlBound { step, .. }
            | Violation::Boundary { step, .. }
            | Violation::JointAngle { step, .. } => Some(*step),
            Violation::Horizon { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub certified: bool,
    pub steps_checked: usize,
    pub max_defect: f64,
    /// Smallest body-obstacle signed distance over all steps; infinite
    /// (written as `null`) without obstacles.
    #[serde(with = "infinite_as_null")]
    pub min_clearance: f64,
    /// Smallest containment margin over all steps.
    pub min_containment_margin: f64,
    pub violations: Vec<Violation>,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Checks every grid point of `traj` against `s`: collisions and
/// containment through the oracle, shooting defects, state and control
/// boxes, boundary states and the joint-angle limit.
pub fn certify_trajectory(
    traj: &Trajectory,
    s: &Scenario,
    opts: &CertifyOptions,
) -> Result<CertificationReport> {
    s.validate()?;
    traj.check_shape(s)?;
    let mut v = Vec::new();
    let k_f = s.k_f;
    let mut expected_tf = traj.t_f;
    if let crate::ocp::Horizon::Fixed(t) = s.horizon {
        expected_tf = t;
        if (traj.t_f - t).abs() > opts.bound_tol * t.abs().max(1.0) {
            v.push(Violation::Horizon { t_f: traj.t_f });
        }
    } else if !(traj.t_f >= 0.0) {
        v.push(Violation::Horizon { t_f: traj.t_f });
    }

    // geometry
    let mut min_clearance = f64::INFINITY;
    let mut min_margin = f64::INFINITY;
    for k in 0..=k_f {
        let xi = &traj.states[k];
        let parts: Vec<ConvexSet> = (0..s.body_parts.len())
            .map(|b| s.part_world(b, xi))
            .collect::<Result<_>>()?;
        for (b, part) in parts.iter().enumerate() {
            for o in 0..s.obstacles.len() {
                let obs = s.obstacle_at(o, k)?;
                let verdict = oracle_disjoint(part, &obs, opts.geometry_tol)?;
                min_clearance = min_clearance.min(verdict.signed_distance);
                if !verdict.disjoint {
                    v.push(Violation::Collision {
                        step: k,
                        body: b,
                        obstacle: o,
                        signed_distance: verdict.signed_distance,
                        witness: verdict.witness,
                    });
                }
            }
            for (c, canvas) in s.canvas.iter().enumerate() {
                let verdict = oracle_contained(part, canvas, opts.geometry_tol)?;
                min_margin = min_margin.min(verdict.margin);
                if !verdict.contained {
                    v.push(Violation::Containment {
                        step: k,
                        body: b,
                        canvas: c,
                        margin: verdict.margin,
                        witness: verdict.witness,
                    });
                }
            }
        }
    }

    // dynamics
    let h = s.time_step();
    let mut max_defect = 0.0f64;
    for k in 0..k_f {
        let jet = rk4_step_jet(&s.model, &traj.states[k], &traj.controls[k], h, expected_tf)?;
        let d = traj.states[k + 1]
            .iter()
            .zip(jet.next.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        max_defect = max_defect.max(d);
        if d > opts.defect_tol {
            v.push(Violation::Defect {
                step: k + 1,
                max_abs: d,
            });
        }
    }

    // boxes and boundary states
    let (lo, hi) = s.model.state_bounds();
    let (ulo, uhi) = s.model.control_bounds();
    for (k, xi) in traj.states.iter().enumerate() {
        for i in 0..xi.len() {
            if xi[i] < lo[i] - opts.bound_tol
                || xi[i] > hi[i] + opts.bound_tol
                || !xi[i].is_finite()
            {
                v.push(Violation::StateBound {
                    step: k,
                    index: i,
                    value: xi[i],
                });
            }
        }
    }
    for (k, u) in traj.controls.iter().enumerate() {
        for j in 0..2 {
            if u[j] < ulo[j] - opts.bound_tol || u[j] > uhi[j] + opts.bound_tol || !u[j].is_finite()
            {
                v.push(Violation::ControlBound {
                    step: k,
                    index: j,
                    value: u[j],
                });
            }
        }
    }
    for (k, target) in [(0, s.xi_init.to_vec()), (k_f, s.xi_final.to_vec())] {
        for (i, &want) in target.iter().enumerate() {
            let value = traj.states[k][i];
            if (value - want).abs() > opts.defect_tol {
                v.push(Violation::Boundary {
                    step: k,
                    index: i,
                    value,
                    target: want,
                });
            }
        }
    }
    if let Some(jm) = s.model.joint_max {
        let (i1, i2) = (s.yaw_index(Attach::Tractor), s.yaw_index(Attach::Trailer));
        for (k, xi) in traj.states.iter().enumerate() {
            let angle = xi[i1] - xi[i2];
            if angle.abs() > jm + opts.constraint_tol {
                v.push(Violation::JointAngle { step: k, angle });
            }
        }
    }

    Ok(CertificationReport {
        certified: v.is_empty(),
        steps_checked: k_f + 1,
        max_defect,
        min_clearance,
        min_containment_margin: min_margin,
        violations: v,
    })
}
