//! Warm starts: seed paths for the states and closed-form guesses for every
//! separating-plane auxiliary block.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::containment::ContainmentKind;
use crate::dynamics::VehicleState;
use crate::error::{Error, Result};
use crate::geometry::{centroid, ConvexSet, Hyperplane};
use crate::ocp::{part_centroid, NlpProblem, PairForm, PathGuess, Scenario};
use crate::solver::Problem;

/// How auxiliary variables are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Planes placed from the seed path and obstacle geometry.
    Geometry,
    /// Positive constant normal and zero offset.
    Constant,
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometry" => Ok(InitStrategy::Geometry),
            "constant" => Ok(InitStrategy::Constant),
            other => Err(Error::InvalidArgument(format!(
                "unknown init strategy '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitStrategy::Geometry => "geometry",
            InitStrategy::Constant => "constant",
        })
    }
}

/// Multiplier value used by the constant strategy for dual blocks.
const CONSTANT_DUAL: f64 = 0.5;

fn blank(xi: &VehicleState) -> Vec<f64> {
    vec![0.0; xi.to_vec().len()]
}

/// Writes pose `(x, y, yaw)` into a zero state; a trailer yaw copies the
/// tractor yaw.
fn pose_state(template: &VehicleState, x: f64, y: f64, yaw: f64) -> Vec<f64> {
    let mut s = blank(template);
    s[0] = x;
    s[1] = y;
    s[2] = yaw;
    if template.theta2.is_some() {
        s[3] = yaw;
    }
    s
}

/// `x, y` and yaw linear between the boundary states; everything else zero.
pub fn linear_path_guess(
    xi_init: &VehicleState,
    xi_final: &VehicleState,
    k_f: usize,
) -> Vec<Vec<f64>> {
    let (a, b) = (xi_init.to_vec(), xi_final.to_vec());
    let yaws = if xi_init.theta2.is_some() { 4 } else { 3 };
    (0..=k_f)
        .map(|k| {
            let t = k as f64 / k_f as f64;
            let mut s = blank(xi_init);
            for i in 0..yaws {
                s[i] = a[i] + t * (b[i] - a[i]);
            }
            s
        })
        .collect()
}

/// Angle of the line with direction `(dx, dy)`, taken modulo `pi` to lie
/// closest to `prev`.
fn line_angle_near(dx: f64, dy: f64, prev: f64) -> f64 {
    let a = dy.atan2(dx);
    let k = ((prev - a) / PI).round();
    a + k * PI
}

/// Quadratic from the start to `interim`, leaving along the start heading,
/// then a straight line to the goal. Yaw follows the tangent line of the
/// path, unwrapped so it changes continuously.
pub fn parking_path_guess(
    xi_init: &VehicleState,
    xi_final: &VehicleState,
    interim: [f64; 2],
    k_f: usize,
) -> Vec<Vec<f64>> {
    let p0 = [xi_init.x, xi_init.y];
    let p2 = [xi_final.x, xi_final.y];
    let d = [xi_init.theta1.cos(), xi_init.theta1.sin()];
    let l1 = (interim[0] - p0[0]).hypot(interim[1] - p0[1]);
    let l2 = (p2[0] - interim[0]).hypot(p2[1] - interim[1]);
    if l1 + l2 == 0.0 {
        return (0..=k_f)
            .map(|_| pose_state(xi_init, p0[0], p0[1], xi_init.theta1))
            .collect();
    }
    // control point of the quadratic: the start tangent meets the chord's
    // projection halfway
    let along = (interim[0] - p0[0]) * d[0] + (interim[1] - p0[1]) * d[1];
    if l1 == 0.0 || l2 == 0.0 || !(along > 0.0) {
        return linear_path_guess(xi_init, xi_final, k_f);
    }
    let c = [p0[0] + 0.5 * along * d[0], p0[1] + 0.5 * along * d[1]];
    let n1 = ((k_f as f64 * l1 / (l1 + l2)).round() as usize).clamp(1, k_f - 1);
    let mut prev = xi_init.theta1;
    (0..=k_f)
        .map(|k| {
            let (x, y, dx, dy) = if k <= n1 {
                let t = k as f64 / n1 as f64;
                let b = |i: usize| {
                    (1.0 - t).powi(2) * p0[i] + 2.0 * t * (1.0 - t) * c[i] + t * t * interim[i]
                };
                let db =
                    |i: usize| 2.0 * (1.0 - t) * (c[i] - p0[i]) + 2.0 * t * (interim[i] - c[i]);
                (b(0), b(1), db(0), db(1))
            } else {
                let t = (k - n1) as f64 / (k_f - n1) as f64;
                let dx = p2[0] - interim[0];
                let dy = p2[1] - interim[1];
                (interim[0] + t * dx, interim[1] + t * dy, dx, dy)
            };
            prev = line_angle_near(dx, dy, prev);
            pose_state(xi_init, x, y, prev)
        })
        .collect()
}

/// Coefficients `c0..c4` of the quartic `w(s)` on `[0, len]` with `w(0) =
/// w(len) = 0`, slopes `m0, m1` at the ends and `w(len/2) = h`.
fn quartic(len: f64, m0: f64, m1: f64, h: f64) -> [f64; 5] {
    // w = m0 s + c2 s^2 + c3 s^3 + c4 s^4
    let l = len;
    // rows: w(l) = 0, w'(l) = m1, w(l/2) = h
    let a = nalgebra::Matrix3::new(
        l * l,
        l.powi(3),
        l.powi(4),
        2.0 * l,
        3.0 * l * l,
        4.0 * l.powi(3),
        l * l / 4.0,
        l.powi(3) / 8.0,
        l.powi(4) / 16.0,
    );
    let rhs = nalgebra::Vector3::new(-m0 * l, m1 - m0, h - m0 * l / 2.0);
    let sol = a.lu().solve(&rhs).unwrap_or_else(nalgebra::Vector3::zeros);
    [0.0, m0, sol[0], sol[1], sol[2]]
}

/// Quartic seed between the boundary poses.
///
/// In the frame of the chord the path is a quartic matching the endpoint
/// headings, closed by placing the midpoint on the circular arc tangent to
/// both headings: offset `(len/2) tan((b0 - b1)/4)`, zero when the headings
/// agree. Speed is linear between the boundary values.
pub fn overtaking_path_guess(
    xi_init: &VehicleState,
    xi_final: &VehicleState,
    k_f: usize,
) -> Vec<Vec<f64>> {
    let (dx, dy) = (xi_final.x - xi_init.x, xi_final.y - xi_init.y);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return linear_path_guess(xi_init, xi_final, k_f);
    }
    let chord = dy.atan2(dx);
    let b0 = xi_init.theta1 - chord;
    let b1 = xi_final.theta1 - chord;
    let h = 0.5 * len * ((b0 - b1) / 4.0).tan();
    let c = quartic(len, b0.tan(), b1.tan(), h);
    let (cc, sc) = (chord.cos(), chord.sin());
    let iv = xi_init.to_vec().len() - 2;
    (0..=k_f)
        .map(|k| {
            let t = k as f64 / k_f as f64;
            let s = t * len;
            let w = c[1] * s + c[2] * s * s + c[3] * s.powi(3) + c[4] * s.powi(4);
            let dw = c[1] + 2.0 * c[2] * s + 3.0 * c[3] * s * s + 4.0 * c[4] * s.powi(3);
            let x = xi_init.x + s * cc - w * sc;
            let y = xi_init.y + s * sc + w * cc;
            let mut st = pose_state(xi_init, x, y, chord + dw.atan());
            st[iv] = xi_init.v + t * (xi_final.v - xi_init.v);
            st
        })
        .collect()
}

/// Seed path chosen by the scenario.
pub fn path_guess(s: &Scenario) -> Vec<Vec<f64>> {
    match s.path_guess {
        PathGuess::Linear => linear_path_guess(&s.xi_init, &s.xi_final, s.k_f),
        PathGuess::Parking { interim } => {
            parking_path_guess(&s.xi_init, &s.xi_final, interim, s.k_f)
        }
        PathGuess::Quartic => overtaking_path_guess(&s.xi_init, &s.xi_final, s.k_f),
    }
}

/// Plane orthogonal to the segment from the obstacle centroid to `sample`,
/// crossing it at `gamma sample + (1 - gamma) centroid`; the sample lies on
/// the `lambda^T s >= mu` side.
pub fn orthogonal_plane_guess(
    sample: &DVector<f64>,
    obstacle: &ConvexSet,
    gamma: f64,
) -> Result<Hyperplane> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    let c = centroid(obstacle);
    if c.len() != sample.len() {
        return Err(Error::dim(
            "sample vs obstacle dimension",
            c.len(),
            sample.len(),
        ));
    }
    let d = sample - &c;
    let n = d.norm();
    if !(n > 1e-12) {
        return Err(Error::InvalidArgument(
            "sample coincides with the obstacle centroid".into(),
        ));
    }
    let lambda = d / n;
    let mu = lambda.dot(&(sample * gamma + c * (1.0 - gamma)));
    Hyperplane::new(lambda, mu)
}

/// Planar plane through `sample` along `heading`, oriented so the sample
/// side faces away from the obstacle centroid.
pub fn tangent_plane_guess(
    sample: &DVector<f64>,
    heading: f64,
    obstacle_centroid: &DVector<f64>,
) -> Result<Hyperplane> {
    if sample.len() != 2 || obstacle_centroid.len() != 2 {
        return Err(Error::dim("tangent plane guess dimension", 2, sample.len()));
    }
    let mut lambda = DVector::from_column_slice(&[-heading.sin(), heading.cos()]);
    if lambda.dot(&(sample - obstacle_centroid)) < 0.0 {
        lambda = -lambda;
    }
    let mu = lambda.dot(sample);
    Hyperplane::new(lambda, mu)
}

/// Nonnegative weights `c` with `faces^T c = target` using at most two faces
/// (planar cone decomposition). Falls back to clipped projections when the
/// target is outside the cone.
fn cone_weights(faces: &nalgebra::DMatrix<f64>, target: &DVector<f64>) -> Vec<f64> {
    let m = faces.nrows();
    let mut best: Option<(f64, Vec<f64>)> = None;
    if target.len() == 2 {
        for i in 0..m {
            for j in i + 1..m {
                let (a, b) = (faces.row(i), faces.row(j));
                let det = a[0] * b[1] - a[1] * b[0];
                if det.abs() < 1e-12 {
                    continue;
                }
                let ci = (target[0] * b[1] - target[1] * b[0]) / det;
                let cj = (a[0] * target[1] - a[1] * target[0]) / det;
                if ci >= -1e-12 && cj >= -1e-12 {
                    let total = ci + cj;
                    if best.as_ref().is_none_or(|(t, _)| total < *t) {
                        let mut c = vec![0.0; m];
                        c[i] = ci.max(0.0);
                        c[j] = cj.max(0.0);
                        best = Some((total, c));
                    }
                }
            }
        }
    }
    best.map(|(_, c)| c).unwrap_or_else(|| {
        (0..m)
            .map(|i| faces.row(i).transpose().dot(target).max(0.0))
            .collect()
    })
}

/// Dual multipliers certifying the plane with normal `lambda` (body on the
/// upper side): `A_b^T lam = -lambda`, `A_o^T mu = lambda`.
pub fn dual_guess(
    body_faces: &nalgebra::DMatrix<f64>,
    obstacle_faces: &nalgebra::DMatrix<f64>,
    lambda: &DVector<f64>,
) -> Vec<f64> {
    let mut out = cone_weights(body_faces, &-lambda);
    out.extend(cone_weights(obstacle_faces, lambda));
    out
}

/// Fills a full decision vector for `nlp`.
///
/// States follow the scenario's seed path, controls are zero, a free horizon
/// starts at the scenario's `t_f` guess, and every auxiliary block gets a
/// plane guess (or the constant guess). Every slot must be written.
pub fn assemble_guess(s: &Scenario, nlp: &NlpProblem, strategy: InitStrategy) -> Result<Vec<f64>> {
    let n = nlp.n_vars();
    let mut z = vec![f64::NAN; n];
    let path = path_guess(s);
    for (k, xi) in path.iter().enumerate() {
        for (i, v) in xi.iter().enumerate() {
            z[nlp.state_index(k, i)] = *v;
        }
    }
    for k in 0..s.k_f {
        for j in 0..2 {
            z[nlp.control_index(k, j)] = 0.0;
        }
    }
    if let Some(t) = nlp.tf_index() {
        z[t] = s.tf_guess;
    }
    for blk in nlp.pair_blocks() {
        let xi = &path[blk.step];
        let aux: Vec<f64> = match (strategy, blk.form) {
            (InitStrategy::Constant, PairForm::Dual) => vec![CONSTANT_DUAL; blk.aux.len()],
            (InitStrategy::Constant, PairForm::Separation { .. }) => {
                let dim = blk.aux.len() - 1;
                let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
                v.push(0.0);
                v
            }
            (InitStrategy::Geometry, form) => {
                let obstacle = nlp.obstacle_at(blk.obstacle, blk.step);
                let sample = part_centroid(s, blk.body, xi)?;
                let plane = match obstacle {
                    ConvexSet::Polytope(_) => orthogonal_plane_guess(&sample, obstacle, s.gamma)
                        .or_else(|_| {
                            // coincident points: fixed axis normal
                            let lambda = DVector::from_column_slice(&[1.0, 0.0]);
                            let c = centroid(obstacle);
                            let mu = lambda.dot(&(&sample * s.gamma + c * (1.0 - s.gamma)));
                            Hyperplane::new(lambda, mu)
                        })?,
                    ConvexSet::Ellipsoid(e) => {
                        let yaw = xi[s.yaw_index(s.body_parts[blk.body].attach)];
                        tangent_plane_guess(&sample, yaw, e.center())?
                    }
                };
                match form {
                    PairForm::Separation { kind, body_first } => {
                        let flip = body_first != kind.first_on_upper_side();
                        let sign = if flip { -1.0 } else { 1.0 };
                        let mut v: Vec<f64> = plane.lambda.iter().map(|l| sign * l).collect();
                        v.push(sign * plane.mu);
                        v
                    }
                    PairForm::Dual => {
                        let body = s.part_world(blk.body, xi)?;
                        match (&body, obstacle) {
                            (ConvexSet::Polytope(b), ConvexSet::Polytope(o)) => {
                                dual_guess(b.faces(), o.faces(), &plane.lambda)
                            }
                            _ => {
                                return Err(Error::Unsupported(
                                    "dual guess needs two polytopes".into(),
                                ))
                            }
                        }
                    }
                }
            }
        };
        if aux.len() != blk.aux.len() {
            return Err(Error::dim("pair aux guess", blk.aux.len(), aux.len()));
        }
        z[blk.aux.clone()].copy_from_slice(&aux);
    }
    for blk in nlp.containment_blocks() {
        if blk.kind == ContainmentKind::EllInEll {
            // lambda = 1, Cholesky factor zero
            z[blk.aux.start] = 1.0;
            z[blk.aux.start + 1..blk.aux.end].fill(0.0);
        }
    }
    if let Some(i) = z.iter().position(|v| v.is_nan()) {
        let owner = nlp
            .var_map()
            .slices
            .iter()
            .find(|sl| (sl.offset..sl.offset + sl.len).contains(&i))
            .map_or("?", |sl| sl.name.as_str());
        return Err(Error::InvalidArgument(format!(
            "guess left variable {i} ({owner}) unfilled"
        )));
    }
    Ok(z)
}
