//! Randomized agreement checks between constraint residuals and the
//! solver-independent geometric oracles.
//!
//! Instances whose oracle distance or margin lies within
//! [`BOUNDARY_BAND`] of zero are counted but not judged.

use std::f64::consts::TAU;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::containment::{
    contain_ell_in_ell, contain_ell_in_poly, contain_poly_in_ell, contain_poly_in_poly,
    ell_in_ell_certificate, ContainmentKind,
};
use crate::error::{Error, Result};
use crate::feasibility::{dual_feasibility, separation_feasibility};
use crate::geometry::{ConvexSet, Ellipsoid, Polytope, Pose};
use crate::par::Exec;
use crate::separation::SeparationKind;
use crate::verification::oracle_disjoint;

/// Oracle distances or margins closer to zero than this are boundary cases.
pub const BOUNDARY_BAND: f64 = 1e-6;
/// Membership slack of the sampling oracle.
pub const MEMBERSHIP_TOL: f64 = 1e-6;
/// Boundary samples per inner set for the containment oracle.
pub const BOUNDARY_SAMPLES: usize = 10_000;
/// Equality slack accepted for an S-procedure certificate.
const CERT_EQ_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub instance: usize,
    /// Oracle distance (separation) or margin (containment).
    pub oracle: f64,
    pub residual_feasible: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub instances: usize,
    pub judged: usize,
    pub agree: usize,
    pub boundary: usize,
    /// Residuals feasible while the oracle says the property fails.
    pub false_positives: usize,
    /// Residuals infeasible while the oracle says the property holds.
    pub false_negatives: usize,
    /// Instances where the property holds (judged only).
    pub positives: usize,
    pub disagreements: Vec<Disagreement>,
}

impl SuiteOutcome {
    pub fn all_agree(&self) -> bool {
        self.false_positives == 0 && self.false_negatives == 0
    }

    fn push(&mut self, i: usize, oracle: f64, holds: bool, residual_feasible: bool) {
        self.instances += 1;
        if oracle.abs() < BOUNDARY_BAND {
            self.boundary += 1;
            return;
        }
        self.judged += 1;
        self.positives += usize::from(holds);
        match (holds, residual_feasible) {
            (true, true) | (false, false) => self.agree += 1,
            (false, true) => self.false_positives += 1,
            (true, false) => self.false_negatives += 1,
        }
        if holds != residual_feasible {
            self.disagreements.push(Disagreement {
                instance: i,
                oracle,
                residual_feasible,
            });
        }
    }
}

fn rng_for(seed: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Convex polygon with 3 to 8 vertices on a random ellipse around `center`.
pub fn random_polygon(rng: &mut ChaCha8Rng, center: [f64; 2], scale: f64) -> Polytope {
    let n = rng.random_range(3..=8);
    let (a, b) = (
        scale * rng.random_range(0.5..1.5),
        scale * rng.random_range(0.5..1.5),
    );
    let rot = rng.random_range(0.0..TAU);
    loop {
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
        angles.sort_by(f64::total_cmp);
        // keep vertices apart and the polygon fat enough to be well posed
        let gaps_ok = (0..n).all(|i| {
            let next = if i + 1 < n {
                angles[i + 1]
            } else {
                angles[0] + TAU
            };
            next - angles[i] > 0.15 && next - angles[i] < 0.9 * std::f64::consts::PI
        });
        if !gaps_ok {
            continue;
        }
        let (c, s) = (rot.cos(), rot.sin());
        let pts: Vec<[f64; 2]> = angles
            .iter()
            .map(|t| {
                let (x, y) = (a * t.cos(), b * t.sin());
                [center[0] + c * x - s * y, center[1] + s * x + c * y]
            })
            .collect();
        if let Ok(p) = Polytope::from_vertices_2d(&pts) {
            return p;
        }
    }
}

/// Ellipse with random semi-axes and orientation around `center`.
pub fn random_ellipse(rng: &mut ChaCha8Rng, center: [f64; 2], scale: f64) -> Ellipsoid {
    let axes = [
        scale * rng.random_range(0.4..1.5),
        scale * rng.random_range(0.4..1.5),
    ];
    Ellipsoid::axis_aligned(&[0.0, 0.0], &axes)
        .and_then(|e| {
            e.transformed(&Pose::planar(
                center[0],
                center[1],
                rng.random_range(0.0..TAU),
            ))
        })
        .expect("semi-axes are positive")
}

fn random_center(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 2] {
    let (r, t) = (
        radius * rng.random_range(0.0f64..1.0).sqrt(),
        rng.random_range(0.0..TAU),
    );
    [r * t.cos(), r * t.sin()]
}

/// A random planar pair for a separation kind; about half overlap.
pub fn random_separation_pair(
    kind: SeparationKind,
    rng: &mut ChaCha8Rng,
) -> Result<(ConvexSet, ConvexSet)> {
    let c2 = random_center(rng, 4.0);
    let pair = match kind {
        SeparationKind::PolyPoly => (
            random_polygon(rng, [0.0, 0.0], 1.0).into(),
            random_polygon(rng, c2, 1.0).into(),
        ),
        SeparationKind::EllEll => (
            random_ellipse(rng, [0.0, 0.0], 1.0).into(),
            random_ellipse(rng, c2, 1.0).into(),
        ),
        SeparationKind::PolyEll => (
            random_polygon(rng, [0.0, 0.0], 1.0).into(),
            random_ellipse(rng, c2, 1.0).into(),
        ),
        other => {
            return Err(Error::Unsupported(format!(
                "equivalence suite for {} (sufficient-only kind)",
                other.name()
            )))
        }
    };
    Ok(pair)
}

/// Hyperplane residual feasibility versus the exact distance oracle.
/// Feasible residuals must also come with a plane the oracle accepts.
pub fn separation_suite(
    kind: SeparationKind,
    n: usize,
    seed: u64,
    exec: Exec,
) -> Result<SuiteOutcome> {
    let results = exec.map_range(n, |i| -> Result<(f64, bool, bool)> {
        let mut rng = rng_for(seed, i);
        let (s1, s2) = random_separation_pair(kind, &mut rng)?;
        let oracle = oracle_disjoint(&s1, &s2, 0.0)?;
        let feas = separation_feasibility(kind, &s1, &s2)?;
        Ok((
            oracle.signed_distance,
            oracle.signed_distance > 0.0,
            feas.value <= 0.0,
        ))
    });
    let mut out = SuiteOutcome::default();
    for (i, r) in results.into_iter().enumerate() {
        let (d, disjoint, feasible) = r?;
        out.push(i, d, disjoint, feasible);
    }
    Ok(out)
}

/// Dual certificate feasibility versus the exact distance oracle on
/// polygon pairs.
pub fn dual_suite(n: usize, seed: u64, exec: Exec) -> Result<SuiteOutcome> {
    let results = exec.map_range(n, |i| -> Result<(f64, bool, bool)> {
        let mut rng = rng_for(seed, i);
        let c2 = random_center(&mut rng, 4.0);
        let (a, b) = (
            random_polygon(&mut rng, [0.0, 0.0], 1.0),
            random_polygon(&mut rng, c2, 1.0),
        );
        let oracle = oracle_disjoint(&a.clone().into(), &b.clone().into(), 0.0)?;
        let cert = dual_feasibility(&a, &b)?;
        let sound = cert.eq_error <= 1e-9 && cert.other_rows <= 1e-9;
        Ok((
            oracle.signed_distance,
            oracle.signed_distance > 0.0,
            sound && cert.value <= 0.0,
        ))
    });
    let mut out = SuiteOutcome::default();
    for (i, r) in results.into_iter().enumerate() {
        let (d, disjoint, feasible) = r?;
        out.push(i, d, disjoint, feasible);
    }
    Ok(out)
}

/// Boundary points of a planar set: the vertices plus uniform points along
/// the perimeter, or uniform angles on an ellipse.
pub fn boundary_samples(set: &ConvexSet, count: usize) -> Vec<DVector<f64>> {
    match set {
        ConvexSet::Ellipsoid(e) => (0..count)
            .map(|k| {
                let t = TAU * k as f64 / count as f64;
                e.boundary_point(&DVector::from_column_slice(&[t.cos(), t.sin()]))
            })
            .collect(),
        ConvexSet::Polytope(p) => {
            // vertices in angular order around the centroid
            let v = p.vertices();
            let m = v.ncols();
            let c = v.column_mean();
            let mut idx: Vec<usize> = (0..m).collect();
            idx.sort_by(|&i, &j| {
                let ai = (v[(1, i)] - c[1]).atan2(v[(0, i)] - c[0]);
                let aj = (v[(1, j)] - c[1]).atan2(v[(0, j)] - c[0]);
                ai.total_cmp(&aj)
            });
            let lens: Vec<f64> = (0..m)
                .map(|k| (v.column(idx[(k + 1) % m]) - v.column(idx[k])).norm())
                .collect();
            let total: f64 = lens.iter().sum();
            let mut out: Vec<DVector<f64>> = (0..m).map(|k| v.column(k).into_owned()).collect();
            for s in 0..count.saturating_sub(m) {
                let mut d = total * s as f64 / (count - m) as f64;
                let mut k = 0;
                while k + 1 < m && d > lens[k] {
                    d -= lens[k];
                    k += 1;
                }
                let (a, b) = (v.column(idx[k]), v.column(idx[(k + 1) % m]));
                out.push(a + (b - a) * (d / lens[k]).min(1.0));
            }
            out
        }
    }
}

/// Exact containment margin `min over the inner set of the outer slack`,
/// positive when contained: support values for polytope canvases, the
/// extreme boundary level otherwise.
fn containment_margin(inner: &ConvexSet, outer: &ConvexSet) -> f64 {
    match outer {
        ConvexSet::Polytope(q) => (0..q.n_faces())
            .map(|i| q.offsets()[i] - inner.support(&q.faces().row(i).transpose()))
            .fold(f64::INFINITY, f64::min),
        ConvexSet::Ellipsoid(e) => boundary_samples(inner, BOUNDARY_SAMPLES)
            .iter()
            .map(|p| -e.level(p))
            .fold(f64::INFINITY, f64::min),
    }
}

/// A random planar (inner, outer) pair for a containment kind; about half
/// contained.
pub fn random_containment_pair(
    kind: ContainmentKind,
    rng: &mut ChaCha8Rng,
) -> (ConvexSet, ConvexSet) {
    let c = random_center(rng, 1.5);
    let (inner_poly, outer_poly) = match kind {
        ContainmentKind::PolyInPoly => (true, true),
        ContainmentKind::PolyInEll => (true, false),
        ContainmentKind::EllInPoly => (false, true),
        ContainmentKind::EllInEll => (false, false),
    };
    let inner: ConvexSet = if inner_poly {
        random_polygon(rng, c, 0.6).into()
    } else {
        random_ellipse(rng, c, 0.6).into()
    };
    let outer: ConvexSet = if outer_poly {
        random_polygon(rng, [0.0, 0.0], 2.2).into()
    } else {
        random_ellipse(rng, [0.0, 0.0], 2.2).into()
    };
    (inner, outer)
}

/// Containment residual feasibility versus dense boundary sampling of the
/// inner set. The S-procedure is feasible when a certificate is found and
/// its residuals check out.
pub fn containment_suite(
    kind: ContainmentKind,
    n: usize,
    seed: u64,
    exec: Exec,
) -> Result<SuiteOutcome> {
    let results = exec.map_range(n, |i| -> Result<(f64, bool, bool)> {
        let mut rng = rng_for(seed, i);
        let (inner, outer) = random_containment_pair(kind, &mut rng);
        let sampled_inside = boundary_samples(&inner, BOUNDARY_SAMPLES)
            .iter()
            .all(|p| outer.contains(p, MEMBERSHIP_TOL));
        let margin = containment_margin(&inner, &outer);
        let feasible = match (&inner, &outer) {
            (ConvexSet::Polytope(p), ConvexSet::Polytope(q)) => {
                contain_poly_in_poly(p.vertices(), q)?.max() <= 0.0
            }
            (ConvexSet::Polytope(p), ConvexSet::Ellipsoid(e)) => {
                contain_poly_in_ell(p.vertices(), e)?.max() <= 0.0
            }
            (ConvexSet::Ellipsoid(e), ConvexSet::Polytope(q)) => {
                contain_ell_in_poly(e, q)?.max() <= 0.0
            }
            (ConvexSet::Ellipsoid(a), ConvexSet::Ellipsoid(b)) => {
                match ell_in_ell_certificate(a, b)? {
                    Some((lambda, y)) => {
                        let r = contain_ell_in_ell(a, b, lambda, &y)?;
                        r.eq.amax() <= CERT_EQ_TOL && r.ineq.max() <= 0.0
                    }
                    None => false,
                }
            }
        };
        Ok((margin, sampled_inside, feasible))
    });
    let mut out = SuiteOutcome::default();
    for (i, r) in results.into_iter().enumerate() {
        let (margin, inside, feasible) = r?;
        out.push(i, margin, inside, feasible);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_polygons_are_valid_and_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = random_polygon(&mut rng, [1.0, -1.0], 1.0);
            p.check_consistency(1e-9).unwrap();
            assert_eq!(p.n_faces(), p.n_vertices());
        }
    }

    #[test]
    fn boundary_samples_lie_on_the_boundary() {
        let sq: ConvexSet = Polytope::square(0.0, 0.0, 2.0).unwrap().into();
        let pts = boundary_samples(&sq, 400);
        assert_eq!(pts.len(), 400);
        for p in &pts {
            assert!((p[0].abs().max(p[1].abs()) - 1.0).abs() < 1e-12, "{p}");
        }
        let c: ConvexSet = Ellipsoid::circle(1.0, 2.0, 3.0).unwrap().into();
        for p in boundary_samples(&c, 100) {
            assert!(((p[0] - 1.0).hypot(p[1] - 2.0) - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn small_suites_agree() {
        for kind in [
            SeparationKind::PolyPoly,
            SeparationKind::EllEll,
            SeparationKind::PolyEll,
        ] {
            let o = separation_suite(kind, 40, 11, Exec::Sequential).unwrap();
            assert!(o.all_agree(), "{kind:?}: {o:?}");
            assert!(
                o.positives > 5 && o.positives + 5 < o.judged,
                "{kind:?} mix: {o:?}"
            );
        }
        for kind in ContainmentKind::ALL {
            let o = containment_suite(kind, 20, 11, Exec::Sequential).unwrap();
            assert!(o.all_agree(), "{kind:?}: {o:?}");
        }
        assert!(dual_suite(40, 11, Exec::Sequential).unwrap().all_agree());
    }

    #[test]
    fn sufficient_only_kinds_are_rejected() {
        assert!(
            separation_suite(SeparationKind::PointPolyReduced, 1, 0, Exec::Sequential).is_err()
        );
    }
}
