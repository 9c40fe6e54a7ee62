//! Small feasibility solves over the plane variables `(lambda, mu)` of one
//! separating-constraint block, used to cross-check the residual families
//! against the geometric oracle.
//!
//! Every exact planar kind is positively homogeneous in `(lambda, mu)`, so
//! the search runs over unit normals `lambda = (cos phi, sin phi)`, which
//! satisfy the norm guard. The residual rows are affine in `mu` with slope
//! `+1` or `-1`, so the best `mu` for a fixed normal has a closed form and
//! only the angle is searched numerically.

use nalgebra::DVector;

use crate::baseline_dual::dual_sep_poly_poly;
use crate::error::{Error, Result};
use crate::geometry::{ConvexSet, Hyperplane, Polytope};
use crate::separation::{sep_ell_ell, sep_poly_ell, sep_poly_poly, SeparationKind};

/// Best worst-case residual found, with the plane achieving it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFeasibility {
    /// `min_{lambda, mu} max_i r_i`; the block is feasible iff this is `<= 0`.
    pub value: f64,
    pub lambda: DVector<f64>,
    pub mu: f64,
}

/// Which residual rows carry `+mu` and which `-mu`; the guard row is last
/// and excluded.
fn residual_rows(
    kind: SeparationKind,
    s1: &ConvexSet,
    s2: &ConvexSet,
    h: &Hyperplane,
) -> Result<DVector<f64>> {
    let r = match (kind, s1, s2) {
        (SeparationKind::PolyPoly, ConvexSet::Polytope(a), ConvexSet::Polytope(b)) => {
            sep_poly_poly(a.vertices(), b.vertices(), h)?
        }
        (SeparationKind::EllEll, ConvexSet::Ellipsoid(a), ConvexSet::Ellipsoid(b)) => {
            sep_ell_ell(a, b, h)?
        }
        (SeparationKind::PolyEll, ConvexSet::Polytope(a), ConvexSet::Ellipsoid(b)) => {
            sep_poly_ell(a.vertices(), b, h)?
        }
        _ => {
            return Err(Error::Unsupported(format!(
                "feasibility search for {} with these operands",
                kind.name()
            )))
        }
    };
    Ok(r.rows(0, r.len() - 1).into_owned())
}

/// `min_mu max_i (c_i + s_i mu)` for unit normal angle `phi`.
fn best_for_angle(
    kind: SeparationKind,
    s1: &ConvexSet,
    s2: &ConvexSet,
    phi: f64,
) -> Result<(f64, f64)> {
    let lambda = DVector::from_column_slice(&[phi.cos(), phi.sin()]);
    let r0 = residual_rows(kind, s1, s2, &Hyperplane::new(lambda.clone(), 0.0)?)?;
    let r1 = residual_rows(kind, s1, s2, &Hyperplane::new(lambda, 1.0)?)?;
    let (mut up, mut down) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..r0.len() {
        if r1[i] > r0[i] {
            up = up.max(r0[i]);
        } else {
            down = down.max(r0[i]);
        }
    }
    // max(up + mu, down - mu) is smallest where both sides meet
    let mu = 0.5 * (down - up);
    Ok((0.5 * (up + down), mu))
}

/// Searches unit normals for the plane with the smallest worst residual.
pub fn separation_feasibility(
    kind: SeparationKind,
    s1: &ConvexSet,
    s2: &ConvexSet,
) -> Result<PlaneFeasibility> {
    use std::f64::consts::TAU;
    const SWEEP: usize = 720;
    const STARTS: usize = 8;
    if s1.dim() != 2 || s2.dim() != 2 {
        return Err(Error::Unsupported("feasibility search is planar".into()));
    }
    let step = TAU / SWEEP as f64;
    let f = |phi: f64| best_for_angle(kind, s1, s2, phi).map(|v| v.0);
    let samples: Vec<f64> = (0..SWEEP)
        .map(|i| f(i as f64 * step))
        .collect::<Result<_>>()?;
    let mut seeds: Vec<usize> = (0..SWEEP)
        .filter(|&i| {
            samples[i] <= samples[(i + SWEEP - 1) % SWEEP] && samples[i] <= samples[(i + 1) % SWEEP]
        })
        .collect();
    seeds.sort_by(|&a, &b| samples[a].total_cmp(&samples[b]));
    seeds.truncate(STARTS);
    let mut best = (f64::INFINITY, 0.0);
    for i in seeds {
        let phi0 = i as f64 * step;
        let (v, phi) = golden_min(&f, phi0 - step, phi0 + step)?;
        if v < best.0 {
            best = (v, phi);
        }
    }
    let (value, mu) = best_for_angle(kind, s1, s2, best.1)?;
    Ok(PlaneFeasibility {
        value,
        lambda: DVector::from_column_slice(&[best.1.cos(), best.1.sin()]),
        mu,
    })
}

/// Dual certificate found for a polytope pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DualFeasibility {
    /// Margin row of the certificate; feasible iff `<= 0`.
    pub value: f64,
    /// Largest of the remaining inequality rows (norm band and signs),
    /// zero up to roundoff by construction.
    pub other_rows: f64,
    /// Largest equality residual in absolute value.
    pub eq_error: f64,
    pub lam: DVector<f64>,
    pub mu: DVector<f64>,
}

/// Nonnegative face weights `x` with `A^T x = w` of least `b^T x`, built
/// from at most two planar face normals.
fn conic_weights(p: &Polytope, w: &DVector<f64>) -> Option<DVector<f64>> {
    let (a, b) = (p.faces(), p.offsets());
    let m = a.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut offer = |x: DVector<f64>| {
        let cost = b.dot(&x);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, x));
        }
    };
    for i in 0..m {
        let (ax, ay) = (a[(i, 0)], a[(i, 1)]);
        // single face parallel to w
        let along = ax * w[0] + ay * w[1];
        if along > 0.0 && (ax * w[1] - ay * w[0]).abs() <= 1e-12 * w.norm() {
            let mut x = DVector::zeros(m);
            x[i] = along / (ax * ax + ay * ay);
            offer(x);
        }
        for j in i + 1..m {
            let (bx, by) = (a[(j, 0)], a[(j, 1)]);
            let det = ax * by - ay * bx;
            if det.abs() < 1e-12 {
                continue;
            }
            let s = (w[0] * by - w[1] * bx) / det;
            let t = (ax * w[1] - ay * w[0]) / det;
            if s >= 0.0 && t >= 0.0 {
                let mut x = DVector::zeros(m);
                x[i] = s;
                x[j] = t;
                offer(x);
            }
        }
    }
    best.map(|(_, x)| x)
}

/// Searches unit directions for the dual certificate of smallest margin:
/// for a direction `w` the best multipliers give margin
/// `h_body(w) + h_obstacle(-w)`, which is minimized over the angle; the
/// certificate itself is then rebuilt and evaluated through the dual
/// residual rows.
pub fn dual_feasibility(body: &Polytope, obstacle: &Polytope) -> Result<DualFeasibility> {
    use std::f64::consts::TAU;
    const SWEEP: usize = 720;
    if body.dim() != 2 || obstacle.dim() != 2 {
        return Err(Error::Unsupported(
            "dual feasibility search is planar".into(),
        ));
    }
    let dir = |phi: f64| DVector::from_column_slice(&[phi.cos(), phi.sin()]);
    let f = |phi: f64| -> Result<f64> {
        let w = dir(phi);
        Ok(body.support(&w) + obstacle.support(&-&w))
    };
    let step = TAU / SWEEP as f64;
    let samples: Vec<f64> = (0..SWEEP)
        .map(|i| f(i as f64 * step))
        .collect::<Result<_>>()?;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..SWEEP {
        if samples[i] <= samples[(i + SWEEP - 1) % SWEEP] && samples[i] <= samples[(i + 1) % SWEEP]
        {
            let phi0 = i as f64 * step;
            let (v, phi) = golden_min(&f, phi0 - step, phi0 + step)?;
            if v < best.0 {
                best = (v, phi);
            }
        }
    }
    let w = dir(best.1);
    let (Some(lam), Some(mu)) = (conic_weights(body, &w), conic_weights(obstacle, &-&w)) else {
        return Err(Error::InvalidArgument(
            "polytope faces do not span the plane".into(),
        ));
    };
    let r = dual_sep_poly_poly(body, obstacle, &lam, &mu)?;
    Ok(DualFeasibility {
        value: r.ineq[0],
        other_rows: r.ineq.rows(1, r.ineq.len() - 1).max(),
        eq_error: r.eq.amax(),
        lam,
        mu,
    })
}

fn golden_min<F: Fn(f64) -> Result<f64>>(f: &F, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a).abs() > 1e-13 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc < fd { (fc, c) } else { (fd, d) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Ellipsoid, Polytope};
    use approx::assert_relative_eq;

    #[test]
    fn separated_squares_have_negative_value() {
        let a: ConvexSet = Polytope::square(0.0, 0.0, 1.0).unwrap().into();
        let b: ConvexSet = Polytope::square(3.0, 0.0, 1.0).unwrap().into();
        // body (first) on the upper side, so the normal points from b to a
        let r = separation_feasibility(SeparationKind::PolyPoly, &a, &b).unwrap();
        assert_relative_eq!(r.value, -1.0, epsilon = 1e-9);
        assert_relative_eq!(r.lambda[0], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn overlapping_circles_are_infeasible() {
        let a: ConvexSet = Ellipsoid::circle(0.0, 0.0, 1.0).unwrap().into();
        let b: ConvexSet = Ellipsoid::circle(1.0, 0.0, 1.0).unwrap().into();
        let r = separation_feasibility(SeparationKind::EllEll, &a, &b).unwrap();
        assert_relative_eq!(r.value, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn dual_certificate_tracks_the_gap() {
        let a = Polytope::square(0.0, 0.0, 1.0).unwrap();
        let b = Polytope::square(3.0, 0.5, 1.0).unwrap();
        let r = dual_feasibility(&a, &b).unwrap();
        // gap of 2 along x, measured as h_a(w) + h_b(-w)
        assert_relative_eq!(r.value, -2.0, epsilon = 1e-9);
        assert!(r.eq_error < 1e-12 && r.other_rows <= 1e-12);
        let c = Polytope::square(0.5, 0.0, 1.0).unwrap();
        assert!(dual_feasibility(&a, &c).unwrap().value > 0.0);
    }

    #[test]
    fn plane_found_satisfies_residuals() {
        let a: ConvexSet = Polytope::square(0.0, 0.0, 1.0).unwrap().into();
        let b: ConvexSet = Ellipsoid::circle(2.0, 1.5, 0.7).unwrap().into();
        let r = separation_feasibility(SeparationKind::PolyEll, &a, &b).unwrap();
        assert!(r.value < 0.0);
        let h = Hyperplane::new(r.lambda.clone(), r.mu).unwrap();
        let (ConvexSet::Polytope(p), ConvexSet::Ellipsoid(e)) = (&a, &b) else {
            unreachable!()
        };
        let res = sep_poly_ell(p.vertices(), e, &h).unwrap();
        assert!(res.iter().all(|v| *v <= 1e-12), "{res}");
    }
}
