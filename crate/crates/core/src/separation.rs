//! Separating constraints: two convex sets are disjoint iff some hyperplane
//! `lambda^T s = mu` keeps one on each side.
//!
//! Side convention, fixed for the whole crate:
//!
//! | kind | first operand | second operand |
//! |---|---|---|
//! | `PolyPoly`, `PolyEll`, `PointPoly`, normalized, fixed component | `lambda^T s >= mu` | `lambda^T s <= mu` |
//! | `EllEll` | `lambda^T s <= mu` | `lambda^T s >= mu` |
//! | `PointPolyReduced` | `lambda^T s >= lambda^T p` | `lambda^T s <= lambda^T p` |
//!
//! Every block ends with the smooth norm guard `eps^2 - |lambda|^2 <= 0`.
//! A violated block is a positive residual, never an error; errors are
//! reserved for malformed inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    Ellipsoid, Hyperplane, PlacedEllipsoid, PlacedPoint, PlacedPolytope, NORM_EPS,
};
use crate::residual::{BlockEval, Rows, Slot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparationKind {
    PolyPoly,
    EllEll,
    PolyEll,
    PointPoly,
    PointPolyReduced,
    PolyPolyNormalized,
    PolyPolyFixedComponent,
}

impl SeparationKind {
    pub const ALL: [SeparationKind; 7] = [
        SeparationKind::PolyPoly,
        SeparationKind::EllEll,
        SeparationKind::PolyEll,
        SeparationKind::PointPoly,
        SeparationKind::PointPolyReduced,
        SeparationKind::PolyPolyNormalized,
        SeparationKind::PolyPolyFixedComponent,
    ];

    /// Number of auxiliary variables one block of this kind owns.
    pub fn aux_count(self, dim: usize) -> usize {
        match self {
            SeparationKind::PolyPoly
            | SeparationKind::EllEll
            | SeparationKind::PolyEll
            | SeparationKind::PointPoly => dim + 1,
            SeparationKind::PointPolyReduced | SeparationKind::PolyPolyNormalized => dim,
            SeparationKind::PolyPolyFixedComponent => 2,
        }
    }

    /// True for the variants that are necessary and sufficient.
    pub fn is_exact(self) -> bool {
        matches!(
            self,
            SeparationKind::PolyPoly
                | SeparationKind::EllEll
                | SeparationKind::PolyEll
                | SeparationKind::PointPoly
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            SeparationKind::PolyPoly => "poly_poly",
            SeparationKind::EllEll => "ell_ell",
            SeparationKind::PolyEll => "poly_ell",
            SeparationKind::PointPoly => "point_poly",
            SeparationKind::PointPolyReduced => "point_poly_reduced",
            SeparationKind::PolyPolyNormalized => "poly_poly_normalized",
            SeparationKind::PolyPolyFixedComponent => "poly_poly_fixed_component",
        }
    }

    /// Whether the first operand sits on the `lambda^T s >= mu` side.
    pub fn first_on_upper_side(self) -> bool {
        !matches!(self, SeparationKind::EllEll)
    }
}

/// Placement of one separation block inside a transcribed problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparationConstraintBlock {
    pub kind: SeparationKind,
    pub body_index: usize,
    pub obstacle_index: usize,
    pub step_index: usize,
    pub aux_offset: usize,
}

/// One argument of a separation block.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Point(&'a PlacedPoint),
    Poly(&'a PlacedPolytope),
    Ell(&'a PlacedEllipsoid),
}

impl Operand<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Operand::Point(p) => p.point.len(),
            Operand::Poly(p) => p.dim(),
            Operand::Ell(e) => e.dim(),
        }
    }

    pub fn n_tangents(&self) -> usize {
        match self {
            Operand::Point(p) => p.n_tangents(),
            Operand::Poly(p) => p.n_tangents(),
            Operand::Ell(e) => e.n_tangents(),
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            Operand::Point(_) => "point",
            Operand::Poly(_) => "polytope",
            Operand::Ell(_) => "ellipsoid",
        }
    }
}

/// Hyperplane normal and offset as functions of the aux variables.
struct Normal {
    n: DVector<f64>,
    /// `dim x n_aux`
    dn: DMatrix<f64>,
    mu: f64,
    dmu: DVector<f64>,
}

fn normal_from_aux(kind: SeparationKind, dim: usize, aux: &[f64]) -> Normal {
    let na = aux.len();
    match kind {
        SeparationKind::PolyPolyFixedComponent => {
            let mut dn = DMatrix::zeros(2, 2);
            dn[(0, 0)] = 1.0;
            Normal {
                n: DVector::from_column_slice(&[aux[0], 1.0]),
                dn,
                mu: aux[1],
                dmu: DVector::from_column_slice(&[0.0, 1.0]),
            }
        }
        SeparationKind::PolyPolyNormalized | SeparationKind::PointPolyReduced => Normal {
            n: DVector::from_column_slice(&aux[..dim]),
            dn: DMatrix::identity(dim, na),
            mu: 1.0,
            dmu: DVector::zeros(na),
        },
        _ => {
            let mut dmu = DVector::zeros(na);
            dmu[dim] = 1.0;
            Normal {
                n: DVector::from_column_slice(&aux[..dim]),
                dn: DMatrix::identity(dim, na),
                mu: aux[dim],
                dmu,
            }
        }
    }
}

/// Rows `sigma (n^T v - mu) <= 0` for every vertex (or the single point).
fn linear_side(rows: &mut Rows, op: Operand<'_>, slot: Slot, sigma: f64, nm: &Normal) {
    let (verts, tangents): (DMatrix<f64>, Vec<DMatrix<f64>>) = match op {
        Operand::Point(p) => (
            DMatrix::from_column_slice(p.point.len(), 1, p.point.as_slice()),
            p.d_point
                .iter()
                .map(|d| DMatrix::from_column_slice(d.len(), 1, d.as_slice()))
                .collect(),
        ),
        Operand::Poly(p) => (p.vertices.clone(), p.d_vertices.clone()),
        Operand::Ell(_) => unreachable!("linear side needs vertices"),
    };
    let dnt_v = nm.dn.transpose() * &verts; // n_aux x m
    for (j, v) in verts.column_iter().enumerate() {
        let r = rows.push(sigma * (nm.n.dot(&v) - nm.mu));
        for a in 0..nm.dmu.len() {
            rows.aux(r, a, sigma * (dnt_v[(a, j)] - nm.dmu[a]));
        }
        for (t, dv) in tangents.iter().enumerate() {
            rows.tangent(slot, r, t, sigma * nm.n.dot(&dv.column(j)));
        }
    }
}

/// Row `support(sigma n) - sigma mu <= 0`: `sigma = +1` keeps the ellipsoid
/// on the `<=` side, `-1` on the `>=` side.
fn ellipsoid_side(
    rows: &mut Rows,
    ell: &PlacedEllipsoid,
    slot: Slot,
    sigma: f64,
    nm: &Normal,
) -> Result<()> {
    let wn = &ell.shape_inv * &nm.n;
    let q = nm.n.dot(&wn);
    if !(q > 1e-300) || !q.is_finite() {
        return Err(Error::NormTooSmall {
            norm: nm.n.norm(),
            eps: NORM_EPS,
        });
    }
    let root = q.sqrt();
    let r = rows.push(root + sigma * (nm.n.dot(&ell.center) - nm.mu));
    // d/dn of the row, then chained through dn/daux
    let g = &wn / root + &ell.center * sigma;
    let ga = nm.dn.transpose() * g;
    for a in 0..ga.len() {
        rows.aux(r, a, ga[a] - sigma * nm.dmu[a]);
    }
    for t in 0..ell.n_tangents() {
        let dq = nm.n.dot(&(&ell.d_shape_inv[t] * &nm.n));
        rows.tangent(
            slot,
            r,
            t,
            dq / (2.0 * root) + sigma * nm.n.dot(&ell.d_center[t]),
        );
    }
    Ok(())
}

fn guard_row(rows: &mut Rows, kind: SeparationKind, aux: &[f64], dim: usize) {
    let free = match kind {
        SeparationKind::PolyPolyFixedComponent => 1,
        _ => dim,
    };
    let sq: f64 = aux[..free].iter().map(|x| x * x).sum();
    let r = rows.push(NORM_EPS * NORM_EPS - sq);
    for (a, x) in aux[..free].iter().enumerate() {
        rows.aux(r, a, -2.0 * x);
    }
}

/// Evaluates one separation block and all its derivatives.
///
/// `aux` holds the block's own variables: `(lambda, mu)` for the exact
/// kinds, `lambda` for the normalized and reduced kinds, and
/// `(lambda_free, mu)` for the fixed-component kind.
pub fn evaluate(
    kind: SeparationKind,
    first: Operand<'_>,
    second: Operand<'_>,
    aux: &[f64],
) -> Result<BlockEval> {
    let dim = first.dim();
    if second.dim() != dim {
        return Err(Error::dim(
            "separation operand dimensions",
            dim,
            second.dim(),
        ));
    }
    let expect = matches!(
        (kind, first, second),
        (SeparationKind::PolyPoly, Operand::Poly(_), Operand::Poly(_))
            | (
                SeparationKind::PolyPolyNormalized,
                Operand::Poly(_),
                Operand::Poly(_)
            )
            | (
                SeparationKind::PolyPolyFixedComponent,
                Operand::Poly(_),
                Operand::Poly(_)
            )
            | (SeparationKind::EllEll, Operand::Ell(_), Operand::Ell(_))
            | (SeparationKind::PolyEll, Operand::Poly(_), Operand::Ell(_))
            | (
                SeparationKind::PointPoly,
                Operand::Point(_),
                Operand::Poly(_)
            )
            | (
                SeparationKind::PointPolyReduced,
                Operand::Point(_),
                Operand::Poly(_)
            )
    );
    if !expect {
        return Err(Error::Unsupported(format!(
            "{} block with operands ({}, {})",
            kind.name(),
            first.tag(),
            second.tag()
        )));
    }
    if kind == SeparationKind::PolyPolyFixedComponent && dim != 2 {
        return Err(Error::dim("fixed-component separation dimension", 2, dim));
    }
    let na = kind.aux_count(dim);
    if aux.len() != na {
        return Err(Error::dim(
            format!("{} aux variables", kind.name()),
            na,
            aux.len(),
        ));
    }
    crate::geometry::check_finite(aux, "separation aux variables")?;

    let mut rows = Rows::new(na, first.n_tangents(), second.n_tangents());
    let mut nm = normal_from_aux(kind, dim, aux);
    match (kind, first, second) {
        (SeparationKind::EllEll, Operand::Ell(a), Operand::Ell(b)) => {
            ellipsoid_side(&mut rows, a, Slot::First, 1.0, &nm)?;
            ellipsoid_side(&mut rows, b, Slot::Second, -1.0, &nm)?;
        }
        (SeparationKind::PolyEll, _, Operand::Ell(b)) => {
            linear_side(&mut rows, first, Slot::First, -1.0, &nm);
            ellipsoid_side(&mut rows, b, Slot::Second, 1.0, &nm)?;
        }
        (SeparationKind::PointPolyReduced, Operand::Point(p), _) => {
            // mu is tied to the point: mu = lambda^T p
            nm.mu = nm.n.dot(&p.point);
            nm.dmu = nm.dn.transpose() * &p.point;
            let start = rows.len();
            linear_side(&mut rows, second, Slot::Second, 1.0, &nm);
            let end = rows.len();
            for r in start..end {
                for (t, dp) in p.d_point.iter().enumerate() {
                    rows.tangent(Slot::First, r, t, -nm.n.dot(dp));
                }
            }
        }
        _ => {
            linear_side(&mut rows, first, Slot::First, -1.0, &nm);
            linear_side(&mut rows, second, Slot::Second, 1.0, &nm);
        }
    }
    guard_row(&mut rows, kind, aux, dim);
    Ok(rows.finish())
}

/// Hyperplane encoded by a block's aux variables, in the block's own side
/// convention. `point` is required for the reduced kind.
pub fn plane_from_aux(
    kind: SeparationKind,
    aux: &[f64],
    point: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, f64)> {
    match kind {
        SeparationKind::PolyPolyFixedComponent => {
            Ok((DVector::from_column_slice(&[aux[0], 1.0]), aux[1]))
        }
        SeparationKind::PolyPolyNormalized => Ok((DVector::from_column_slice(aux), 1.0)),
        SeparationKind::PointPolyReduced => {
            let p = point.ok_or_else(|| {
                Error::InvalidArgument("reduced separation needs the vehicle point".into())
            })?;
            let l = DVector::from_column_slice(aux);
            let mu = l.dot(p);
            Ok((l, mu))
        }
        _ => {
            let dim = aux.len() - 1;
            Ok((DVector::from_column_slice(&aux[..dim]), aux[dim]))
        }
    }
}

fn placed_vertices(v: &DMatrix<f64>) -> PlacedPolytope {
    PlacedPolytope {
        vertices: v.clone(),
        d_vertices: Vec::new(),
        faces: DMatrix::zeros(0, v.nrows()),
        offsets: DVector::zeros(0),
        d_faces: Vec::new(),
        d_offsets: Vec::new(),
    }
}

fn full_aux(h: &Hyperplane) -> Vec<f64> {
    let mut aux: Vec<f64> = h.lambda.iter().copied().collect();
    aux.push(h.mu);
    aux
}

/// Body polytope `v1` on the `>=` side, obstacle polytope `v2` on the `<=` side.
pub fn sep_poly_poly(v1: &DMatrix<f64>, v2: &DMatrix<f64>, h: &Hyperplane) -> Result<DVector<f64>> {
    let (a, b) = (placed_vertices(v1), placed_vertices(v2));
    Ok(evaluate(
        SeparationKind::PolyPoly,
        Operand::Poly(&a),
        Operand::Poly(&b),
        &full_aux(h),
    )?
    .values)
}

/// `ell1` on the `<=` side, `ell2` on the `>=` side.
pub fn sep_ell_ell(ell1: &Ellipsoid, ell2: &Ellipsoid, h: &Hyperplane) -> Result<DVector<f64>> {
    let (a, b) = (PlacedEllipsoid::fixed(ell1), PlacedEllipsoid::fixed(ell2));
    Ok(evaluate(
        SeparationKind::EllEll,
        Operand::Ell(&a),
        Operand::Ell(&b),
        &full_aux(h),
    )?
    .values)
}

/// Polytope on the `>=` side, ellipsoid on the `<=` side.
pub fn sep_poly_ell(v: &DMatrix<f64>, ell: &Ellipsoid, h: &Hyperplane) -> Result<DVector<f64>> {
    let (a, b) = (placed_vertices(v), PlacedEllipsoid::fixed(ell));
    Ok(evaluate(
        SeparationKind::PolyEll,
        Operand::Poly(&a),
        Operand::Ell(&b),
        &full_aux(h),
    )?
    .values)
}

/// Point on the `>=` side, polytope on the `<=` side.
pub fn sep_point_poly(p: &DVector<f64>, v: &DMatrix<f64>, h: &Hyperplane) -> Result<DVector<f64>> {
    let (a, b) = (PlacedPoint::fixed(p.clone()), placed_vertices(v));
    Ok(evaluate(
        SeparationKind::PointPoly,
        Operand::Point(&a),
        Operand::Poly(&b),
        &full_aux(h),
    )?
    .values)
}

/// `lambda^T V <= lambda^T p`: the plane passes through the point. Only
/// sufficient, since it forbids planes that leave a gap on the point side.
pub fn sep_point_poly_reduced(
    p: &DVector<f64>,
    v: &DMatrix<f64>,
    lambda: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (a, b) = (PlacedPoint::fixed(p.clone()), placed_vertices(v));
    Ok(evaluate(
        SeparationKind::PointPolyReduced,
        Operand::Point(&a),
        Operand::Poly(&b),
        lambda.as_slice(),
    )?
    .values)
}

/// `lambda^T V1 >= 1`, `lambda^T V2 <= 1`. Only sufficient: planes through
/// the origin cannot be expressed.
pub fn sep_poly_poly_normalized(
    v1: &DMatrix<f64>,
    v2: &DMatrix<f64>,
    lambda: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (a, b) = (placed_vertices(v1), placed_vertices(v2));
    Ok(evaluate(
        SeparationKind::PolyPolyNormalized,
        Operand::Poly(&a),
        Operand::Poly(&b),
        lambda.as_slice(),
    )?
    .values)
}

/// Planar normal `(lambda, 1)`. Only sufficient: vertical planes are out
/// of reach.
pub fn sep_poly_poly_fixed_component(
    v1: &DMatrix<f64>,
    v2: &DMatrix<f64>,
    lambda_free: f64,
    mu: f64,
) -> Result<DVector<f64>> {
    let (a, b) = (placed_vertices(v1), placed_vertices(v2));
    Ok(evaluate(
        SeparationKind::PolyPolyFixedComponent,
        Operand::Poly(&a),
        Operand::Poly(&b),
        &[lambda_free, mu],
    )?
    .values)
}
