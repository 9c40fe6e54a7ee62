//! Containing constraints: a moving convex body stays inside a fixed convex
//! canvas set.
//!
//! - polytope in polytope / ellipsoid: every vertex satisfies the canvas
//!   inequality (convexity reduces the set condition to its vertices);
//! - ellipsoid in polytope: the body's support value along each face normal
//!   stays below the face offset;
//! - ellipsoid in ellipsoid: S-procedure. The block matrix `G(lambda)` must be
//!   positive semidefinite for some `lambda >= 0`; it is written as
//!   `G = Y Y^T` with `Y` lower triangular and a nonnegative diagonal, which
//!   turns the matrix inequality into smooth equalities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ellipsoid, PlacedEllipsoid, PlacedPolytope, Polytope};
use crate::residual::{Rows, Slot, SplitEval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainmentKind {
    PolyInPoly,
    PolyInEll,
    EllInEll,
    EllInPoly,
}

impl ContainmentKind {
    pub const ALL: [ContainmentKind; 4] = [
        ContainmentKind::PolyInPoly,
        ContainmentKind::PolyInEll,
        ContainmentKind::EllInEll,
        ContainmentKind::EllInPoly,
    ];

    /// `1 + (N+1)(N+2)/2` for the S-procedure (multiplier plus triangular
    /// factor), zero otherwise.
    pub fn aux_count(self, dim: usize) -> usize {
        match self {
            ContainmentKind::EllInEll => 1 + tri_len(dim + 1),
            _ => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ContainmentKind::PolyInPoly => "poly_in_poly",
            ContainmentKind::PolyInEll => "poly_in_ell",
            ContainmentKind::EllInEll => "ell_in_ell",
            ContainmentKind::EllInPoly => "ell_in_poly",
        }
    }

    pub fn of(body_is_polytope: bool, canvas_is_polytope: bool) -> Self {
        match (body_is_polytope, canvas_is_polytope) {
            (true, true) => ContainmentKind::PolyInPoly,
            (true, false) => ContainmentKind::PolyInEll,
            (false, true) => ContainmentKind::EllInPoly,
            (false, false) => ContainmentKind::EllInEll,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainmentConstraintBlock {
    pub kind: ContainmentKind,
    pub body_index: usize,
    pub canvas_index: usize,
    pub step_index: usize,
    /// Offset of `(lambda, Y)` in the decision vector; unused for kinds
    /// without aux variables.
    pub aux_offset: usize,
}

/// Residuals of one containment block. `d_second` is always empty: the
/// canvas does not move.
pub type ContainmentEval = SplitEval;

/// Moving body of a containment block.
#[derive(Debug, Clone, Copy)]
pub enum Body<'a> {
    Poly(&'a PlacedPolytope),
    Ell(&'a PlacedEllipsoid),
}

/// Fixed canvas of a containment block.
#[derive(Debug, Clone, Copy)]
pub enum Canvas<'a> {
    Poly(&'a Polytope),
    Ell(&'a Ellipsoid),
}

pub(crate) fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Index of entry `(i, j)`, `j <= i`, in the row-major packed lower triangle.
fn tri_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// Packs the lower triangle of `y` row by row.
pub fn pack_lower(y: &DMatrix<f64>) -> Vec<f64> {
    let n = y.nrows();
    let mut out = Vec::with_capacity(tri_len(n));
    for i in 0..n {
        for j in 0..=i {
            out.push(y[(i, j)]);
        }
    }
    out
}

pub fn unpack_lower(packed: &[f64], n: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            y[(i, j)] = packed[tri_index(i, j)];
        }
    }
    y
}

/// The S-procedure matrix for `inner = {(s-e1)^T E1 (s-e1) <= 1}` inside
/// `outer = {(s-e2)^T E2 (s-e2) <= 1}`:
///
/// ```text
/// G = [ lambda E1 - E2            E2 e2 - lambda E1 e1                      ]
///     [ (.)^T      lambda e1^T E1 e1 - e2^T E2 e2 - lambda + 1 ]
/// ```
pub fn s_procedure_matrix(
    inner: &Ellipsoid,
    outer: &Ellipsoid,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    if inner.dim() != outer.dim() {
        return Err(Error::dim(
            "inner vs outer ellipsoid",
            outer.dim(),
            inner.dim(),
        ));
    }
    Ok(g_matrix(
        inner.shape(),
        inner.center(),
        outer.shape(),
        outer.center(),
        lambda,
    ))
}

fn g_matrix(
    e1: &DMatrix<f64>,
    c1: &DVector<f64>,
    e2: &DMatrix<f64>,
    c2: &DVector<f64>,
    lambda: f64,
) -> DMatrix<f64> {
    let n = c1.len();
    let mut g = DMatrix::zeros(n + 1, n + 1);
    let e1c1 = e1 * c1;
    let e2c2 = e2 * c2;
    g.view_mut((0, 0), (n, n)).copy_from(&(e1 * lambda - e2));
    let off = &e2c2 - &e1c1 * lambda;
    for i in 0..n {
        g[(i, n)] = off[i];
        g[(n, i)] = off[i];
    }
    g[(n, n)] = lambda * c1.dot(&e1c1) - c2.dot(&e2c2) - lambda + 1.0;
    g
}

/// Cholesky factor `Y Y^T = G` with nonnegative diagonal, allowing zero
/// pivots so singular positive semidefinite matrices factor too. Fails when
/// a pivot is negative beyond round-off, i.e. `G` has a negative eigenvalue.
pub fn psd_cholesky(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(Error::dim("square matrix", n, g.ncols()));
    }
    let scale = g
        .diagonal()
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(1e-300);
    let tol = 1e-12 * scale * n as f64;
    let mut y: DMatrix<f64> = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = g[(j, j)];
        for k in 0..j {
            d -= y[(j, k)] * y[(j, k)];
        }
        if d < -tol {
            return Err(Error::NotPositiveSemidefinite { pivot: j, value: d });
        }
        if d <= tol {
            // zero pivot: the rest of the column must vanish as well
            for i in j + 1..n {
                let mut s = g[(i, j)];
                for k in 0..j {
                    s -= y[(i, k)] * y[(j, k)];
                }
                if s.abs() > tol.sqrt() * scale.sqrt() {
                    return Err(Error::NotPositiveSemidefinite { pivot: j, value: d });
                }
            }
            continue;
        }
        let djj = d.sqrt();
        y[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = g[(i, j)];
            for k in 0..j {
                s -= y[(i, k)] * y[(j, k)];
            }
            y[(i, j)] = s / djj;
        }
    }
    Ok(y)
}

/// Searches `lambda >= 0` maximising the smallest eigenvalue of
/// `G(lambda)` (a concave function of `lambda`). Returns the multiplier and
/// a factor `Y` when `G` is positive semidefinite there.
pub fn ell_in_ell_certificate(
    inner: &Ellipsoid,
    outer: &Ellipsoid,
) -> Result<Option<(f64, DMatrix<f64>)>> {
    let min_eig = |l: f64| -> Result<f64> {
        let g = s_procedure_matrix(inner, outer, l)?;
        Ok(g.symmetric_eigenvalues().min())
    };
    // bracket the maximiser of a concave function
    let mut hi = 1.0;
    let mut f_hi = min_eig(hi)?;
    while hi < 1e12 {
        let f_next = min_eig(2.0 * hi)?;
        if f_next <= f_hi {
            break;
        }
        hi *= 2.0;
        f_hi = f_next;
    }
    let (mut a, mut b) = (0.0, 2.0 * hi);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = min_eig(x1)?;
    let mut f2 = min_eig(x2)?;
    for _ in 0..200 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = min_eig(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = min_eig(x1)?;
        }
        if b - a <= 1e-14 * b.max(1.0) {
            break;
        }
    }
    let lambda = 0.5 * (a + b);
    let g = s_procedure_matrix(inner, outer, lambda)?;
    match psd_cholesky(&g) {
        Ok(y) => Ok(Some((lambda, y))),
        Err(Error::NotPositiveSemidefinite { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn vertex_tangents(p: &PlacedPolytope) -> &[DMatrix<f64>] {
    &p.d_vertices
}

/// Evaluates one containment block with derivatives.
///
/// For the S-procedure the aux layout is `[lambda, Y packed row-major]`.
pub fn evaluate(
    kind: ContainmentKind,
    body: Body<'_>,
    canvas: Canvas<'_>,
    aux: &[f64],
) -> Result<ContainmentEval> {
    let dim = match body {
        Body::Poly(p) => p.dim(),
        Body::Ell(e) => e.dim(),
    };
    let cdim = match canvas {
        Canvas::Poly(p) => p.dim(),
        Canvas::Ell(e) => e.dim(),
    };
    if dim != cdim {
        return Err(Error::dim("body vs canvas dimension", cdim, dim));
    }
    let na = kind.aux_count(dim);
    if aux.len() != na {
        return Err(Error::dim(
            format!("{} aux variables", kind.name()),
            na,
            aux.len(),
        ));
    }
    let empty = |nt: usize| Rows::new(na, nt, 0).finish();
    match (kind, body, canvas) {
        (ContainmentKind::PolyInPoly, Body::Poly(p), Canvas::Poly(c)) => {
            let nt = p.n_tangents();
            let mut rows = Rows::new(0, nt, 0);
            let av = c.faces() * &p.vertices;
            for j in 0..p.vertices.ncols() {
                for i in 0..c.n_faces() {
                    let r = rows.push(av[(i, j)] - c.offsets()[i]);
                    for (t, dv) in vertex_tangents(p).iter().enumerate() {
                        rows.tangent(
                            Slot::First,
                            r,
                            t,
                            c.faces().row(i).dot(&dv.column(j).transpose()),
                        );
                    }
                }
            }
            Ok(ContainmentEval {
                eq: empty(nt),
                ineq: rows.finish(),
            })
        }
        (ContainmentKind::PolyInEll, Body::Poly(p), Canvas::Ell(c)) => {
            let nt = p.n_tangents();
            let mut rows = Rows::new(0, nt, 0);
            for j in 0..p.vertices.ncols() {
                let d = p.vertices.column(j) - c.center();
                let ed = c.shape() * &d;
                let r = rows.push(d.dot(&ed) - 1.0);
                for (t, dv) in vertex_tangents(p).iter().enumerate() {
                    rows.tangent(Slot::First, r, t, 2.0 * ed.dot(&dv.column(j)));
                }
            }
            Ok(ContainmentEval {
                eq: empty(nt),
                ineq: rows.finish(),
            })
        }
        (ContainmentKind::EllInPoly, Body::Ell(e), Canvas::Poly(c)) => {
            let nt = e.n_tangents();
            let mut rows = Rows::new(0, nt, 0);
            for i in 0..c.n_faces() {
                let a = c.faces().row(i).transpose();
                let q = a.dot(&(&e.shape_inv * &a));
                let root = q.max(0.0).sqrt();
                let r = rows.push(root + a.dot(&e.center) - c.offsets()[i]);
                for t in 0..nt {
                    let dq = a.dot(&(&e.d_shape_inv[t] * &a));
                    let ds = if root > 0.0 { dq / (2.0 * root) } else { 0.0 };
                    rows.tangent(Slot::First, r, t, ds + a.dot(&e.d_center[t]));
                }
            }
            Ok(ContainmentEval {
                eq: empty(nt),
                ineq: rows.finish(),
            })
        }
        (ContainmentKind::EllInEll, Body::Ell(e), Canvas::Ell(c)) => ell_in_ell_rows(e, c, aux),
        _ => Err(Error::Unsupported(format!(
            "{} block with these operand kinds",
            kind.name()
        ))),
    }
}

fn ell_in_ell_rows(e: &PlacedEllipsoid, c: &Ellipsoid, aux: &[f64]) -> Result<ContainmentEval> {
    let n = e.dim();
    let m = n + 1;
    let na = aux.len();
    let nt = e.n_tangents();
    let lambda = aux[0];
    let y = unpack_lower(&aux[1..], m);
    let g = g_matrix(&e.shape, &e.center, c.shape(), c.center(), lambda);
    let e1c1 = &e.shape * &e.center;

    // dG/dlambda
    let mut dg_l = DMatrix::zeros(m, m);
    dg_l.view_mut((0, 0), (n, n)).copy_from(&e.shape);
    for i in 0..n {
        dg_l[(i, n)] = -e1c1[i];
        dg_l[(n, i)] = -e1c1[i];
    }
    dg_l[(n, n)] = e.center.dot(&e1c1) - 1.0;

    // dG along every placement tangent
    let dg_t: Vec<DMatrix<f64>> = (0..nt)
        .map(|t| {
            let de = &e.d_shape[t];
            let dc = &e.d_center[t];
            let mut d = DMatrix::zeros(m, m);
            d.view_mut((0, 0), (n, n)).copy_from(&(de * lambda));
            let doff = -(de * &e.center + &e.shape * dc) * lambda;
            for i in 0..n {
                d[(i, n)] = doff[i];
                d[(n, i)] = doff[i];
            }
            d[(n, n)] = lambda * (2.0 * dc.dot(&e1c1) + e.center.dot(&(de * &e.center)));
            d
        })
        .collect();

    let mut eq = Rows::new(na, nt, 0);
    for i in 0..m {
        for j in 0..=i {
            let mut yy = 0.0;
            for k in 0..=j {
                yy += y[(i, k)] * y[(j, k)];
            }
            let r = eq.push(g[(i, j)] - yy);
            eq.aux(r, 0, dg_l[(i, j)]);
            // d(Y Y^T)_ij / dY_ab = delta_ia Y_jb + delta_ja Y_ib
            for b in 0..=j {
                eq.aux(r, 1 + tri_index(i, b), -y[(j, b)]);
                eq.aux(r, 1 + tri_index(j, b), -y[(i, b)]);
            }
            for (t, d) in dg_t.iter().enumerate() {
                eq.tangent(Slot::First, r, t, d[(i, j)]);
            }
        }
    }
    let mut ineq = Rows::new(na, nt, 0);
    for i in 0..m {
        let r = ineq.push(-y[(i, i)]);
        ineq.aux(r, 1 + tri_index(i, i), -1.0);
    }
    let r = ineq.push(-lambda);
    ineq.aux(r, 0, -1.0);
    Ok(ContainmentEval {
        eq: eq.finish(),
        ineq: ineq.finish(),
    })
}

fn fixed_poly(v: &DMatrix<f64>) -> PlacedPolytope {
    PlacedPolytope {
        vertices: v.clone(),
        d_vertices: Vec::new(),
        faces: DMatrix::zeros(0, v.nrows()),
        offsets: DVector::zeros(0),
        d_faces: Vec::new(),
        d_offsets: Vec::new(),
    }
}

/// `a_i^T v_j - b_i`, vertex-major.
pub fn contain_poly_in_poly(v: &DMatrix<f64>, canvas: &Polytope) -> Result<DVector<f64>> {
    let p = fixed_poly(v);
    Ok(evaluate(
        ContainmentKind::PolyInPoly,
        Body::Poly(&p),
        Canvas::Poly(canvas),
        &[],
    )?
    .ineq
    .values)
}

/// `(v_j - e)^T E (v_j - e) - 1` per vertex.
pub fn contain_poly_in_ell(v: &DMatrix<f64>, canvas: &Ellipsoid) -> Result<DVector<f64>> {
    let p = fixed_poly(v);
    Ok(evaluate(
        ContainmentKind::PolyInEll,
        Body::Poly(&p),
        Canvas::Ell(canvas),
        &[],
    )?
    .ineq
    .values)
}

/// Support of `ell` along each face normal minus the face offset.
pub fn contain_ell_in_poly(ell: &Ellipsoid, canvas: &Polytope) -> Result<DVector<f64>> {
    let e = PlacedEllipsoid::fixed(ell);
    Ok(evaluate(
        ContainmentKind::EllInPoly,
        Body::Ell(&e),
        Canvas::Poly(canvas),
        &[],
    )?
    .ineq
    .values)
}

/// S-procedure residuals: `eq` holds the packed entries of `G - Y Y^T`,
/// `ineq` holds `-diag(Y)` followed by `-lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct SProcedureResidual {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
}

pub fn contain_ell_in_ell(
    inner: &Ellipsoid,
    outer: &Ellipsoid,
    lambda: f64,
    upsilon: &DMatrix<f64>,
) -> Result<SProcedureResidual> {
    let m = inner.dim() + 1;
    if upsilon.nrows() != m || upsilon.ncols() != m {
        return Err(Error::dim("factor Y size (N+1)", m, upsilon.nrows()));
    }
    for i in 0..m {
        for j in i + 1..m {
            if upsilon[(i, j)] != 0.0 {
                return Err(Error::InvalidArgument(
                    "factor Y must be lower triangular".into(),
                ));
            }
        }
    }
    let mut aux = vec![lambda];
    aux.extend(pack_lower(upsilon));
    let e = PlacedEllipsoid::fixed(inner);
    let ev = evaluate(
        ContainmentKind::EllInEll,
        Body::Ell(&e),
        Canvas::Ell(outer),
        &aux,
    )?;
    Ok(SProcedureResidual {
        eq: ev.eq.values,
        ineq: ev.ineq.values,
    })
}
