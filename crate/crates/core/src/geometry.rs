//! Convex-set vocabulary shared by every constraint module.
//!
//! Polytopes carry both their face description `A s <= b` and their vertex
//! matrix `V` (one vertex per column); the two are checked against each other
//! at construction. Ellipsoids are `{s : (s - e)^T E (s - e) <= 1}` with `E`
//! symmetric positive definite; the inverse shape matrix is cached because
//! support values need it on every evaluation.
//!
//! [`PlacedSet`] pairs a set in world coordinates with its derivatives with
//! respect to a handful of parameters (the planar pose of the vehicle part
//! that carries it). Constraint residuals consume placed sets so their
//! Jacobians chain through the rigid motion without extra plumbing.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Error, Result};

/// Lower bound on the norm of every separating-hyperplane normal.
pub const NORM_EPS: f64 = 1e-3;

/// Absolute tolerance for geometric invariant checks.
pub const GEOM_TOL: f64 = 1e-7;

/// Face count above which a polytope is flagged as possibly ill-conditioned.
pub const FACE_WARN_LIMIT: usize = 64;

/// Convex polytope stored in both H- and V-representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    a: DMatrix<f64>,
    b: DVector<f64>,
    v: DMatrix<f64>,
}

impl Polytope {
    /// Builds a polytope from faces `a s <= b` and vertex columns `v`.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        let dim = a.ncols();
        if dim < 2 {
            return Err(Error::dim("polytope dimension (>= 2)", 2, dim));
        }
        if b.len() != a.nrows() {
            return Err(Error::dim(
                "face offsets vs face normals",
                a.nrows(),
                b.len(),
            ));
        }
        if v.nrows() != dim {
            return Err(Error::dim("vertex rows vs face columns", dim, v.nrows()));
        }
        if a.nrows() < dim + 1 {
            return Err(Error::TooFewFaces {
                dim,
                needed: dim + 1,
                found: a.nrows(),
            });
        }
        if v.ncols() < dim + 1 {
            return Err(Error::dim("vertex count (>= N+1)", dim + 1, v.ncols()));
        }
        check_finite(a.as_slice(), "polytope faces")?;
        check_finite(b.as_slice(), "polytope offsets")?;
        check_finite(v.as_slice(), "polytope vertices")?;
        if a.nrows() > FACE_WARN_LIMIT {
            log::warn!(
                "polytope with {} faces exceeds {FACE_WARN_LIMIT}; expect poor conditioning",
                a.nrows()
            );
        }
        let p = Polytope { a, b, v };
        p.check_consistency(GEOM_TOL)?;
        Ok(p)
    }

    /// Builds a planar polygon from its vertices (any order); faces are
    /// derived from the convex hull ordering with unit outward normals.
    pub fn from_vertices_2d(vertices: &[[f64; 2]]) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::dim("polygon vertex count (>= 3)", 3, vertices.len()));
        }
        let n = vertices.len() as f64;
        let cx = vertices.iter().map(|p| p[0]).sum::<f64>() / n;
        let cy = vertices.iter().map(|p| p[1]).sum::<f64>() / n;
        let mut ordered: Vec<[f64; 2]> = vertices.to_vec();
        ordered.sort_by(|p, q| {
            let ap = (p[1] - cy).atan2(p[0] - cx);
            let aq = (q[1] - cy).atan2(q[0] - cx);
            ap.total_cmp(&aq)
        });
        let m = ordered.len();
        let mut a = DMatrix::zeros(m, 2);
        let mut b = DVector::zeros(m);
        for i in 0..m {
            let p = ordered[i];
            let q = ordered[(i + 1) % m];
            let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
            let len = dx.hypot(dy);
            if len < 1e-12 {
                return Err(Error::InvalidArgument("repeated polygon vertex".into()));
            }
            // counter-clockwise order: outward normal is the edge rotated by -90 deg
            let (nx, ny) = (dy / len, -dx / len);
            a[(i, 0)] = nx;
            a[(i, 1)] = ny;
            b[i] = nx * p[0] + ny * p[1];
        }
        // keep the caller's vertex order in V
        let v = DMatrix::from_fn(2, vertices.len(), |r, c| vertices[c][r]);
        Polytope::new(a, b, v)
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rectangle(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        Polytope::from_vertices_2d(&[[x1, y1], [x1, y0], [x0, y0], [x0, y1]])
    }

    /// Square of side `side` centred at `(cx, cy)`.
    pub fn square(cx: f64, cy: f64, side: f64) -> Result<Self> {
        let h = 0.5 * side;
        Polytope::rectangle(cx - h, cx + h, cy - h, cy + h)
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_faces(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_vertices(&self) -> usize {
        self.v.ncols()
    }

    /// Face normals, one per row.
    pub fn faces(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.b
    }

    /// Vertex coordinates, one vertex per column.
    pub fn vertices(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Verifies that every vertex satisfies every face inequality.
    pub fn check_consistency(&self, tol: f64) -> Result<()> {
        for (j, v) in self.v.column_iter().enumerate() {
            let slack = &self.a * v - &self.b;
            for (i, s) in slack.iter().enumerate() {
                if *s > tol {
                    return Err(Error::RepresentationMismatch {
                        vertex: j,
                        face: i,
                        excess: *s,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &DVector<f64>, tol: f64) -> bool {
        (&self.a * p - &self.b).iter().all(|s| *s <= tol)
    }

    /// Largest face violation of `p` (negative when strictly inside).
    pub fn max_violation(&self, p: &DVector<f64>) -> f64 {
        (&self.a * p - &self.b).max()
    }

    /// Maximum of `d^T s` over the polytope.
    pub fn support(&self, d: &DVector<f64>) -> f64 {
        (d.transpose() * &self.v).max()
    }

    /// Both representations moved by `pose`.
    pub fn transformed(&self, pose: &Pose) -> Result<Polytope> {
        if pose.dim() != self.dim() {
            return Err(Error::dim(
                "pose vs polytope dimension",
                self.dim(),
                pose.dim(),
            ));
        }
        let v = transform_vertices(&self.v, pose)?;
        let a = &self.a * pose.rotation.transpose();
        let b = &self.b + &a * &pose.position;
        Ok(Polytope { a, b, v })
    }
}

/// Ellipsoid `{s : (s - e)^T E (s - e) <= 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    shape: DMatrix<f64>,
    center: DVector<f64>,
    shape_inv: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn new(shape: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        let n = shape.nrows();
        if shape.ncols() != n {
            return Err(Error::dim("square shape matrix", n, shape.ncols()));
        }
        if center.len() != n {
            return Err(Error::dim("ellipsoid center", n, center.len()));
        }
        check_finite(shape.as_slice(), "ellipsoid shape")?;
        check_finite(center.as_slice(), "ellipsoid center")?;
        let asym = (&shape - shape.transpose()).amax();
        if asym > GEOM_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let sym = (&shape + shape.transpose()) * 0.5;
        let chol = sym.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let shape_inv = chol.inverse();
        Ok(Ellipsoid {
            shape: sym,
            center,
            shape_inv,
        })
    }

    pub fn circle(cx: f64, cy: f64, radius: f64) -> Result<Self> {
        Ellipsoid::axis_aligned(&[cx, cy], &[radius, radius])
    }

    /// Axis-aligned ellipsoid with the given semi-axes.
    pub fn axis_aligned(center: &[f64], semi_axes: &[f64]) -> Result<Self> {
        if center.len() != semi_axes.len() {
            return Err(Error::dim(
                "semi-axes vs center",
                center.len(),
                semi_axes.len(),
            ));
        }
        if semi_axes.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        let shape = DMatrix::from_diagonal(&DVector::from_iterator(
            semi_axes.len(),
            semi_axes.iter().map(|r| 1.0 / (r * r)),
        ));
        Ellipsoid::new(shape, DVector::from_column_slice(center))
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn shape_inv(&self) -> &DMatrix<f64> {
        &self.shape_inv
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    /// `(p - e)^T E (p - e) - 1`; non-positive inside.
    pub fn level(&self, p: &DVector<f64>) -> f64 {
        let d = p - &self.center;
        d.dot(&(&self.shape * &d)) - 1.0
    }

    pub fn contains(&self, p: &DVector<f64>, tol: f64) -> bool {
        self.level(p) <= tol
    }

    pub fn support(&self, d: &DVector<f64>) -> f64 {
        d.dot(&(&self.shape_inv * d)).max(0.0).sqrt() + d.dot(&self.center)
    }

    /// Point of the boundary maximising `d^T s` (the center when `d = 0`).
    pub fn support_point(&self, d: &DVector<f64>) -> DVector<f64> {
        let wd = &self.shape_inv * d;
        let q = d.dot(&wd);
        if q <= 0.0 {
            return self.center.clone();
        }
        &self.center + wd / q.sqrt()
    }

    /// Boundary point `e + M u` for a unit vector `u`, with `M^T M = E^-1`.
    pub fn boundary_point(&self, unit: &DVector<f64>) -> DVector<f64> {
        // E^-1/2 through the symmetric eigen-decomposition keeps the map well defined
        let eig = self.shape.clone().symmetric_eigen();
        let mut m = eig.eigenvectors.clone();
        for (j, lam) in eig.eigenvalues.iter().enumerate() {
            let s = 1.0 / lam.sqrt();
            m.column_mut(j).scale_mut(s);
        }
        let m = &m * eig.eigenvectors.transpose();
        &self.center + m * unit
    }

    pub fn transformed(&self, pose: &Pose) -> Result<Ellipsoid> {
        if pose.dim() != self.dim() {
            return Err(Error::dim(
                "pose vs ellipsoid dimension",
                self.dim(),
                pose.dim(),
            ));
        }
        let r = &pose.rotation;
        let shape = r * &self.shape * r.transpose();
        let shape_inv = r * &self.shape_inv * r.transpose();
        let center = r * &self.center + &pose.position;
        Ok(Ellipsoid {
            shape: (&shape + shape.transpose()) * 0.5,
            center,
            shape_inv: (&shape_inv + shape_inv.transpose()) * 0.5,
        })
    }
}

/// Rigid motion `s -> R s + T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub position: DVector<f64>,
    pub rotation: DMatrix<f64>,
}

impl Pose {
    pub fn new(position: DVector<f64>, rotation: DMatrix<f64>) -> Result<Self> {
        let n = position.len();
        if rotation.nrows() != n || rotation.ncols() != n {
            return Err(Error::dim("rotation vs position", n, rotation.nrows()));
        }
        let ortho = (rotation.transpose() * &rotation - DMatrix::identity(n, n)).amax();
        if ortho > GEOM_TOL {
            return Err(Error::InvalidRotation(format!("R^T R - I = {ortho:e}")));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > GEOM_TOL {
            return Err(Error::InvalidRotation(format!("det = {det}")));
        }
        Ok(Pose { position, rotation })
    }

    pub fn identity(n: usize) -> Self {
        Pose {
            position: DVector::zeros(n),
            rotation: DMatrix::identity(n, n),
        }
    }

    pub fn planar(x: f64, y: f64, theta: f64) -> Self {
        let r = rot2(theta);
        Pose {
            position: DVector::from_column_slice(&[x, y]),
            rotation: DMatrix::from_column_slice(2, 2, r.as_slice()),
        }
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }

    pub fn apply(&self, p: &DVector<f64>) -> DVector<f64> {
        &self.rotation * p + &self.position
    }
}

/// Hyperplane `{s : lambda^T s = mu}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    pub lambda: DVector<f64>,
    pub mu: f64,
}

impl Hyperplane {
    /// Checked constructor enforcing `||lambda|| >= NORM_EPS`.
    pub fn new(lambda: DVector<f64>, mu: f64) -> Result<Self> {
        let norm = lambda.norm();
        if !(norm >= NORM_EPS) {
            return Err(Error::NormTooSmall {
                norm,
                eps: NORM_EPS,
            });
        }
        Ok(Hyperplane { lambda, mu })
    }

    /// Signed value `lambda^T s - mu`.
    pub fn eval(&self, s: &DVector<f64>) -> f64 {
        self.lambda.dot(s) - self.mu
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    Polytope(Polytope),
    Ellipsoid(Ellipsoid),
}

impl ConvexSet {
    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Polytope(p) => p.dim(),
            ConvexSet::Ellipsoid(e) => e.dim(),
        }
    }

    pub fn support(&self, d: &DVector<f64>) -> f64 {
        match self {
            ConvexSet::Polytope(p) => p.support(d),
            ConvexSet::Ellipsoid(e) => e.support(d),
        }
    }

    pub fn support_point(&self, d: &DVector<f64>) -> DVector<f64> {
        match self {
            ConvexSet::Polytope(p) => {
                let scores = p.vertices().transpose() * d;
                let j = scores.argmax().0;
                p.vertices().column(j).into_owned()
            }
            ConvexSet::Ellipsoid(e) => e.support_point(d),
        }
    }

    pub fn transformed(&self, pose: &Pose) -> Result<ConvexSet> {
        Ok(match self {
            ConvexSet::Polytope(p) => ConvexSet::Polytope(p.transformed(pose)?),
            ConvexSet::Ellipsoid(e) => ConvexSet::Ellipsoid(e.transformed(pose)?),
        })
    }

    pub fn is_polytope(&self) -> bool {
        matches!(self, ConvexSet::Polytope(_))
    }

    pub fn contains(&self, p: &DVector<f64>, tol: f64) -> bool {
        match self {
            ConvexSet::Polytope(q) => q.contains(p, tol),
            ConvexSet::Ellipsoid(e) => e.contains(p, tol),
        }
    }
}

impl From<Polytope> for ConvexSet {
    fn from(p: Polytope) -> Self {
        ConvexSet::Polytope(p)
    }
}

impl From<Ellipsoid> for ConvexSet {
    fn from(e: Ellipsoid) -> Self {
        ConvexSet::Ellipsoid(e)
    }
}

/// `R V0 + T 1^T`.
pub fn transform_vertices(v0: &DMatrix<f64>, pose: &Pose) -> Result<DMatrix<f64>> {
    if v0.nrows() != pose.dim() {
        return Err(Error::dim(
            "vertex rows vs pose dimension",
            pose.dim(),
            v0.nrows(),
        ));
    }
    let mut out = &pose.rotation * v0;
    for mut col in out.column_iter_mut() {
        col += &pose.position;
    }
    Ok(out)
}

/// Vertex mean for polytopes, center for ellipsoids.
pub fn centroid(set: &ConvexSet) -> DVector<f64> {
    match set {
        ConvexSet::Polytope(p) => p.vertices().column_mean(),
        ConvexSet::Ellipsoid(e) => e.center().clone(),
    }
}

/// Maximum of `lambda^T s` over `ell`: `sqrt(lambda^T E^-1 lambda) + lambda^T e`.
pub fn ellipsoid_support(ell: &Ellipsoid, lambda: &DVector<f64>) -> Result<f64> {
    if lambda.len() != ell.dim() {
        return Err(Error::dim(
            "lambda vs ellipsoid dimension",
            ell.dim(),
            lambda.len(),
        ));
    }
    let norm = lambda.norm();
    if !(norm > 1e-12) {
        return Err(Error::NormTooSmall {
            norm,
            eps: NORM_EPS,
        });
    }
    Ok(ell.support(lambda))
}

/// Planar rotation matrix.
pub fn rot2(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Derivative of [`rot2`] with respect to the angle.
pub fn drot2(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(-s, -c, c, -s)
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

fn to_dmatrix(m: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(2, 2, m.as_slice())
}

/// Polytope in world coordinates with derivatives of both representations.
#[derive(Debug, Clone)]
pub struct PlacedPolytope {
    pub vertices: DMatrix<f64>,
    pub d_vertices: Vec<DMatrix<f64>>,
    pub faces: DMatrix<f64>,
    pub offsets: DVector<f64>,
    pub d_faces: Vec<DMatrix<f64>>,
    pub d_offsets: Vec<DVector<f64>>,
}

/// Ellipsoid in world coordinates with derivatives of center and shape.
#[derive(Debug, Clone)]
pub struct PlacedEllipsoid {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub shape_inv: DMatrix<f64>,
    pub d_center: Vec<DVector<f64>>,
    pub d_shape: Vec<DMatrix<f64>>,
    pub d_shape_inv: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub enum PlacedSet {
    Polytope(PlacedPolytope),
    Ellipsoid(PlacedEllipsoid),
}

/// Point with derivatives.
#[derive(Debug, Clone)]
pub struct PlacedPoint {
    pub point: DVector<f64>,
    pub d_point: Vec<DVector<f64>>,
}

impl PlacedPoint {
    pub fn fixed(point: DVector<f64>) -> Self {
        PlacedPoint {
            point,
            d_point: Vec::new(),
        }
    }

    /// One tangent per coordinate.
    pub fn free(point: DVector<f64>) -> Self {
        let n = point.len();
        let d_point = (0..n)
            .map(|i| {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                e
            })
            .collect();
        PlacedPoint { point, d_point }
    }

    pub fn n_tangents(&self) -> usize {
        self.d_point.len()
    }
}

impl PlacedPolytope {
    pub fn fixed(p: &Polytope) -> Self {
        PlacedPolytope {
            vertices: p.vertices().clone(),
            d_vertices: Vec::new(),
            faces: p.faces().clone(),
            offsets: p.offsets().clone(),
            d_faces: Vec::new(),
            d_offsets: Vec::new(),
        }
    }

    /// Vertex coordinates treated as free parameters, column-major order.
    pub fn free_vertices(v: &DMatrix<f64>) -> Self {
        let (n, m) = v.shape();
        let d_vertices = (0..n * m)
            .map(|k| {
                let mut d = DMatrix::zeros(n, m);
                d[(k % n, k / n)] = 1.0;
                d
            })
            .collect();
        PlacedPolytope {
            vertices: v.clone(),
            d_vertices,
            faces: DMatrix::zeros(0, n),
            offsets: DVector::zeros(0),
            d_faces: Vec::new(),
            d_offsets: Vec::new(),
        }
    }

    /// Body-frame polytope placed at planar pose `(x, y, theta)`; tangents
    /// are ordered `x, y, theta`.
    pub fn planar(local: &Polytope, x: f64, y: f64, theta: f64) -> Self {
        let r = to_dmatrix(&rot2(theta));
        let dr = to_dmatrix(&drot2(theta));
        let t = DVector::from_column_slice(&[x, y]);
        let v0 = local.vertices();
        let m = v0.ncols();
        let mut vertices = &r * v0;
        for mut col in vertices.column_iter_mut() {
            col += &t;
        }
        let mut dx = DMatrix::zeros(2, m);
        dx.row_mut(0).fill(1.0);
        let mut dy = DMatrix::zeros(2, m);
        dy.row_mut(1).fill(1.0);
        let dth = &dr * v0;

        let a0 = local.faces();
        let faces = a0 * r.transpose();
        let d_faces_th = a0 * dr.transpose();
        let offsets = local.offsets() + &faces * &t;
        let ex = DVector::from_column_slice(&[1.0, 0.0]);
        let ey = DVector::from_column_slice(&[0.0, 1.0]);
        let nf = a0.nrows();
        PlacedPolytope {
            vertices,
            d_vertices: vec![dx, dy, dth],
            d_offsets: vec![&faces * &ex, &faces * &ey, &d_faces_th * &t],
            d_faces: vec![DMatrix::zeros(nf, 2), DMatrix::zeros(nf, 2), d_faces_th],
            faces,
            offsets,
        }
    }

    pub fn dim(&self) -> usize {
        self.vertices.nrows()
    }

    pub fn n_tangents(&self) -> usize {
        self.d_vertices.len()
    }
}

impl PlacedEllipsoid {
    pub fn fixed(e: &Ellipsoid) -> Self {
        PlacedEllipsoid {
            center: e.center().clone(),
            shape: e.shape().clone(),
            shape_inv: e.shape_inv().clone(),
            d_center: Vec::new(),
            d_shape: Vec::new(),
            d_shape_inv: Vec::new(),
        }
    }

    /// Body-frame ellipsoid placed at planar pose `(x, y, theta)`.
    pub fn planar(local: &Ellipsoid, x: f64, y: f64, theta: f64) -> Self {
        let r = to_dmatrix(&rot2(theta));
        let dr = to_dmatrix(&drot2(theta));
        let t = DVector::from_column_slice(&[x, y]);
        let e0 = local.shape();
        let w0 = local.shape_inv();
        let c0 = local.center();
        let shape = &r * e0 * r.transpose();
        let shape_inv = &r * w0 * r.transpose();
        let d_shape_th = &dr * e0 * r.transpose() + &r * e0 * dr.transpose();
        let d_inv_th = &dr * w0 * r.transpose() + &r * w0 * dr.transpose();
        let z = DMatrix::zeros(2, 2);
        PlacedEllipsoid {
            center: &r * c0 + &t,
            shape,
            shape_inv,
            d_center: vec![
                DVector::from_column_slice(&[1.0, 0.0]),
                DVector::from_column_slice(&[0.0, 1.0]),
                &dr * c0,
            ],
            d_shape: vec![z.clone(), z.clone(), d_shape_th],
            d_shape_inv: vec![z.clone(), z, d_inv_th],
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn n_tangents(&self) -> usize {
        self.d_center.len()
    }

    /// Support value at `lambda` with its gradient in `lambda` and its
    /// derivative along every tangent.
    pub fn support_jet(&self, lambda: &DVector<f64>) -> Result<(f64, DVector<f64>, Vec<f64>)> {
        let wl = &self.shape_inv * lambda;
        let q = lambda.dot(&wl);
        if !(q > 1e-300) {
            return Err(Error::NormTooSmall {
                norm: lambda.norm(),
                eps: NORM_EPS,
            });
        }
        let root = q.sqrt();
        let value = root + lambda.dot(&self.center);
        let grad = wl / root + &self.center;
        let d_tan = self
            .d_center
            .iter()
            .zip(&self.d_shape_inv)
            .map(|(dc, dw)| lambda.dot(&(dw * lambda)) / (2.0 * root) + lambda.dot(dc))
            .collect();
        Ok((value, grad, d_tan))
    }
}

impl PlacedSet {
    pub fn fixed(set: &ConvexSet) -> Self {
        match set {
            ConvexSet::Polytope(p) => PlacedSet::Polytope(PlacedPolytope::fixed(p)),
            ConvexSet::Ellipsoid(e) => PlacedSet::Ellipsoid(PlacedEllipsoid::fixed(e)),
        }
    }

    pub fn planar(local: &ConvexSet, x: f64, y: f64, theta: f64) -> Self {
        match local {
            ConvexSet::Polytope(p) => PlacedSet::Polytope(PlacedPolytope::planar(p, x, y, theta)),
            ConvexSet::Ellipsoid(e) => {
                PlacedSet::Ellipsoid(PlacedEllipsoid::planar(e, x, y, theta))
            }
        }
    }

    pub fn n_tangents(&self) -> usize {
        match self {
            PlacedSet::Polytope(p) => p.n_tangents(),
            PlacedSet::Ellipsoid(e) => e.n_tangents(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PlacedSet::Polytope(p) => p.dim(),
            PlacedSet::Ellipsoid(e) => e.dim(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn identity_transform_keeps_vertices() {
        let v0 = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, -1.0]);
        let out = transform_vertices(&v0, &Pose::identity(2)).unwrap();
        assert_eq!(out, v0);
    }

    #[test]
    fn quarter_turn_then_shift() {
        let v0 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let out = transform_vertices(&v0, &Pose::planar(1.0, 0.0, FRAC_PI_2)).unwrap();
        assert_relative_eq!(out[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(out[(1, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn transform_rejects_dimension_mismatch() {
        let v0 = DMatrix::zeros(3, 4);
        let err = transform_vertices(&v0, &Pose::identity(2)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn centroids() {
        let sq = Polytope::square(0.0, 0.0, 2.0).unwrap();
        assert_relative_eq!(centroid(&sq.into()).norm(), 0.0, epsilon = 1e-15);
        let tri = Polytope::from_vertices_2d(&[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]]).unwrap();
        let c = centroid(&tri.into());
        assert_relative_eq!(c[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(c[1], 1.0, epsilon = 1e-15);
        let e = Ellipsoid::circle(75.0, -100.0, 129.5).unwrap();
        assert_eq!(centroid(&e.into()), dv(&[75.0, -100.0]));
    }

    #[test]
    fn unit_sphere_support() {
        let e = Ellipsoid::circle(0.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(ellipsoid_support(&e, &dv(&[0.0, 1.0])).unwrap(), 1.0);
    }

    #[test]
    fn stretched_ellipse_support_matches_sampling() {
        // E = diag(1/4, 1): semi-axes 2 and 1, centred at (1, 0)
        let e = Ellipsoid::new(DMatrix::from_diagonal(&dv(&[0.25, 1.0])), dv(&[1.0, 0.0])).unwrap();
        let lam = dv(&[1.0, 0.0]);
        let brute = (0..100_000)
            .map(|k| {
                let t = k as f64 * std::f64::consts::TAU / 100_000.0;
                1.0 + 2.0 * t.cos()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(brute, 3.0, epsilon = 1e-9);
        assert_relative_eq!(ellipsoid_support(&e, &lam).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_lambda_support_is_an_error() {
        let e = Ellipsoid::circle(0.0, 0.0, 1.0).unwrap();
        assert!(ellipsoid_support(&e, &dv(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn ellipsoid_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            Ellipsoid::new(bad, dv(&[0.0, 0.0])),
            Err(Error::NotSymmetric(_))
        ));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(
            Ellipsoid::new(indefinite, dv(&[0.0, 0.0])),
            Err(Error::NotPositiveDefinite)
        );
    }

    #[test]
    fn polytope_validation() {
        // vertex outside the face description
        let sq = Polytope::square(0.0, 0.0, 2.0).unwrap();
        let mut v = sq.vertices().clone();
        v[(0, 0)] = 5.0;
        assert!(matches!(
            Polytope::new(sq.faces().clone(), sq.offsets().clone(), v),
            Err(Error::RepresentationMismatch { .. })
        ));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let v = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            Polytope::new(a, dv(&[1.0, 1.0]), v),
            Err(Error::TooFewFaces { .. })
        ));
    }

    #[test]
    fn hyperplane_guard() {
        assert!(Hyperplane::new(dv(&[1e-4, 0.0]), 0.0).is_err());
        assert!(Hyperplane::new(dv(&[1e-3, 0.0]), 0.0).is_ok());
    }

    #[test]
    fn pose_validation() {
        let shear = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(Pose::new(dv(&[0.0, 0.0]), shear).is_err());
        let reflect = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(Pose::new(dv(&[0.0, 0.0]), reflect).is_err());
    }

    #[test]
    fn planar_placement_matches_transformed_sets() {
        let body = Polytope::rectangle(-1.0, 3.6, -1.0, 1.0).unwrap();
        let pose = Pose::planar(2.0, -1.0, 0.7);
        let moved = body.transformed(&pose).unwrap();
        let placed = PlacedPolytope::planar(&body, 2.0, -1.0, 0.7);
        assert_relative_eq!(placed.vertices, moved.vertices().clone(), epsilon = 1e-12);
        assert_relative_eq!(placed.faces, moved.faces().clone(), epsilon = 1e-12);
        assert_relative_eq!(placed.offsets, moved.offsets().clone(), epsilon = 1e-12);
        moved.check_consistency(1e-9).unwrap();

        let ell = Ellipsoid::axis_aligned(&[0.5, 0.0], &[2.0, 1.0]).unwrap();
        let moved = ell.transformed(&pose).unwrap();
        let placed = PlacedEllipsoid::planar(&ell, 2.0, -1.0, 0.7);
        assert_relative_eq!(placed.center, moved.center().clone(), epsilon = 1e-12);
        assert_relative_eq!(placed.shape_inv, moved.shape_inv().clone(), epsilon = 1e-12);
    }

    #[test]
    fn placement_tangents_match_finite_differences() {
        let body = Polytope::rectangle(-0.5, 1.5, -1.0, 1.0).unwrap();
        let ell = Ellipsoid::axis_aligned(&[0.3, -0.2], &[2.0, 0.7]).unwrap();
        let p = [0.4, -1.3, 0.9];
        let h = 1e-6;
        for k in 0..3 {
            let mut lo = p;
            let mut hi = p;
            lo[k] -= h;
            hi[k] += h;
            let a = PlacedPolytope::planar(&body, p[0], p[1], p[2]);
            let pl = PlacedPolytope::planar(&body, lo[0], lo[1], lo[2]);
            let ph = PlacedPolytope::planar(&body, hi[0], hi[1], hi[2]);
            let fd = (&ph.vertices - &pl.vertices) / (2.0 * h);
            assert_relative_eq!(a.d_vertices[k], fd, epsilon = 1e-8);
            let fd = (&ph.faces - &pl.faces) / (2.0 * h);
            assert_relative_eq!(a.d_faces[k], fd, epsilon = 1e-8);
            let fd = (&ph.offsets - &pl.offsets) / (2.0 * h);
            assert_relative_eq!(a.d_offsets[k], fd, epsilon = 1e-8);

            let e = PlacedEllipsoid::planar(&ell, p[0], p[1], p[2]);
            let el = PlacedEllipsoid::planar(&ell, lo[0], lo[1], lo[2]);
            let eh = PlacedEllipsoid::planar(&ell, hi[0], hi[1], hi[2]);
            let fd = (&eh.shape_inv - &el.shape_inv) / (2.0 * h);
            assert_relative_eq!(e.d_shape_inv[k], fd, epsilon = 1e-7);
            let fd = (&eh.shape - &el.shape) / (2.0 * h);
            assert_relative_eq!(e.d_shape[k], fd, epsilon = 1e-7);
            let fd = (&eh.center - &el.center) / (2.0 * h);
            assert_relative_eq!(e.d_center[k], fd, epsilon = 1e-8);
        }
    }
}
