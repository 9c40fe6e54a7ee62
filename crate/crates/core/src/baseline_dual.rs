//! Dual-multiplier collision constraints used as the comparison baseline,
//! and auxiliary-variable accounting for the three formulation families.
//!
//! For a body `{A_b s <= b_b}` and an obstacle `{A_o s <= b_o}` the dual
//! certificate is a pair `lam, mu >= 0` with
//!
//! ```text
//! A_b^T lam + A_o^T mu = 0,   b_b^T lam + b_o^T mu <= 0,
//! eps^2 <= |A_b^T lam|^2 <= 1.
//! ```
//!
//! With `w = A_b^T lam` the body lies in `{w^T s <= lam^T b_b}` and the
//! obstacle in `{w^T s >= -mu^T b_o}`, so any certificate separates the two.
//! The lower norm bound rules out the trivial certificate `lam = mu = 0`,
//! which would otherwise satisfy every row at zero margin.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConvexSet, PlacedPolytope, Polytope, NORM_EPS};
use crate::residual::{Rows, Slot, SplitEval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulationKind {
    Hyperplane,
    Dual,
    Farkas,
}

impl FormulationKind {
    pub const ALL: [FormulationKind; 3] = [
        FormulationKind::Hyperplane,
        FormulationKind::Dual,
        FormulationKind::Farkas,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FormulationKind::Hyperplane => "hyperplane",
            FormulationKind::Dual => "dual",
            FormulationKind::Farkas => "farkas",
        }
    }
}

impl std::str::FromStr for FormulationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyperplane" => Ok(FormulationKind::Hyperplane),
            "dual" => Ok(FormulationKind::Dual),
            "farkas" => Ok(FormulationKind::Farkas),
            other => Err(Error::InvalidArgument(format!(
                "unknown formulation '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for FormulationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Auxiliary variables one (body, obstacle) pair costs per time step.
pub fn count_aux_variables(
    kind: FormulationKind,
    body: &ConvexSet,
    obstacle: &ConvexSet,
    dim: usize,
) -> Result<usize> {
    for set in [body, obstacle] {
        if set.dim() != dim {
            return Err(Error::dim("set dimension", dim, set.dim()));
        }
    }
    let faces = |s: &ConvexSet| match s {
        ConvexSet::Polytope(p) => Some(p.n_faces()),
        ConvexSet::Ellipsoid(_) => None,
    };
    match (kind, faces(body), faces(obstacle)) {
        (FormulationKind::Hyperplane, _, _) => Ok(dim + 1),
        (FormulationKind::Dual, Some(m), Some(n)) => Ok(m + n),
        (FormulationKind::Dual, None, None) => Ok(2 * (dim + 1)),
        (FormulationKind::Dual, Some(m), None) | (FormulationKind::Dual, None, Some(m)) => {
            Ok(m + dim)
        }
        (FormulationKind::Farkas, Some(m), Some(n)) => Ok(m + n),
        (FormulationKind::Farkas, _, _) => Err(Error::Unsupported(
            "farkas formulation is defined for polytope pairs only".into(),
        )),
    }
}

/// Evaluates the dual certificate rows for a moving body polytope (placed
/// with face tangents) against a fixed obstacle polytope.
///
/// Aux layout: `[lam (body faces), mu (obstacle faces)]`. Equality rows:
/// `A_b^T lam + A_o^T mu`. Inequality rows: margin, upper norm, lower norm,
/// then `-lam` and `-mu`.
pub fn evaluate(body: &PlacedPolytope, obstacle: &Polytope, aux: &[f64]) -> Result<SplitEval> {
    let dim = body.dim();
    if obstacle.dim() != dim {
        return Err(Error::dim(
            "body vs obstacle dimension",
            dim,
            obstacle.dim(),
        ));
    }
    let (nb, no) = (body.faces.nrows(), obstacle.n_faces());
    if aux.len() != nb + no {
        return Err(Error::dim("dual multipliers", nb + no, aux.len()));
    }
    crate::geometry::check_finite(aux, "dual multipliers")?;
    let lam = DVector::from_column_slice(&aux[..nb]);
    let mu = DVector::from_column_slice(&aux[nb..]);
    let nt = body.n_tangents();
    let ab = &body.faces;
    let ao = obstacle.faces();
    let w = ab.transpose() * &lam;

    let mut eq = Rows::new(nb + no, nt, 0);
    let resid = &w + ao.transpose() * &mu;
    for k in 0..dim {
        let r = eq.push(resid[k]);
        for i in 0..nb {
            eq.aux(r, i, ab[(i, k)]);
        }
        for j in 0..no {
            eq.aux(r, nb + j, ao[(j, k)]);
        }
        for t in 0..nt {
            eq.tangent(Slot::First, r, t, body.d_faces[t].column(k).dot(&lam));
        }
    }

    let mut ineq = Rows::new(nb + no, nt, 0);
    let r = ineq.push(body.offsets.dot(&lam) + obstacle.offsets().dot(&mu));
    for i in 0..nb {
        ineq.aux(r, i, body.offsets[i]);
    }
    for j in 0..no {
        ineq.aux(r, nb + j, obstacle.offsets()[j]);
    }
    for t in 0..nt {
        ineq.tangent(Slot::First, r, t, body.d_offsets[t].dot(&lam));
    }

    let ww = w.dot(&w);
    let gw = ab * &w * 2.0;
    let dw: Vec<f64> = (0..nt)
        .map(|t| 2.0 * w.dot(&(body.d_faces[t].transpose() * &lam)))
        .collect();
    for sign in [1.0, -1.0] {
        let value = if sign > 0.0 {
            ww - 1.0
        } else {
            NORM_EPS * NORM_EPS - ww
        };
        let r = ineq.push(value);
        for i in 0..nb {
            ineq.aux(r, i, sign * gw[i]);
        }
        for (t, d) in dw.iter().enumerate() {
            ineq.tangent(Slot::First, r, t, sign * d);
        }
    }
    for (i, x) in aux.iter().enumerate() {
        let r = ineq.push(-x);
        ineq.aux(r, i, -1.0);
    }
    Ok(SplitEval {
        eq: eq.finish(),
        ineq: ineq.finish(),
    })
}

/// Residuals of the dual certificate for fixed polytopes.
#[derive(Debug, Clone, PartialEq)]
pub struct DualResidual {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
}

pub fn dual_sep_poly_poly(
    body: &Polytope,
    obstacle: &Polytope,
    lam: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<DualResidual> {
    if lam.iter().chain(mu.iter()).any(|x| *x < 0.0) {
        return Err(Error::InvalidArgument(
            "dual multipliers must be nonnegative".into(),
        ));
    }
    let placed = PlacedPolytope::fixed(body);
    let aux: Vec<f64> = lam.iter().chain(mu.iter()).copied().collect();
    let ev = evaluate(&placed, obstacle, &aux)?;
    Ok(DualResidual {
        eq: ev.eq.values,
        ineq: ev.ineq.values,
    })
}

/// Separating plane implied by a certificate, oriented like the hyperplane
/// formulation (body on the `>=` side), offset halfway across the gap.
pub fn plane_from_certificate(
    body_faces: &DMatrix<f64>,
    body_offsets: &DVector<f64>,
    obstacle: &Polytope,
    aux: &[f64],
) -> (DVector<f64>, f64) {
    let nb = body_faces.nrows();
    let lam = DVector::from_column_slice(&aux[..nb]);
    let mu = DVector::from_column_slice(&aux[nb..]);
    let w = body_faces.transpose() * &lam;
    let body_side = -body_offsets.dot(&lam);
    let obstacle_side = obstacle.offsets().dot(&mu);
    (-w, 0.5 * (body_side + obstacle_side))
}
