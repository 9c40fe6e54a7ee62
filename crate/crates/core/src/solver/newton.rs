//! Box-constrained projected Newton method (Bertsekas style).
//!
//! Variables within `eps` of a bound with the gradient pushing outward form
//! the active set and take a projected gradient step; the free block takes a
//! regularised Newton step. A projected Armijo backtracking search globalises.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::lbfgs::{project, projected_gradient_norm, InnerResult, InnerStop};

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOptions {
    pub armijo: f64,
    pub max_iters: usize,
    /// Stop once the projected gradient infinity norm falls below this.
    pub tol: f64,
}

/// Objective with a symmetric Hessian (exact or approximate).
pub trait SecondOrder {
    fn value_grad(&mut self, x: &[f64], g: &mut [f64]) -> Result<f64, String>;
    fn hessian(&mut self, x: &[f64]) -> Result<DMatrix<f64>, String>;
}

const MAX_BACKTRACKS: usize = 60;

pub fn minimize<M: SecondOrder>(
    model: &mut M,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &NewtonOptions,
    deadline: Option<Instant>,
) -> InnerResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let mut fx = match model.value_grad(&x, &mut g) {
        Ok(v) => v,
        Err(msg) => return failed(x, g, 0, msg),
    };
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut iters = 0;
    let mut shift = 0.0f64;
    let mut stop = InnerStop::MaxIters;
    while iters < opts.max_iters {
        let pg = projected_gradient_norm(&x, &g, lo, hi);
        if pg <= opts.tol {
            stop = InnerStop::Converged;
            break;
        }
        if deadline.is_some_and(|t| Instant::now() >= t) {
            stop = InnerStop::Deadline;
            break;
        }
        let h = match model.hessian(&x) {
            Ok(h) => h,
            Err(msg) => return failed(x, g, iters, msg),
        };
        let eps = pg.min(1e-3);
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                lo[i] < hi[i]
                    && !(x[i] <= lo[i] + eps && g[i] > 0.0)
                    && !(x[i] >= hi[i] - eps && g[i] < 0.0)
            })
            .collect();
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        if !free.is_empty() {
            let (step, used) = regularised_step(&h, &g, &free, shift);
            shift = used;
            for (k, &i) in free.iter().enumerate() {
                d[i] = step[k];
            }
        }
        let mut accepted =
            line_search(model, &x, fx, &g, &d, lo, hi, opts.armijo, &mut xt, &mut gt);
        if accepted.is_none() {
            // Newton direction failed; retry along the scaled steepest descent
            let gn = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            let d: Vec<f64> = g.iter().map(|v| -v / gn).collect();
            accepted = line_search(model, &x, fx, &g, &d, lo, hi, opts.armijo, &mut xt, &mut gt);
            shift = shift.max(1e-8) * 10.0;
        }
        match accepted {
            Some(Ok(ft)) => {
                std::mem::swap(&mut x, &mut xt);
                std::mem::swap(&mut g, &mut gt);
                fx = ft;
                iters += 1;
            }
            Some(Err(msg)) => return failed(x, g, iters, msg),
            None => {
                stop = InnerStop::LineSearchFailed;
                break;
            }
        }
    }
    let pg_norm = projected_gradient_norm(&x, &g, lo, hi);
    InnerResult {
        x,
        f: fx,
        grad: g,
        iters,
        pg_norm,
        stop,
    }
}

fn failed(x: Vec<f64>, g: Vec<f64>, iters: usize, msg: String) -> InnerResult {
    InnerResult {
        x,
        f: f64::NAN,
        grad: g,
        iters,
        pg_norm: f64::INFINITY,
        stop: InnerStop::EvalFailed(msg),
    }
}

/// Solves `(H_FF + tau I) d = -g_F`, raising `tau` until the Cholesky
/// factorisation succeeds. Returns the step and the shift that worked.
fn regularised_step(
    h: &DMatrix<f64>,
    g: &[f64],
    free: &[usize],
    prev_shift: f64,
) -> (Vec<f64>, f64) {
    let m = free.len();
    let mut hf = DMatrix::zeros(m, m);
    let mut scale = 0.0f64;
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            hf[(a, b)] = h[(i, j)];
        }
        scale = scale.max(h[(i, i)].abs());
    }
    let rhs = DVector::from_iterator(m, free.iter().map(|&i| -g[i]));
    let floor = 1e-10 * scale.max(1.0);
    let mut tau = if prev_shift > 0.0 {
        (prev_shift * 0.1).max(floor)
    } else {
        0.0
    };
    loop {
        let mut shifted = hf.clone();
        for a in 0..m {
            shifted[(a, a)] += tau;
        }
        if let Some(chol) = shifted.cholesky() {
            let d = chol.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) {
                return (d.iter().copied().collect(), tau);
            }
        }
        tau = if tau == 0.0 { floor } else { tau * 10.0 };
        if !tau.is_finite() || tau > 1e30 {
            // give up on curvature: plain gradient step
            return (rhs.iter().copied().collect(), tau);
        }
    }
}

/// Projected backtracking; `None` when no acceptable step was found.
#[allow(clippy::too_many_arguments)]
fn line_search<M: SecondOrder>(
    model: &mut M,
    x: &[f64],
    fx: f64,
    g: &[f64],
    d: &[f64],
    lo: &[f64],
    hi: &[f64],
    armijo: f64,
    xt: &mut [f64],
    gt: &mut [f64],
) -> Option<Result<f64, String>> {
    let mut alpha = 1.0;
    for _ in 0..MAX_BACKTRACKS {
        for i in 0..x.len() {
            xt[i] = (x[i] + alpha * d[i]).clamp(lo[i], hi[i]);
        }
        let slope: f64 = (0..x.len()).map(|i| g[i] * (xt[i] - x[i])).sum();
        if slope < 0.0 {
            match model.value_grad(xt, gt) {
                Ok(ft) if ft.is_finite() && ft <= fx + armijo * slope => return Some(Ok(ft)),
                Ok(_) => {}
                // a trial point outside the evaluable region just shrinks the step
                Err(_) if alpha > 1e-12 => {}
                Err(msg) => return Some(Err(msg)),
            }
        }
        alpha *= 0.5;
    }
    None
}
