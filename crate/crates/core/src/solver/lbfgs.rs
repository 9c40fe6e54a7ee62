//! Box-constrained limited-memory BFGS with a projected backtracking line
//! search.
//!
//! Variables sitting on a bound with the gradient pushing outward are frozen
//! for the direction computation; the two-loop recursion runs on the rest.

use std::collections::VecDeque;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub armijo: f64,
    pub max_iters: usize,
    /// Stop once the projected gradient infinity norm falls below this.
    pub tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            armijo: 1e-4,
            max_iters: 2000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InnerStop {
    Converged,
    MaxIters,
    LineSearchFailed,
    Deadline,
    EvalFailed(String),
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iters: usize,
    pub pg_norm: f64,
    pub stop: InnerStop,
}

pub fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Infinity norm of `P(x - g) - x`.
pub fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for i in 0..x.len() {
        let p = (x[i] - g[i]).clamp(lo[i], hi[i]) - x[i];
        m = m.max(p.abs());
    }
    m
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f` over the box `[lo, hi]` starting from `x0`.
///
/// `f` writes the gradient into its second argument and returns the value,
/// or an error message when the point cannot be evaluated.
pub fn minimize<F>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &LbfgsOptions,
    deadline: Option<Instant>,
) -> InnerResult
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64, String>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let mut fx = match f(&x, &mut g) {
        Ok(v) => v,
        Err(msg) => {
            return InnerResult {
                x,
                f: f64::NAN,
                grad: g,
                iters: 0,
                pg_norm: f64::INFINITY,
                stop: InnerStop::EvalFailed(msg),
            }
        }
    };
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut iters = 0;
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
        // free variables: not pinned against a bound by the gradient
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let at_lo = x[i] <= lo[i] && g[i] > 0.0;
                let at_hi = x[i] >= hi[i] && g[i] < 0.0;
                !(at_lo || at_hi || lo[i] == hi[i])
            })
            .collect();
        for i in 0..n {
            d[i] = if free[i] { g[i] } else { 0.0 };
        }
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * masked_dot(s, &d, &free);
            for i in 0..n {
                if free[i] {
                    d[i] -= a * y[i];
                }
            }
            alphas.push(a);
        }
        let gamma = mem
            .back()
            .map(|(s, y, _)| {
                let yy = masked_dot(y, y, &free);
                if yy > 0.0 {
                    (masked_dot(s, y, &free) / yy).max(1e-12)
                } else {
                    1.0
                }
            })
            .unwrap_or(1.0);
        for v in d.iter_mut() {
            *v *= gamma;
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * masked_dot(y, &d, &free);
            for i in 0..n {
                if free[i] {
                    d[i] += s[i] * (a - b);
                }
            }
        }
        for i in 0..n {
            d[i] = if free[i] { -d[i] } else { 0.0 };
        }
        let slope = dot(&g, &d);
        if !(slope < 0.0) || !slope.is_finite() {
            mem.clear();
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
        }
        let mut alpha = if mem.is_empty() {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if dmax > 1.0 {
                1.0 / dmax
            } else {
                1.0
            }
        } else {
            1.0
        };
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                xt[i] = (x[i] + alpha * d[i]).clamp(lo[i], hi[i]);
            }
            let decrease: f64 = (0..n).map(|i| g[i] * (xt[i] - x[i])).sum();
            if decrease == 0.0 {
                break;
            }
            if let Ok(ft) = f(&xt, &mut gt) {
                if ft.is_finite() && ft <= fx + opts.armijo * decrease {
                    accepted = true;
                    let s: Vec<f64> = (0..n).map(|i| xt[i] - x[i]).collect();
                    let y: Vec<f64> = (0..n).map(|i| gt[i] - g[i]).collect();
                    let sy = dot(&s, &y);
                    if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                        if mem.len() == opts.memory {
                            mem.pop_front();
                        }
                        mem.push_back((s, y, 1.0 / sy));
                    }
                    std::mem::swap(&mut x, &mut xt);
                    std::mem::swap(&mut g, &mut gt);
                    fx = ft;
                    break;
                }
            }
            alpha *= 0.5;
        }
        iters += 1;
        if !accepted {
            if mem.is_empty() {
                stop = InnerStop::LineSearchFailed;
                break;
            }
            mem.clear();
        }
    }
    let pg_norm = projected_gradient_norm(&x, &g, lo, hi);
    if pg_norm <= opts.tol {
        stop = InnerStop::Converged;
    }
    InnerResult {
        x,
        f: fx,
        grad: g,
        iters,
        pg_norm,
        stop,
    }
}

fn masked_dot(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        if mask[i] {
            s += a[i] * b[i];
        }
    }
    s
}
