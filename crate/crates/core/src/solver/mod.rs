//! Augmented-Lagrangian (PHR) solver for smooth NLPs with box bounds,
//! equality rows `c(z) = 0` and inequality rows `g(z) <= 0`.
//!
//! Each outer iteration minimises
//!
//! ```text
//! f + y^T c + rho/2 |c|^2 + 1/(2 rho) sum(max(0, w + rho g)^2 - w^2)
//! ```
//!
//! over the box with a projected Newton method (default) or projected
//! L-BFGS, then updates `y += rho c`,
//! `w = max(0, w + rho g)`. An outer step that raises the constraint
//! violation is rejected and retried with a larger penalty, so accepted
//! iterates have non-increasing violation.

pub mod derivcheck;
pub mod hessian;
pub mod lbfgs;
pub mod newton;

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::Triplets;

pub use derivcheck::{check_derivatives, DerivReport};
use hessian::HessianPattern;
use lbfgs::{InnerStop, LbfgsOptions};
use nalgebra::DMatrix;
use newton::{NewtonOptions, SecondOrder};

/// Inner minimiser for the augmented Lagrangian subproblems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    /// Projected Newton on a Hessian built from finite differences of the
    /// Lagrangian gradient plus the exact Gauss-Newton penalty term.
    #[default]
    Newton,
    /// Projected L-BFGS; first-order only, cheaper per step.
    Lbfgs,
}

/// A smooth NLP as seen by the solver.
pub trait Problem {
    fn n_vars(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    /// Objective value; fills `grad` when given.
    fn objective(&self, z: &[f64], grad: Option<&mut [f64]>) -> Result<f64>;
    /// Writes residuals and, when asked, appends Jacobian triplets (the
    /// triplet buffers are cleared by the caller).
    fn constraints(
        &self,
        z: &[f64],
        eq: &mut [f64],
        ineq: &mut [f64],
        jac: Option<(&mut Triplets, &mut Triplets)>,
    ) -> Result<()>;
    fn eq_name(&self, i: usize) -> String {
        format!("eq[{i}]")
    }
    fn ineq_name(&self, i: usize) -> String {
        format!("ineq[{i}]")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_outer_iters: usize,
    /// Inner iteration cap for L-BFGS.
    pub max_inner_iters: usize,
    /// Inner iteration cap for projected Newton.
    pub max_newton_iters: usize,
    pub inner: InnerMethod,
    pub tol_feas: f64,
    pub tol_opt: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    pub lbfgs_memory: usize,
    pub armijo: f64,
    /// Seed for the optional start perturbation.
    pub seed: u64,
    /// Half-width of a uniform perturbation added to the guess; 0 disables.
    pub perturbation: f64,
    pub derivative_check: bool,
    /// Wall-clock budget in seconds.
    pub time_limit: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_outer_iters: 100,
            max_inner_iters: 3000,
            max_newton_iters: 200,
            inner: InnerMethod::Newton,
            tol_feas: 1e-6,
            tol_opt: 1e-5,
            penalty_init: 100.0,
            penalty_growth: 10.0,
            penalty_max: 1e9,
            lbfgs_memory: 10,
            armijo: 1e-4,
            seed: 0,
            perturbation: 0.0,
            derivative_check: false,
            time_limit: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_feas > 0.0 && self.tol_opt > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if !(self.penalty_growth > 1.0) || !(self.penalty_init > 0.0) {
            return Err(Error::InvalidArgument(
                "penalty must start positive and grow by > 1".into(),
            ));
        }
        if self.lbfgs_memory == 0 {
            return Err(Error::InvalidArgument(
                "L-BFGS memory must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIters,
    InfeasibleStall,
    NumericFailure,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Converged => "converged",
            Status::MaxIters => "max_iters",
            Status::InfeasibleStall => "infeasible_stall",
            Status::NumericFailure => "numeric_failure",
        })
    }
}

/// One accepted outer iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub outer: usize,
    pub inner_iters: usize,
    pub objective: f64,
    pub feasibility: f64,
    pub optimality: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub z: Vec<f64>,
    pub status: Status,
    pub feas_norm: f64,
    pub opt_norm: f64,
    pub comp_norm: f64,
    pub iterations: usize,
    pub inner_iterations: usize,
    pub objective: f64,
    pub timing: f64,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
    pub history: Vec<IterRecord>,
    /// Offending constraint for `numeric_failure`, or other exit detail.
    pub message: Option<String>,
    pub derivative_report: Option<DerivReport>,
}

impl Solution {
    /// Iteration log as CSV: step, objective, feasibility, optimality, penalty.
    pub fn write_log_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "step",
            "inner_iters",
            "objective",
            "feasibility",
            "optimality",
            "penalty",
        ])?;
        for r in &self.history {
            w.write_record([
                r.outer.to_string(),
                r.inner_iters.to_string(),
                format!("{:e}", r.objective),
                format!("{:e}", r.feasibility),
                format!("{:e}", r.optimality),
                format!("{:e}", r.penalty),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluation buffers for one problem.
struct Workspace<'a, P: Problem + ?Sized> {
    p: &'a P,
    eq: Vec<f64>,
    ineq: Vec<f64>,
    jeq: Triplets,
    jin: Triplets,
    gf: Vec<f64>,
}

impl<'a, P: Problem + ?Sized> Workspace<'a, P> {
    fn new(p: &'a P) -> Self {
        let n = p.n_vars();
        Workspace {
            p,
            eq: vec![0.0; p.n_eq()],
            ineq: vec![0.0; p.n_ineq()],
            jeq: Triplets::new(p.n_eq(), n),
            jin: Triplets::new(p.n_ineq(), n),
            gf: vec![0.0; n],
        }
    }

    /// Objective, gradient, residuals and Jacobians at `z`. The error names
    /// the first non-finite quantity.
    fn eval(&mut self, z: &[f64]) -> std::result::Result<f64, String> {
        let f = self
            .p
            .objective(z, Some(&mut self.gf))
            .map_err(|e| format!("objective: {e}"))?;
        self.jeq.clear();
        self.jin.clear();
        self.p
            .constraints(
                z,
                &mut self.eq,
                &mut self.ineq,
                Some((&mut self.jeq, &mut self.jin)),
            )
            .map_err(|e| format!("constraint evaluation: {e}"))?;
        if !f.is_finite() || self.gf.iter().any(|v| !v.is_finite()) {
            return Err("objective".into());
        }
        if let Some(i) = self.eq.iter().position(|v| !v.is_finite()) {
            return Err(self.p.eq_name(i));
        }
        if let Some(i) = self.ineq.iter().position(|v| !v.is_finite()) {
            return Err(self.p.ineq_name(i));
        }
        if let Some(k) = self.jeq.vals.iter().position(|v| !v.is_finite()) {
            return Err(format!("{} (Jacobian)", self.p.eq_name(self.jeq.rows[k])));
        }
        if let Some(k) = self.jin.vals.iter().position(|v| !v.is_finite()) {
            return Err(format!("{} (Jacobian)", self.p.ineq_name(self.jin.rows[k])));
        }
        Ok(f)
    }

    /// Augmented Lagrangian value and gradient.
    fn merit(
        &mut self,
        z: &[f64],
        y: &[f64],
        w: &[f64],
        rho: f64,
        grad: &mut [f64],
    ) -> std::result::Result<f64, String> {
        let f = self.eval(z)?;
        let mut val = f;
        grad.copy_from_slice(&self.gf);
        let mut ye = vec![0.0; self.eq.len()];
        for i in 0..self.eq.len() {
            let c = self.eq[i];
            val += y[i] * c + 0.5 * rho * c * c;
            ye[i] = y[i] + rho * c;
        }
        let mut wi = vec![0.0; self.ineq.len()];
        for j in 0..self.ineq.len() {
            let t = (w[j] + rho * self.ineq[j]).max(0.0);
            val += (t * t - w[j] * w[j]) / (2.0 * rho);
            wi[j] = t;
        }
        self.jeq.add_transpose_mul(&ye, grad);
        self.jin.add_transpose_mul(&wi, grad);
        Ok(val)
    }

    /// Violation `max(|c|_inf, |max(g, 0)|_inf)`.
    fn violation(&self) -> f64 {
        let e = self.eq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.ineq.iter().fold(e, |m, v| m.max(*v))
    }
}

fn lagrangian_gradient<P: Problem + ?Sized>(
    ws: &Workspace<'_, P>,
    y: &[f64],
    w: &[f64],
) -> Vec<f64> {
    let mut g = ws.gf.clone();
    ws.jeq.add_transpose_mul(y, &mut g);
    ws.jin.add_transpose_mul(w, &mut g);
    g
}

/// Augmented Lagrangian subproblem with fixed multipliers and penalty.
struct AlModel<'w, 'a, P: Problem + ?Sized> {
    ws: &'w mut Workspace<'a, P>,
    y: &'w [f64],
    w: &'w [f64],
    rho: f64,
    pattern: &'w HessianPattern,
}

/// Appends `scale * sum_r grad_r grad_r^T` over the rows selected by `keep`.
fn add_gauss_newton(t: &Triplets, keep: impl Fn(usize) -> bool, scale: f64, h: &mut DMatrix<f64>) {
    let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); t.nrows];
    for k in 0..t.len() {
        if keep(t.rows[k]) {
            by_row[t.rows[k]].push((t.cols[k], t.vals[k]));
        }
    }
    for row in &by_row {
        for &(i, a) in row {
            for &(j, b) in row {
                h[(i, j)] += scale * a * b;
            }
        }
    }
}

impl<P: Problem + ?Sized> SecondOrder for AlModel<'_, '_, P> {
    fn value_grad(&mut self, x: &[f64], g: &mut [f64]) -> std::result::Result<f64, String> {
        self.ws.merit(x, self.y, self.w, self.rho, g)
    }

    /// `d2(f + yhat^T c + what^T g) + rho (Jc^T Jc + Jg_A^T Jg_A)` with
    /// first-order multiplier estimates `yhat`, `what` held fixed. The
    /// curvature part is a forward difference of the Lagrangian gradient.
    fn hessian(&mut self, x: &[f64]) -> std::result::Result<DMatrix<f64>, String> {
        const FD_STEP: f64 = 1e-7;
        let n = x.len();
        let rho = self.rho;
        self.ws.eval(x)?;
        let yh: Vec<f64> = self
            .ws
            .eq
            .iter()
            .zip(self.y)
            .map(|(c, y)| y + rho * c)
            .collect();
        let wh: Vec<f64> = self
            .ws
            .ineq
            .iter()
            .zip(self.w)
            .map(|(g, w)| (w + rho * g).max(0.0))
            .collect();
        let mut h = DMatrix::zeros(n, n);
        add_gauss_newton(&self.ws.jeq, |_| true, rho, &mut h);
        add_gauss_newton(&self.ws.jin, |r| wh[r] > 0.0, rho, &mut h);

        let p = self.ws.p;
        let fixed: Vec<bool> = p
            .lower()
            .iter()
            .zip(p.upper())
            .map(|(l, u)| l >= u)
            .collect();
        // objective curvature: dense differences of the (cheap) gradient
        let mut g0 = self.ws.gf.clone();
        let mut xp = x.to_vec();
        let mut gp = vec![0.0; n];
        for j in (0..n).filter(|&j| !fixed[j]) {
            let step = FD_STEP * x[j].abs().max(1.0);
            xp[j] = x[j] + step;
            p.objective(&xp, Some(&mut gp))
                .map_err(|e| format!("objective: {e}"))?;
            xp[j] = x[j];
            for i in 0..n {
                let v = 0.5 * (gp[i] - g0[i]) / step;
                h[(i, j)] += v;
                h[(j, i)] += v;
            }
        }
        // constraint curvature weighted by the multiplier estimates
        g0.fill(0.0);
        self.ws.jeq.add_transpose_mul(&yh, &mut g0);
        self.ws.jin.add_transpose_mul(&wh, &mut g0);
        let (me, mi) = (p.n_eq(), p.n_ineq());
        let (mut ce, mut ci) = (vec![0.0; me], vec![0.0; mi]);
        let (mut je, mut ji) = (Triplets::new(me, n), Triplets::new(mi, n));
        let hc = self.pattern.assemble(x, &g0, FD_STEP, |z, out| {
            je.clear();
            ji.clear();
            p.constraints(z, &mut ce, &mut ci, Some((&mut je, &mut ji)))
                .map_err(|e| format!("constraint evaluation: {e}"))?;
            out.fill(0.0);
            je.add_transpose_mul(&yh, out);
            ji.add_transpose_mul(&wh, out);
            Ok(())
        })?;
        h += hc;
        if h.iter().any(|v| !v.is_finite()) {
            return Err("non-finite Hessian".into());
        }
        Ok(h)
    }
}

/// Sparsity-driven colouring from the Jacobian at `z` and at two nearby
/// points, so values that happen to vanish at `z` do not hide structure.
fn hessian_pattern<P: Problem + ?Sized>(
    ws: &Workspace<'_, P>,
    z: &[f64],
    seed: u64,
) -> HessianPattern {
    let p = ws.p;
    let n = z.len();
    let fixed: Vec<bool> = p
        .lower()
        .iter()
        .zip(p.upper())
        .map(|(l, u)| l >= u)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut samples = Vec::new();
    for trial in 0..3 {
        let mut zz = z.to_vec();
        if trial > 0 {
            for v in zz.iter_mut() {
                *v += rng.random_range(-0.1..=0.1) * v.abs().max(1.0);
            }
        }
        let (mut e, mut i) = (vec![0.0; p.n_eq()], vec![0.0; p.n_ineq()]);
        let (mut je, mut ji) = (Triplets::new(p.n_eq(), n), Triplets::new(p.n_ineq(), n));
        if p.constraints(&zz, &mut e, &mut i, Some((&mut je, &mut ji)))
            .is_ok()
        {
            samples.push((je, ji));
        }
    }
    if samples.is_empty() {
        samples.push((ws.jeq.clone(), ws.jin.clone()));
    }
    let refs: Vec<(&Triplets, &Triplets)> = samples.iter().map(|(a, b)| (a, b)).collect();
    HessianPattern::from_jacobians(n, &refs, &fixed)
}

/// Multiplier-dependent scaling of the optimality measure.
fn dual_scale(y: &[f64], w: &[f64]) -> f64 {
    const S_MAX: f64 = 100.0;
    let m = (y.len() + w.len()).max(1) as f64;
    let l1: f64 = y.iter().chain(w).map(|v| v.abs()).sum();
    (l1 / m).max(S_MAX) / S_MAX
}

fn comp_scale(w: &[f64]) -> f64 {
    const S_MAX: f64 = 100.0;
    let l1: f64 = w.iter().sum();
    (l1 / w.len().max(1) as f64).max(S_MAX) / S_MAX
}

/// Solves `problem` from `guess`.
pub fn solve<P: Problem + ?Sized>(
    problem: &P,
    guess: &[f64],
    opts: &SolverOptions,
) -> Result<Solution> {
    opts.validate()?;
    let n = problem.n_vars();
    if guess.len() != n {
        return Err(Error::dim("initial guess", n, guess.len()));
    }
    let start = Instant::now();
    let deadline = opts.time_limit.map(|s| start + Duration::from_secs_f64(s));
    let (lo, hi) = (problem.lower(), problem.upper());
    let mut z = guess.to_vec();
    if opts.perturbation > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for v in z.iter_mut() {
            *v += rng.random_range(-opts.perturbation..=opts.perturbation);
        }
    }
    lbfgs::project(&mut z, lo, hi);
    let derivative_report = if opts.derivative_check {
        let rep = check_derivatives(problem, &z, 1e-6)?;
        if rep.max_deviation() > 1e-6 {
            log::warn!(
                "derivative check at the guess: max deviation {:e}",
                rep.max_deviation()
            );
        }
        Some(rep)
    } else {
        None
    };

    let mut ws = Workspace::new(problem);
    let mut y = vec![0.0; problem.n_eq()];
    let mut w = vec![0.0; problem.n_ineq()];
    let mut rho = opts.penalty_init;
    let fail =
        |z: Vec<f64>, msg: String, history: Vec<IterRecord>, start: Instant, report| Solution {
            z,
            status: Status::NumericFailure,
            feas_norm: f64::NAN,
            opt_norm: f64::NAN,
            comp_norm: f64::NAN,
            iterations: history.len().saturating_sub(1),
            inner_iterations: 0,
            objective: f64::NAN,
            timing: start.elapsed().as_secs_f64(),
            eq_multipliers: Vec::new(),
            ineq_multipliers: Vec::new(),
            history,
            message: Some(msg),
            derivative_report: report,
        };
    let mut f = match ws.eval(&z) {
        Ok(f) => f,
        Err(msg) => {
            return Ok(fail(
                z,
                format!("non-finite evaluation at the guess: {msg}"),
                Vec::new(),
                start,
                derivative_report,
            ))
        }
    };
    let pattern = (opts.inner == InnerMethod::Newton).then(|| hessian_pattern(&ws, &z, opts.seed));
    let mut viol = ws.violation();
    let mut opt = lbfgs::projected_gradient_norm(&z, &ws.gf, lo, hi);
    let mut comp = 0.0;
    let mut history = vec![IterRecord {
        outer: 0,
        inner_iters: 0,
        objective: f,
        feasibility: viol,
        optimality: opt,
        penalty: rho,
    }];
    let mut inner_total = 0;
    let mut omega: f64 = 1e-1;
    let mut status = Status::MaxIters;
    let mut message = None;
    let mut stall = 0;

    for outer in 1..=opts.max_outer_iters {
        if deadline.is_some_and(|t| Instant::now() >= t) {
            message = Some("time limit reached".into());
            break;
        }
        let sd = dual_scale(&y, &w);
        let target = 0.5 * opts.tol_opt * sd;
        let tol = omega.max(target);
        let (yc, wc) = (y.clone(), w.clone());
        let res = match opts.inner {
            InnerMethod::Lbfgs => {
                let inner_opts = LbfgsOptions {
                    memory: opts.lbfgs_memory,
                    armijo: opts.armijo,
                    max_iters: opts.max_inner_iters,
                    tol,
                };
                let ws_ref = &mut ws;
                lbfgs::minimize(
                    |x, g| ws_ref.merit(x, &yc, &wc, rho, g),
                    &z,
                    lo,
                    hi,
                    &inner_opts,
                    deadline,
                )
            }
            InnerMethod::Newton => {
                let inner_opts = NewtonOptions {
                    armijo: opts.armijo,
                    max_iters: opts.max_newton_iters,
                    tol,
                };
                let mut model = AlModel {
                    ws: &mut ws,
                    y: &yc,
                    w: &wc,
                    rho,
                    pattern: pattern.as_ref().expect("pattern built for Newton"),
                };
                newton::minimize(&mut model, &z, lo, hi, &inner_opts, deadline)
            }
        };
        inner_total += res.iters;
        if let InnerStop::EvalFailed(msg) = &res.stop {
            status = Status::NumericFailure;
            message = Some(format!("non-finite evaluation: {msg}"));
            break;
        }
        // evaluate the candidate (the workspace may hold a line-search trial)
        let f_new = match ws.eval(&res.x) {
            Ok(v) => v,
            Err(msg) => {
                status = Status::NumericFailure;
                message = Some(format!("non-finite evaluation: {msg}"));
                break;
            }
        };
        let viol_new = ws.violation();
        if viol_new > viol * (1.0 + 1e-12) + 1e-12 && viol > opts.tol_feas {
            // keep feasibility monotone: retry the same iterate harder
            rho *= opts.penalty_growth;
            stall += 1;
            log::debug!("outer {outer}: violation rose {viol:e} -> {viol_new:e}; rho -> {rho:e}");
            if rho > opts.penalty_max || stall > 8 {
                status = Status::InfeasibleStall;
                message = Some(format!("violation stuck at {viol:e}"));
                ws.eval(&z).map_err(Error::NonFinite)?;
                break;
            }
            ws.eval(&z).map_err(Error::NonFinite)?;
            continue;
        }
        let improved = viol_new <= 0.25 * viol;
        z = res.x;
        f = f_new;
        for (yi, ci) in y.iter_mut().zip(&ws.eq) {
            *yi += rho * ci;
        }
        for (wj, gj) in w.iter_mut().zip(&ws.ineq) {
            *wj = (*wj + rho * gj).max(0.0);
        }
        let sd = dual_scale(&y, &w);
        let gl = lagrangian_gradient(&ws, &y, &w);
        opt = lbfgs::projected_gradient_norm(&z, &gl, lo, hi) / sd;
        let sc = comp_scale(&w);
        comp = ws
            .ineq
            .iter()
            .zip(&w)
            .fold(0.0f64, |m, (g, w)| m.max((g * w).abs()))
            / sc;
        viol = viol_new;
        history.push(IterRecord {
            outer,
            inner_iters: res.iters,
            objective: f,
            feasibility: viol,
            optimality: opt,
            penalty: rho,
        });
        log::debug!(
            "outer {outer}: f {f:.6e} viol {viol:.2e} opt {opt:.2e} comp {comp:.2e} rho {rho:.1e} inner {} ({:?})",
            res.iters,
            res.stop
        );
        if viol <= opts.tol_feas && opt <= opts.tol_opt && comp <= opts.tol_opt {
            status = Status::Converged;
            break;
        }
        if !improved && viol > opts.tol_feas {
            rho = (rho * opts.penalty_growth).min(opts.penalty_max);
            stall += 1;
        } else {
            stall = 0;
        }
        if stall > 12 {
            status = Status::InfeasibleStall;
            message = Some(format!("violation stuck at {viol:e}"));
            break;
        }
        omega = (omega * 0.1).max(target);
    }
    Ok(Solution {
        z,
        status,
        feas_norm: viol,
        opt_norm: opt,
        comp_norm: comp,
        iterations: history.len() - 1,
        inner_iterations: inner_total,
        objective: f,
        timing: start.elapsed().as_secs_f64(),
        eq_multipliers: y,
        ineq_multipliers: w,
        history,
        message,
        derivative_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `min sum (z - c)^2` with optional linear rows.
    struct Quad {
        c: Vec<f64>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    }

    impl Problem for Quad {
        fn n_vars(&self) -> usize {
            self.c.len()
        }
        fn n_eq(&self) -> usize {
            0
        }
        fn n_ineq(&self) -> usize {
            0
        }
        fn lower(&self) -> &[f64] {
            &self.lo
        }
        fn upper(&self) -> &[f64] {
            &self.hi
        }
        fn objective(&self, z: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
            if let Some(g) = grad {
                for i in 0..z.len() {
                    g[i] = 2.0 * (z[i] - self.c[i]);
                }
            }
            Ok(z.iter().zip(&self.c).map(|(a, b)| (a - b) * (a - b)).sum())
        }
        fn constraints(
            &self,
            _: &[f64],
            _: &mut [f64],
            _: &mut [f64],
            _: Option<(&mut Triplets, &mut Triplets)>,
        ) -> Result<()> {
            Ok(())
        }
    }

    /// Rosenbrock with the equality `x + y = 1` and an optional inequality.
    struct Rosen {
        ineq: bool,
    }

    impl Problem for Rosen {
        fn n_vars(&self) -> usize {
            2
        }
        fn n_eq(&self) -> usize {
            1
        }
        fn n_ineq(&self) -> usize {
            usize::from(self.ineq)
        }
        fn lower(&self) -> &[f64] {
            &[-5.0, -5.0]
        }
        fn upper(&self) -> &[f64] {
            &[5.0, 5.0]
        }
        fn objective(&self, z: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
            let (a, b) = (z[0], z[1]);
            if let Some(g) = grad {
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
            }
            Ok((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
        }
        fn constraints(
            &self,
            z: &[f64],
            eq: &mut [f64],
            ineq: &mut [f64],
            jac: Option<(&mut Triplets, &mut Triplets)>,
        ) -> Result<()> {
            eq[0] = z[0] + z[1] - 1.0;
            if self.ineq {
                // x >= 0.7, active at the optimum
                ineq[0] = 0.7 - z[0];
            }
            if let Some((je, ji)) = jac {
                je.push(0, 0, 1.0);
                je.push(0, 1, 1.0);
                if self.ineq {
                    ji.push(0, 0, -1.0);
                }
            }
            Ok(())
        }
    }

    #[test]
    fn unconstrained_quadratic_in_two_outer_iterations() {
        let inf = f64::INFINITY;
        let p = Quad {
            c: vec![1.0, -3.0, 0.5],
            lo: vec![-inf; 3],
            hi: vec![inf; 3],
        };
        let s = solve(&p, &[0.0; 3], &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Converged);
        assert!(s.iterations <= 2);
        for i in 0..3 {
            assert!((s.z[i] - p.c[i]).abs() < 1e-5);
        }
    }

    fn grid_minimum(ineq: bool) -> f64 {
        // on the line y = 1 - x the problem is one-dimensional
        let f = |x: f64| {
            let y = 1.0 - x;
            (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
        };
        let floor = if ineq { 0.7 } else { -5.0 };
        let (mut lo, mut hi) = (floor, 5.0);
        let mut best = lo;
        for _ in 0..8 {
            let step = (hi - lo) / 1000.0;
            best = (0..=1000)
                .map(|k| lo + k as f64 * step)
                .min_by(|a, b| f(*a).total_cmp(&f(*b)))
                .unwrap();
            lo = (best - 2.0 * step).max(floor);
            hi = (best + 2.0 * step).min(5.0);
        }
        best
    }

    #[test]
    fn rosenbrock_with_equality_matches_grid_oracle() {
        for ineq in [false, true] {
            // x = -1.618 is a second local minimum on the line; start in the global basin
            let s = solve(&Rosen { ineq }, &[0.0, 0.0], &SolverOptions::default()).unwrap();
            assert_eq!(s.status, Status::Converged, "{:?}", s.message);
            let x = grid_minimum(ineq);
            assert!((s.z[0] - x).abs() < 1e-3, "ineq {ineq}: {} vs {x}", s.z[0]);
            assert!((s.z[0] + s.z[1] - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn deterministic_runs() {
        let a = solve(
            &Rosen { ineq: true },
            &[-1.0, 2.0],
            &SolverOptions::default(),
        )
        .unwrap();
        let b = solve(
            &Rosen { ineq: true },
            &[-1.0, 2.0],
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.inner_iterations, b.inner_iterations);
    }

    #[test]
    fn violation_history_is_monotone() {
        let s = solve(
            &Rosen { ineq: true },
            &[4.0, 4.0],
            &SolverOptions::default(),
        )
        .unwrap();
        for pair in s.history.windows(2) {
            assert!(pair[1].feasibility <= pair[0].feasibility * (1.0 + 1e-12) + 1e-12);
        }
        let mut buf = Vec::new();
        s.write_log_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,inner_iters,objective,feasibility,optimality,penalty"));
        assert_eq!(text.lines().count(), s.history.len() + 1);
    }

    #[test]
    fn nan_constraint_is_named() {
        struct Bad;
        impl Problem for Bad {
            fn n_vars(&self) -> usize {
                1
            }
            fn n_eq(&self) -> usize {
                1
            }
            fn n_ineq(&self) -> usize {
                0
            }
            fn lower(&self) -> &[f64] {
                &[-1.0]
            }
            fn upper(&self) -> &[f64] {
                &[1.0]
            }
            fn objective(&self, z: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
                if let Some(g) = grad {
                    g[0] = 0.0;
                }
                Ok(z[0])
            }
            fn constraints(
                &self,
                _: &[f64],
                eq: &mut [f64],
                _: &mut [f64],
                _: Option<(&mut Triplets, &mut Triplets)>,
            ) -> Result<()> {
                eq[0] = f64::NAN;
                Ok(())
            }
            fn eq_name(&self, _: usize) -> String {
                "broken_row".into()
            }
        }
        let s = solve(&Bad, &[0.0], &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::NumericFailure);
        assert!(s.message.unwrap().contains("broken_row"));
    }

    #[test]
    fn options_are_validated() {
        let bad = SolverOptions {
            penalty_growth: 1.0,
            ..Default::default()
        };
        assert!(solve(&Rosen { ineq: false }, &[0.0, 0.0], &bad).is_err());
        assert!(solve(&Rosen { ineq: false }, &[0.0], &SolverOptions::default()).is_err());
    }
}
