//! Kinematic vehicle models and the RK4 step used by the transcription.
//!
//! Tractor-trailer state `(x, y, theta1, theta2, v, delta)`, single car
//! `(x, y, theta1, v, delta)`; input `(a, omega)` in both cases. `(x, y)` is
//! the reference point of the tractor (rear axle or hitch), `theta1` the
//! tractor yaw and `theta2` the trailer yaw.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_CONTROLS: usize = 2;

/// Geometry and box limits of a kinematic vehicle. Angles in radians,
/// speeds in m/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleModelParams {
    pub l1: f64,
    /// Hitch-to-trailer-axle length; `Some` selects the tractor-trailer model.
    pub l2: Option<f64>,
    pub theta_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub delta_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub omega_max: f64,
    /// Articulation limit `|theta1 - theta2|`, tractor-trailer only.
    pub joint_max: Option<f64>,
}

impl VehicleModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.l1,
            self.theta_max,
            self.v_min,
            self.v_max,
            self.delta_max,
            self.a_min,
            self.a_max,
            self.omega_max,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidScenario(
                "vehicle bounds must be finite".into(),
            ));
        }
        if !(self.l1 > 0.0) || self.l2.is_some_and(|l| !(l > 0.0)) {
            return Err(Error::InvalidScenario(
                "wheelbase lengths must be positive".into(),
            ));
        }
        if self.v_min > self.v_max || self.a_min > self.a_max {
            return Err(Error::InvalidScenario(
                "lower bound above upper bound".into(),
            ));
        }
        if self.delta_max >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::InvalidScenario(
                "steering limit must stay below 90 deg".into(),
            ));
        }
        if self.joint_max.is_some() && self.l2.is_none() {
            return Err(Error::InvalidScenario(
                "joint-angle limit needs a trailer".into(),
            ));
        }
        Ok(())
    }

    pub fn has_trailer(&self) -> bool {
        self.l2.is_some()
    }

    pub fn n_states(&self) -> usize {
        if self.has_trailer() {
            6
        } else {
            5
        }
    }

    pub fn idx_v(&self) -> usize {
        self.n_states() - 2
    }

    pub fn idx_delta(&self) -> usize {
        self.n_states() - 1
    }

    /// Per-state box `(lower, upper)`; positions are unbounded.
    pub fn state_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let inf = f64::INFINITY;
        let mut lo = vec![-inf, -inf, -self.theta_max];
        let mut hi = vec![inf, inf, self.theta_max];
        if self.has_trailer() {
            lo.push(-self.theta_max);
            hi.push(self.theta_max);
        }
        lo.extend([self.v_min, -self.delta_max]);
        hi.extend([self.v_max, self.delta_max]);
        (lo, hi)
    }

    pub fn control_bounds(&self) -> ([f64; 2], [f64; 2]) {
        ([self.a_min, -self.omega_max], [self.a_max, self.omega_max])
    }
}

/// Named view of a state vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta1: f64,
    pub theta2: Option<f64>,
    pub v: f64,
    pub delta: f64,
}

impl VehicleState {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = vec![self.x, self.y, self.theta1];
        if let Some(t2) = self.theta2 {
            out.push(t2);
        }
        out.extend([self.v, self.delta]);
        out
    }

    pub fn from_slice(xi: &[f64]) -> Result<Self> {
        match xi.len() {
            5 => Ok(VehicleState {
                x: xi[0],
                y: xi[1],
                theta1: xi[2],
                theta2: None,
                v: xi[3],
                delta: xi[4],
            }),
            6 => Ok(VehicleState {
                x: xi[0],
                y: xi[1],
                theta1: xi[2],
                theta2: Some(xi[3]),
                v: xi[4],
                delta: xi[5],
            }),
            n => Err(Error::dim("state length (5 or 6)", 6, n)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub a: f64,
    pub omega: f64,
}

/// State derivative with its Jacobians.
#[derive(Debug, Clone)]
pub struct DerivJet {
    pub f: DVector<f64>,
    pub dfdx: DMatrix<f64>,
    pub dfdu: DMatrix<f64>,
}

fn check_steer(delta: f64) -> Result<f64> {
    let c = delta.cos();
    if c.abs() < 1e-12 {
        return Err(Error::SteeringSingularity(delta));
    }
    Ok(c)
}

/// Continuous-time dynamics with exact Jacobians.
pub fn deriv_jet(p: &VehicleModelParams, xi: &[f64], u: &[f64]) -> Result<DerivJet> {
    let n = p.n_states();
    if xi.len() != n {
        return Err(Error::dim("state vector", n, xi.len()));
    }
    if u.len() != N_CONTROLS {
        return Err(Error::dim("control vector", N_CONTROLS, u.len()));
    }
    if xi.iter().chain(u).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("state or control".into()));
    }
    let (iv, id) = (p.idx_v(), p.idx_delta());
    let (th1, v, delta) = (xi[2], xi[iv], xi[id]);
    let cd = check_steer(delta)?;
    let (s1, c1) = th1.sin_cos();
    let tan = delta.tan();
    let mut f = DVector::zeros(n);
    let mut dfdx = DMatrix::zeros(n, n);
    let mut dfdu = DMatrix::zeros(n, N_CONTROLS);
    f[0] = v * c1;
    f[1] = v * s1;
    f[2] = v * tan / p.l1;
    dfdx[(0, 2)] = -v * s1;
    dfdx[(0, iv)] = c1;
    dfdx[(1, 2)] = v * c1;
    dfdx[(1, iv)] = s1;
    dfdx[(2, iv)] = tan / p.l1;
    dfdx[(2, id)] = v / (p.l1 * cd * cd);
    if let Some(l2) = p.l2 {
        let (sj, cj) = (th1 - xi[3]).sin_cos();
        f[3] = v * sj / l2;
        dfdx[(3, 2)] = v * cj / l2;
        dfdx[(3, 3)] = -v * cj / l2;
        dfdx[(3, iv)] = sj / l2;
    }
    f[iv] = u[0];
    f[id] = u[1];
    dfdu[(iv, 0)] = 1.0;
    dfdu[(id, 1)] = 1.0;
    Ok(DerivJet { f, dfdx, dfdu })
}

fn check_model(p: &VehicleModelParams, trailer: bool) -> Result<()> {
    if p.has_trailer() != trailer {
        return Err(Error::InvalidArgument(format!(
            "model parameters {} a trailer length",
            if trailer { "lack" } else { "carry" }
        )));
    }
    Ok(())
}

/// `(v cos th1, v sin th1, v tan(delta)/L1, v sin(th1 - th2)/L2, a, omega)`.
pub fn tractor_trailer_deriv(
    xi: &VehicleState,
    u: &ControlInput,
    p: &VehicleModelParams,
) -> Result<Vec<f64>> {
    check_model(p, true)?;
    if xi.theta2.is_none() {
        return Err(Error::InvalidArgument(
            "tractor-trailer state needs theta2".into(),
        ));
    }
    Ok(deriv_jet(p, &xi.to_vec(), &[u.a, u.omega])?
        .f
        .as_slice()
        .to_vec())
}

/// Single-car reduction: drops the trailer yaw equation.
pub fn single_car_deriv(
    xi: &VehicleState,
    u: &ControlInput,
    p: &VehicleModelParams,
) -> Result<Vec<f64>> {
    check_model(p, false)?;
    if xi.theta2.is_some() {
        return Err(Error::InvalidArgument(
            "single-car state has no theta2".into(),
        ));
    }
    Ok(deriv_jet(p, &xi.to_vec(), &[u.a, u.omega])?
        .f
        .as_slice()
        .to_vec())
}

/// One classical RK4 step of `d xi/d tau = s f(xi)` with step `h`; `s`
/// defaults to 1.
pub fn rk4_step<F>(f: F, xi: &[f64], h: f64, tf_scale: Option<f64>) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    let s = tf_scale.unwrap_or(1.0);
    if !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "time scale must be nonnegative, got {s}"
        )));
    }
    let axpy = |x: &[f64], a: f64, k: &[f64]| -> Vec<f64> {
        x.iter().zip(k).map(|(x, k)| x + a * k).collect()
    };
    let stage = |x: &[f64]| -> Result<Vec<f64>> { Ok(f(x)?.into_iter().map(|d| s * d).collect()) };
    let k1 = stage(xi)?;
    let k2 = stage(&axpy(xi, 0.5 * h, &k1))?;
    let k3 = stage(&axpy(xi, 0.5 * h, &k2))?;
    let k4 = stage(&axpy(xi, h, &k3))?;
    let out: Vec<f64> = (0..xi.len())
        .map(|i| xi[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("RK4 state".into()));
    }
    Ok(out)
}

/// RK4 step of the vehicle model with Jacobians with respect to the start
/// state, the (held) control and the time scale.
#[derive(Debug, Clone)]
pub struct Rk4Jet {
    pub next: DVector<f64>,
    pub d_xi: DMatrix<f64>,
    pub d_u: DMatrix<f64>,
    pub d_scale: DVector<f64>,
}

pub fn rk4_step_jet(
    p: &VehicleModelParams,
    xi: &[f64],
    u: &[f64],
    h: f64,
    scale: f64,
) -> Result<Rk4Jet> {
    let n = p.n_states();
    let x0 = DVector::from_column_slice(xi);
    let eye = DMatrix::<f64>::identity(n, n);
    let coef = [0.0, 0.5 * h, 0.5 * h, h];
    let mut ks: Vec<DVector<f64>> = Vec::with_capacity(4);
    let mut kx: Vec<DMatrix<f64>> = Vec::with_capacity(4);
    let mut ku: Vec<DMatrix<f64>> = Vec::with_capacity(4);
    let mut kscale: Vec<DVector<f64>> = Vec::with_capacity(4);
    for (i, c) in coef.iter().enumerate() {
        let (arg, darg_x, darg_u, darg_s) = if i == 0 {
            (
                x0.clone(),
                eye.clone(),
                DMatrix::zeros(n, N_CONTROLS),
                DVector::zeros(n),
            )
        } else {
            (
                &x0 + &ks[i - 1] * *c,
                &eye + &kx[i - 1] * *c,
                &ku[i - 1] * *c,
                &kscale[i - 1] * *c,
            )
        };
        let jet = deriv_jet(p, arg.as_slice(), u)?;
        kx.push(&jet.dfdx * darg_x * scale);
        ku.push((&jet.dfdx * darg_u + &jet.dfdu) * scale);
        kscale.push(&jet.f + &jet.dfdx * darg_s * scale);
        ks.push(jet.f * scale);
    }
    let w = h / 6.0;
    let comb = |v: &[DVector<f64>]| (&v[0] + &v[1] * 2.0 + &v[2] * 2.0 + &v[3]) * w;
    let combm = |m: &[DMatrix<f64>]| (&m[0] + &m[1] * 2.0 + &m[2] * 2.0 + &m[3]) * w;
    let next = &x0 + comb(&ks);
    if next.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("RK4 state".into()));
    }
    Ok(Rk4Jet {
        next,
        d_xi: eye + combm(&kx),
        d_u: combm(&ku),
        d_scale: comb(&kscale),
    })
}

/// Smooth pair `(th1 - th2 - max, th2 - th1 - max)`; both `<= 0` when the
/// articulation limit holds.
pub fn joint_angle_residual(xi: &VehicleState, joint_max: f64) -> Result<[f64; 2]> {
    let th2 = xi
        .theta2
        .ok_or_else(|| Error::InvalidArgument("joint angle needs a trailer state".into()))?;
    let d = xi.theta1 - th2;
    Ok([d - joint_max, -d - joint_max])
}

/// Integrates a control sequence from `xi0`, one RK4 step per control.
pub fn rollout(
    p: &VehicleModelParams,
    xi0: &[f64],
    controls: &[[f64; 2]],
    h: f64,
    scale: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![xi0.to_vec()];
    for u in controls {
        let last = out.last().expect("nonempty");
        let next = rk4_step(
            |x| Ok(deriv_jet(p, x, u)?.f.as_slice().to_vec()),
            last,
            h,
            Some(scale),
        )?;
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn trailer() -> VehicleModelParams {
        VehicleModelParams {
            l1: 1.0,
            l2: Some(4.5),
            theta_max: std::f64::consts::PI,
            v_min: -5.0 / 3.6,
            v_max: 5.0 / 3.6,
            delta_max: 40f64.to_radians(),
            a_min: -1.0,
            a_max: 1.0,
            omega_max: 5f64.to_radians(),
            joint_max: Some(60f64.to_radians()),
        }
    }

    fn car() -> VehicleModelParams {
        VehicleModelParams {
            l1: 2.6,
            l2: None,
            joint_max: None,
            ..trailer()
        }
    }

    fn state(th1: f64, th2: Option<f64>, v: f64, delta: f64) -> VehicleState {
        VehicleState {
            x: 0.0,
            y: 0.0,
            theta1: th1,
            theta2: th2,
            v,
            delta,
        }
    }

    #[test]
    fn straight_line_derivative() {
        let f = tractor_trailer_deriv(
            &state(0.0, Some(0.0), 1.0, 0.0),
            &ControlInput {
                a: 0.3,
                omega: -0.2,
            },
            &trailer(),
        )
        .unwrap();
        assert_eq!(f, vec![1.0, 0.0, 0.0, 0.0, 0.3, -0.2]);
        let f = single_car_deriv(
            &state(0.0, None, 1.0, 0.0),
            &ControlInput {
                a: 0.3,
                omega: -0.2,
            },
            &car(),
        )
        .unwrap();
        assert_eq!(f, vec![1.0, 0.0, 0.0, 0.3, -0.2]);
    }

    #[test]
    fn yaw_rates() {
        let u = ControlInput { a: 0.0, omega: 0.0 };
        let f = tractor_trailer_deriv(
            &state(0.0, Some(0.0), 1.0, 45f64.to_radians()),
            &u,
            &trailer(),
        )
        .unwrap();
        assert_relative_eq!(f[2], 1.0, epsilon = 1e-15);
        let f = tractor_trailer_deriv(
            &state(std::f64::consts::FRAC_PI_2, Some(0.0), 1.0, 0.0),
            &u,
            &trailer(),
        )
        .unwrap();
        assert_relative_eq!(f[3], 1.0 / 4.5, epsilon = 1e-15);
        let f = single_car_deriv(&state(0.0, None, 2.6, 45f64.to_radians()), &u, &car()).unwrap();
        assert_relative_eq!(f[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn steering_singularity_is_an_error() {
        let u = ControlInput { a: 0.0, omega: 0.0 };
        let err = single_car_deriv(
            &state(0.0, None, 1.0, std::f64::consts::FRAC_PI_2),
            &u,
            &car(),
        );
        assert!(matches!(err, Err(Error::SteeringSingularity(_))));
        assert!(single_car_deriv(&state(0.0, Some(0.0), 1.0, 0.0), &u, &car()).is_err());
    }

    #[test]
    fn rk4_on_trivial_fields() {
        let out = rk4_step(|x| Ok(vec![0.0; x.len()]), &[1.0, 2.0], 0.1, None).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
        let h: f64 = 0.3;
        let out = rk4_step(|x| Ok(x.to_vec()), &[2.0], h, None).unwrap();
        let poly = 2.0 * (1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0);
        assert_relative_eq!(out[0], poly, epsilon = 1e-15);
        assert!(rk4_step(|x| Ok(x.to_vec()), &[2.0], 0.0, None).is_err());
        assert!(rk4_step(|_| Ok(vec![f64::NAN]), &[2.0], 0.1, None).is_err());
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |h: f64| {
            let out = rk4_step(|x| Ok(x.to_vec()), &[1.0], h, None).unwrap();
            (out[0] - h.exp()).abs()
        };
        let ratio = err(0.2) / err(0.1);
        assert!((ratio - 32.0).abs() < 2.0, "ratio {ratio}");
    }

    #[test]
    fn time_scaling_equivalence() {
        let p = trailer();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let kf = 30;
        let tf = 47.0;
        let controls: Vec<[f64; 2]> = (0..kf)
            .map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.05..0.05)])
            .collect();
        let x0 = [0.0, 0.0, 0.1, 0.0, 0.5, 0.1];
        let scaled = rollout(&p, &x0, &controls, 1.0 / kf as f64, tf).unwrap();
        let plain = rollout(&p, &x0, &controls, tf / kf as f64, 1.0).unwrap();
        for (a, b) in scaled.iter().zip(&plain) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn straight_line_global_error() {
        // constant acceleration along a straight line: x(t) = v0 t + a t^2 / 2
        let p = car();
        let kf = 30;
        let tf = 10.0;
        let a = 0.1;
        let traj = rollout(
            &p,
            &[0.0, 0.0, 0.0, 0.2, 0.0],
            &vec![[a, 0.0]; kf],
            1.0 / kf as f64,
            tf,
        )
        .unwrap();
        for (k, xi) in traj.iter().enumerate() {
            let t = tf * k as f64 / kf as f64;
            assert!((xi[0] - (0.2 * t + 0.5 * a * t * t)).abs() <= 1e-8);
            assert!((xi[3] - (0.2 + a * t)).abs() <= 1e-8);
        }
    }

    #[test]
    fn joint_angle_rows() {
        let jm = std::f64::consts::FRAC_PI_3;
        let r = joint_angle_residual(&state(0.3, Some(0.3), 0.0, 0.0), jm).unwrap();
        assert!(r[0] <= -jm + 1e-15 && r[1] <= -jm + 1e-15);
        let r = joint_angle_residual(&state(jm, Some(0.0), 0.0, 0.0), jm).unwrap();
        assert_eq!(r[0], 0.0);
        let r = joint_angle_residual(&state(std::f64::consts::FRAC_PI_2, Some(0.0), 0.0, 0.0), jm)
            .unwrap();
        assert_relative_eq!(r[0], std::f64::consts::PI / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn rk4_jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-6;
        for p in [trailer(), car()] {
            let n = p.n_states();
            for _ in 0..200 {
                let xi: Vec<f64> = (0..n)
                    .map(|i| {
                        if i == p.idx_delta() {
                            rng.random_range(-0.6..0.6)
                        } else {
                            rng.random_range(-2.0..2.0)
                        }
                    })
                    .collect();
                let u = [rng.random_range(-1.0..1.0), rng.random_range(-0.1..0.1)];
                let s = rng.random_range(5.0..60.0);
                let dt = 1.0 / 30.0;
                let jet = rk4_step_jet(&p, &xi, &u, dt, s).unwrap();
                let step =
                    |xi: &[f64], u: &[f64; 2], s: f64| rk4_step_jet(&p, xi, u, dt, s).unwrap().next;
                let close =
                    |an: f64, fd: f64| (an - fd).abs() <= 1e-6 * an.abs().max(fd.abs()).max(1.0);
                for j in 0..n {
                    let (mut lo, mut hi) = (xi.clone(), xi.clone());
                    lo[j] -= h;
                    hi[j] += h;
                    let fd = (step(&hi, &u, s) - step(&lo, &u, s)) / (2.0 * h);
                    for i in 0..n {
                        assert!(close(jet.d_xi[(i, j)], fd[i]));
                    }
                }
                for j in 0..2 {
                    let (mut lo, mut hi) = (u, u);
                    lo[j] -= h;
                    hi[j] += h;
                    let fd = (step(&xi, &hi, s) - step(&xi, &lo, s)) / (2.0 * h);
                    for i in 0..n {
                        assert!(close(jet.d_u[(i, j)], fd[i]));
                    }
                }
                let fd = (step(&xi, &u, s + h) - step(&xi, &u, s - h)) / (2.0 * h);
                for i in 0..n {
                    assert!(close(jet.d_scale[i], fd[i]));
                }
                let plain = rk4_step(
                    |x| Ok(deriv_jet(&p, x, &u)?.f.as_slice().to_vec()),
                    &xi,
                    dt,
                    Some(s),
                )
                .unwrap();
                for (a, b) in plain.iter().zip(jet.next.iter()) {
                    assert_relative_eq!(*a, *b, epsilon = 1e-12);
                }
            }
        }
    }
}
