//! Scenario files (JSON with explicit units), trajectory and plane CSVs.
//!
//! Every physical quantity in a scenario file is a `{"value", "unit"}` pair
//! and is converted to SI on load. Writing always uses meters, degrees,
//! m/s, m/s^2, deg/s and seconds.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baseline_dual::FormulationKind;
use crate::dynamics::{VehicleModelParams, VehicleState};
use crate::error::{Error, Result};
use crate::geometry::{ConvexSet, Ellipsoid, Polytope};
use crate::ocp::{
    Attach, BodyPart, Horizon, Motion, NlpProblem, Obstacle, PathGuess, Scenario, Weights,
};
use crate::verification::Trajectory;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "m")]
    Meter,
    #[serde(rename = "deg")]
    Degree,
    #[serde(rename = "rad")]
    Radian,
    #[serde(rename = "km/h")]
    KilometerPerHour,
    #[serde(rename = "m/s")]
    MeterPerSecond,
    #[serde(rename = "m/s^2")]
    MeterPerSecondSquared,
    #[serde(rename = "deg/s")]
    DegreePerSecond,
    #[serde(rename = "rad/s")]
    RadianPerSecond,
    #[serde(rename = "s")]
    Second,
}

/// Physical dimension a field expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dim {
    Length,
    Angle,
    Speed,
    Accel,
    AngularRate,
    Time,
}

impl Unit {
    fn dim(self) -> Dim {
        match self {
            Unit::Meter => Dim::Length,
            Unit::Degree | Unit::Radian => Dim::Angle,
            Unit::KilometerPerHour | Unit::MeterPerSecond => Dim::Speed,
            Unit::MeterPerSecondSquared => Dim::Accel,
            Unit::DegreePerSecond | Unit::RadianPerSecond => Dim::AngularRate,
            Unit::Second => Dim::Time,
        }
    }

    fn to_si(self) -> f64 {
        match self {
            Unit::Degree | Unit::DegreePerSecond => std::f64::consts::PI / 180.0,
            Unit::KilometerPerHour => 1.0 / 3.6,
            _ => 1.0,
        }
    }

    fn output(dim: Dim) -> Unit {
        match dim {
            Dim::Length => Unit::Meter,
            Dim::Angle => Unit::Degree,
            Dim::Speed => Unit::MeterPerSecond,
            Dim::Accel => Unit::MeterPerSecondSquared,
            Dim::AngularRate => Unit::DegreePerSecond,
            Dim::Time => Unit::Second,
        }
    }
}

/// A value with a mandatory unit tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quantity<T> {
    pub value: T,
    pub unit: Unit,
}

type Q = Quantity<f64>;
type QVec = Quantity<Vec<f64>>;

fn check_unit(unit: Unit, dim: Dim, field: &str) -> Result<f64> {
    if unit.dim() != dim {
        return Err(Error::Parse(format!(
            "{field}: unit {unit:?} does not measure {dim:?}"
        )));
    }
    Ok(unit.to_si())
}

fn si(q: &Q, dim: Dim, field: &str) -> Result<f64> {
    Ok(q.value * check_unit(q.unit, dim, field)?)
}

fn si_vec(q: &QVec, dim: Dim, field: &str) -> Result<Vec<f64>> {
    let f = check_unit(q.unit, dim, field)?;
    Ok(q.value.iter().map(|v| v * f).collect())
}

fn out(v: f64, dim: Dim) -> Q {
    let unit = Unit::output(dim);
    Quantity {
        value: v / unit.to_si(),
        unit,
    }
}

fn out_vec(v: &[f64], dim: Dim) -> QVec {
    let unit = Unit::output(dim);
    Quantity {
        value: v.iter().map(|x| x / unit.to_si()).collect(),
        unit,
    }
}

/// Convex set as stored on disk. Polytope vertices are rows; faces are
/// optional for planar polygons and derived from the vertices when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetFile {
    Polytope {
        unit: Unit,
        #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
        a: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<Vec<f64>>,
        #[serde(rename = "V")]
        v: Vec<Vec<f64>>,
    },
    Ellipsoid {
        unit: Unit,
        /// Shape matrix in 1/unit^2.
        #[serde(rename = "E")]
        e_mat: Vec<Vec<f64>>,
        e: Vec<f64>,
    },
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Parse(format!(
            "{field}: expected a non-empty rectangular matrix"
        )));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl SetFile {
    pub fn to_set(&self) -> Result<ConvexSet> {
        match self {
            SetFile::Polytope { unit, a, b, v } => {
                check_unit(*unit, Dim::Length, "polytope")?;
                let verts = matrix(v, "polytope V")?;
                match (a, b) {
                    (Some(a), Some(b)) => {
                        let a = matrix(a, "polytope A")?;
                        Ok(
                            Polytope::new(a, DVector::from_column_slice(b), verts.transpose())?
                                .into(),
                        )
                    }
                    (None, None) => {
                        if verts.ncols() != 2 {
                            return Err(Error::Parse(
                                "polytope faces may only be omitted for planar polygons".into(),
                            ));
                        }
                        let pts: Vec<[f64; 2]> = v.iter().map(|r| [r[0], r[1]]).collect();
                        Ok(Polytope::from_vertices_2d(&pts)?.into())
                    }
                    _ => Err(Error::Parse(
                        "polytope needs both A and b, or neither".into(),
                    )),
                }
            }
            SetFile::Ellipsoid { unit, e_mat, e } => {
                check_unit(*unit, Dim::Length, "ellipsoid")?;
                Ok(
                    Ellipsoid::new(matrix(e_mat, "ellipsoid E")?, DVector::from_column_slice(e))?
                        .into(),
                )
            }
        }
    }

    pub fn from_set(set: &ConvexSet) -> SetFile {
        match set {
            ConvexSet::Polytope(p) => SetFile::Polytope {
                unit: Unit::Meter,
                a: Some(rows_of(p.faces())),
                b: Some(p.offsets().iter().copied().collect()),
                v: rows_of(&p.vertices().transpose()),
            },
            ConvexSet::Ellipsoid(e) => SetFile::Ellipsoid {
                unit: Unit::Meter,
                e_mat: rows_of(e.shape()),
                e: e.center().iter().copied().collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionFile {
    Static,
    /// Uniform circular motion; needs a fixed horizon.
    Circular {
        center: QVec,
        radius: Q,
        angle0: Q,
        rate: Q,
    },
    /// One pose per grid point `0..=k_f`.
    Poses {
        x: QVec,
        y: QVec,
        theta: QVec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleFile {
    pub set: SetFile,
    #[serde(default = "static_motion")]
    pub motion: MotionFile,
}

fn static_motion() -> MotionFile {
    MotionFile::Static
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachFile {
    Tractor,
    Trailer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyPartFile {
    pub attach: AttachFile,
    pub shape: SetFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleFile {
    pub l1: Q,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<Q>,
    pub theta_max: Q,
    pub v_min: Q,
    pub v_max: Q,
    pub delta_max: Q,
    pub a_min: Q,
    pub a_max: Q,
    pub omega_max: Q,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_max: Option<Q>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub x: Q,
    pub y: Q,
    pub theta1: Q,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta2: Option<Q>,
    pub v: Q,
    pub delta: Q,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum HorizonFile {
    Free { tf_guess: Q },
    Fixed { t_f: Q },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathGuessFile {
    Linear,
    Parking { interim: QVec },
    Quartic,
}

/// Cost weights; dimensionless scale factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    #[serde(default)]
    pub r: f64,
    pub q: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    pub vehicle: VehicleFile,
    pub body_parts: Vec<BodyPartFile>,
    pub xi_init: StateFile,
    pub xi_final: StateFile,
    #[serde(default)]
    pub canvas: Vec<SetFile>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleFile>,
    pub k_f: usize,
    pub horizon: HorizonFile,
    pub weights: WeightsFile,
    pub formulation: FormulationKind,
    pub gamma: f64,
    pub path_guess: PathGuessFile,
}

impl StateFile {
    fn to_state(&self, field: &str) -> Result<VehicleState> {
        Ok(VehicleState {
            x: si(&self.x, Dim::Length, field)?,
            y: si(&self.y, Dim::Length, field)?,
            theta1: si(&self.theta1, Dim::Angle, field)?,
            theta2: self
                .theta2
                .as_ref()
                .map(|q| si(q, Dim::Angle, field))
                .transpose()?,
            v: si(&self.v, Dim::Speed, field)?,
            delta: si(&self.delta, Dim::Angle, field)?,
        })
    }

    fn from_state(s: &VehicleState) -> StateFile {
        StateFile {
            x: out(s.x, Dim::Length),
            y: out(s.y, Dim::Length),
            theta1: out(s.theta1, Dim::Angle),
            theta2: s.theta2.map(|t| out(t, Dim::Angle)),
            v: out(s.v, Dim::Speed),
            delta: out(s.delta, Dim::Angle),
        }
    }
}

impl ScenarioFile {
    /// Converts to SI and validates.
    pub fn to_scenario(&self) -> Result<Scenario> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported schema_version {} (expected {SCENARIO_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let v = &self.vehicle;
        let model = VehicleModelParams {
            l1: si(&v.l1, Dim::Length, "vehicle.l1")?,
            l2: v
                .l2
                .as_ref()
                .map(|q| si(q, Dim::Length, "vehicle.l2"))
                .transpose()?,
            theta_max: si(&v.theta_max, Dim::Angle, "vehicle.theta_max")?,
            v_min: si(&v.v_min, Dim::Speed, "vehicle.v_min")?,
            v_max: si(&v.v_max, Dim::Speed, "vehicle.v_max")?,
            delta_max: si(&v.delta_max, Dim::Angle, "vehicle.delta_max")?,
            a_min: si(&v.a_min, Dim::Accel, "vehicle.a_min")?,
            a_max: si(&v.a_max, Dim::Accel, "vehicle.a_max")?,
            omega_max: si(&v.omega_max, Dim::AngularRate, "vehicle.omega_max")?,
            joint_max: v
                .joint_max
                .as_ref()
                .map(|q| si(q, Dim::Angle, "vehicle.joint_max"))
                .transpose()?,
        };
        let (horizon, tf_guess) = match &self.horizon {
            HorizonFile::Free { tf_guess } => {
                (Horizon::Free, si(tf_guess, Dim::Time, "horizon.tf_guess")?)
            }
            HorizonFile::Fixed { t_f } => {
                let t = si(t_f, Dim::Time, "horizon.t_f")?;
                (Horizon::Fixed(t), t)
            }
        };
        let obstacles = self
            .obstacles
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let motion = match &o.motion {
                    MotionFile::Static => Motion::Static,
                    MotionFile::Circular {
                        center,
                        radius,
                        angle0,
                        rate,
                    } => {
                        let Horizon::Fixed(t_f) = horizon else {
                            return Err(Error::Parse(format!(
                                "obstacle {i}: circular motion needs a fixed horizon"
                            )));
                        };
                        let c = si_vec(center, Dim::Length, "motion.center")?;
                        if c.len() != 2 {
                            return Err(Error::Parse(format!(
                                "obstacle {i}: center must have 2 entries"
                            )));
                        }
                        Motion::circular(
                            [c[0], c[1]],
                            si(radius, Dim::Length, "motion.radius")?,
                            si(angle0, Dim::Angle, "motion.angle0")?,
                            si(rate, Dim::AngularRate, "motion.rate")?,
                            t_f,
                            self.k_f,
                        )
                    }
                    MotionFile::Poses { x, y, theta } => {
                        let (x, y) = (
                            si_vec(x, Dim::Length, "motion.x")?,
                            si_vec(y, Dim::Length, "motion.y")?,
                        );
                        let th = si_vec(theta, Dim::Angle, "motion.theta")?;
                        if x.len() != y.len() || x.len() != th.len() {
                            return Err(Error::Parse(format!(
                                "obstacle {i}: pose vectors differ in length"
                            )));
                        }
                        Motion::Poses((0..x.len()).map(|k| [x[k], y[k], th[k]]).collect())
                    }
                };
                Ok(Obstacle {
                    set: o.set.to_set()?,
                    motion,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let path_guess = match &self.path_guess {
            PathGuessFile::Linear => PathGuess::Linear,
            PathGuessFile::Quartic => PathGuess::Quartic,
            PathGuessFile::Parking { interim } => {
                let p = si_vec(interim, Dim::Length, "path_guess.interim")?;
                if p.len() != 2 {
                    return Err(Error::Parse(
                        "path_guess.interim must have 2 entries".into(),
                    ));
                }
                PathGuess::Parking {
                    interim: [p[0], p[1]],
                }
            }
        };
        let s = Scenario {
            name: self.name.clone(),
            canvas: self
                .canvas
                .iter()
                .map(SetFile::to_set)
                .collect::<Result<_>>()?,
            obstacles,
            body_parts: self
                .body_parts
                .iter()
                .map(|b| {
                    Ok(BodyPart {
                        shape: b.shape.to_set()?,
                        attach: match b.attach {
                            AttachFile::Tractor => Attach::Tractor,
                            AttachFile::Trailer => Attach::Trailer,
                        },
                    })
                })
                .collect::<Result<_>>()?,
            model,
            xi_init: self.xi_init.to_state("xi_init")?,
            xi_final: self.xi_final.to_state("xi_final")?,
            k_f: self.k_f,
            horizon,
            weights: Weights {
                r: self.weights.r,
                q: self.weights.q,
            },
            formulation: self.formulation,
            gamma: self.gamma,
            path_guess,
            tf_guess,
        };
        s.validate()?;
        Ok(s)
    }

    /// Writes moving obstacles as explicit poses.
    pub fn from_scenario(s: &Scenario) -> ScenarioFile {
        let m = &s.model;
        let horizon = match s.horizon {
            Horizon::Free => HorizonFile::Free {
                tf_guess: out(s.tf_guess, Dim::Time),
            },
            Horizon::Fixed(t) => HorizonFile::Fixed {
                t_f: out(t, Dim::Time),
            },
        };
        ScenarioFile {
            schema_version: SCENARIO_SCHEMA_VERSION,
            name: s.name.clone(),
            vehicle: VehicleFile {
                l1: out(m.l1, Dim::Length),
                l2: m.l2.map(|l| out(l, Dim::Length)),
                theta_max: out(m.theta_max, Dim::Angle),
                v_min: out(m.v_min, Dim::Speed),
                v_max: out(m.v_max, Dim::Speed),
                delta_max: out(m.delta_max, Dim::Angle),
                a_min: out(m.a_min, Dim::Accel),
                a_max: out(m.a_max, Dim::Accel),
                omega_max: out(m.omega_max, Dim::AngularRate),
                joint_max: m.joint_max.map(|j| out(j, Dim::Angle)),
            },
            body_parts: s
                .body_parts
                .iter()
                .map(|b| BodyPartFile {
                    attach: match b.attach {
                        Attach::Tractor => AttachFile::Tractor,
                        Attach::Trailer => AttachFile::Trailer,
                    },
                    shape: SetFile::from_set(&b.shape),
                })
                .collect(),
            xi_init: StateFile::from_state(&s.xi_init),
            xi_final: StateFile::from_state(&s.xi_final),
            canvas: s.canvas.iter().map(SetFile::from_set).collect(),
            obstacles: s
                .obstacles
                .iter()
                .map(|o| ObstacleFile {
                    set: SetFile::from_set(&o.set),
                    motion: match &o.motion {
                        Motion::Static => MotionFile::Static,
                        Motion::Poses(p) => MotionFile::Poses {
                            x: out_vec(&p.iter().map(|q| q[0]).collect::<Vec<_>>(), Dim::Length),
                            y: out_vec(&p.iter().map(|q| q[1]).collect::<Vec<_>>(), Dim::Length),
                            theta: out_vec(&p.iter().map(|q| q[2]).collect::<Vec<_>>(), Dim::Angle),
                        },
                    },
                })
                .collect(),
            k_f: s.k_f,
            horizon,
            weights: WeightsFile {
                r: s.weights.r,
                q: s.weights.q,
            },
            formulation: s.formulation,
            gamma: s.gamma,
            path_guess: match s.path_guess {
                PathGuess::Linear => PathGuessFile::Linear,
                PathGuess::Quartic => PathGuessFile::Quartic,
                PathGuess::Parking { interim } => PathGuessFile::Parking {
                    interim: out_vec(&interim, Dim::Length),
                },
            },
        }
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let file: ScenarioFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("scenario: {e}")))?;
    file.to_scenario()
}

pub fn scenario_to_json(s: &Scenario) -> Result<String> {
    serde_json::to_string_pretty(&ScenarioFile::from_scenario(s))
        .map_err(|e| Error::Parse(e.to_string()))
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario(&read_to_string(path)?)
}

pub fn save_scenario(s: &Scenario, path: &Path) -> Result<()> {
    write_string(path, &scenario_to_json(s)?)
}

fn read_to_string(path: &Path) -> Result<String> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(text)
}

fn write_string(path: &Path, text: &str) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// CSV header for a model with or without a trailer.
pub fn trajectory_header(trailer: bool) -> Vec<&'static str> {
    let mut h = vec!["step", "t", "x", "y", "theta1"];
    if trailer {
        h.push("theta2");
    }
    h.extend(["v", "delta", "a", "omega"]);
    h
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// Writes one row per grid point; the last row has empty controls.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, w: W) -> Result<()> {
    let n_x = traj.states.first().map_or(5, |x| x.len());
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(trajectory_header(n_x == 6))
        .map_err(csv_err)?;
    let k_f = traj.k_f();
    for (k, xi) in traj.states.iter().enumerate() {
        let t = if k_f == 0 {
            0.0
        } else {
            traj.t_f * k as f64 / k_f as f64
        };
        let mut rec = vec![k.to_string(), fmt(t)];
        rec.extend(xi.iter().map(|v| fmt(*v)));
        match traj.controls.get(k) {
            Some(u) => rec.extend([fmt(u[0]), fmt(u[1])]),
            None => rec.extend([String::new(), String::new()]),
        }
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Shortest representation that parses back to the same `f64`.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Reads a trajectory CSV. `t_f` is taken from the last row.
pub fn read_trajectory_csv<R: Read>(r: R) -> Result<Trajectory> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_owned)
        .collect();
    let trailer = match header.len() {
        9 => false,
        10 => true,
        n => {
            return Err(Error::Parse(format!(
                "trajectory csv: {n} columns, expected 9 or 10"
            )))
        }
    };
    if header != trajectory_header(trailer) {
        return Err(Error::Parse(format!(
            "trajectory csv: unexpected header {header:?}"
        )));
    }
    let n_x = if trailer { 6 } else { 5 };
    let mut rows: Vec<(f64, Vec<f64>, Option<[f64; 2]>)> = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let num = |i: usize| -> Result<f64> {
            rec[i].trim().parse::<f64>().map_err(|_| {
                Error::Parse(format!(
                    "trajectory csv row {k}: bad number '{}' in {}",
                    &rec[i], header[i]
                ))
            })
        };
        let step: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("trajectory csv row {k}: bad step '{}'", &rec[0])))?;
        if step != k {
            return Err(Error::Parse(format!(
                "trajectory csv: row {k} has step {step}"
            )));
        }
        let t = num(1)?;
        let xi = (2..2 + n_x).map(num).collect::<Result<Vec<_>>>()?;
        let (ia, iw) = (2 + n_x, 3 + n_x);
        let u = if rec[ia].trim().is_empty() && rec[iw].trim().is_empty() {
            None
        } else {
            Some([num(ia)?, num(iw)?])
        };
        rows.push((t, xi, u));
    }
    if rows.len() < 2 {
        return Err(Error::Parse(
            "trajectory csv: need at least two rows".into(),
        ));
    }
    let last = rows.len() - 1;
    let mut controls = Vec::with_capacity(last);
    for (k, row) in rows.iter().enumerate() {
        match (k == last, row.2) {
            (false, Some(u)) => controls.push(u),
            (false, None) => {
                return Err(Error::Parse(format!(
                    "trajectory csv: row {k} lacks controls"
                )))
            }
            (true, Some(_)) => {
                return Err(Error::Parse(
                    "trajectory csv: last row must leave controls empty".into(),
                ))
            }
            (true, None) => {}
        }
    }
    Ok(Trajectory {
        t_f: rows[last].0,
        states: rows.into_iter().map(|r| r.1).collect(),
        controls,
    })
}

pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let f =
        std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_trajectory_csv(traj, f)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_trajectory_csv(f)
}

/// Extracts the trajectory part of a decision vector.
pub fn trajectory_from_solution(nlp: &NlpProblem, z: &[f64]) -> Trajectory {
    Trajectory {
        t_f: nlp.t_f(z),
        states: nlp.states(z),
        controls: nlp.controls(z),
    }
}

/// Separating planes of every (body part, obstacle, step) block, body on the
/// `lambda^T s >= mu` side. `pair` is `body * n_obstacles + obstacle`.
pub fn write_planes_csv<W: Write>(nlp: &NlpProblem, z: &[f64], w: W) -> Result<()> {
    let n_obs = nlp.scenario().obstacles.len();
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["step", "pair", "lambda_x", "lambda_y", "mu"])
        .map_err(csv_err)?;
    for blk in nlp.pair_blocks() {
        let (l, mu) = nlp.body_plane(blk, z)?;
        wr.write_record([
            blk.step.to_string(),
            (blk.body * n_obs + blk.obstacle).to_string(),
            fmt(l[0]),
            fmt(l[1]),
            fmt(mu),
        ])
        .map_err(csv_err)?;
    }
    wr.flush().map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::tests::single_car;

    fn trailer_scenario_json() -> &'static str {
        r#"{
          "schema_version": 1,
          "name": "tt",
          "vehicle": {
            "l1": {"value": 1, "unit": "m"}, "l2": {"value": 4.5, "unit": "m"},
            "theta_max": {"value": 180, "unit": "deg"},
            "v_min": {"value": -5, "unit": "km/h"}, "v_max": {"value": 5, "unit": "km/h"},
            "delta_max": {"value": 40, "unit": "deg"},
            "a_min": {"value": -1, "unit": "m/s^2"}, "a_max": {"value": 1, "unit": "m/s^2"},
            "omega_max": {"value": 5, "unit": "deg/s"},
            "joint_max": {"value": 60, "unit": "deg"}
          },
          "body_parts": [
            {"attach": "tractor", "shape": {"type": "polytope", "unit": "m", "V": [[1.5,1],[1.5,-1],[-0.5,-1],[-0.5,1]]}},
            {"attach": "trailer", "shape": {"type": "polytope", "unit": "m", "V": [[0.5,1],[0.5,-1],[-5,-1],[-5,1]]}}
          ],
          "xi_init": {"x": {"value": 0, "unit": "m"}, "y": {"value": 0, "unit": "m"},
                      "theta1": {"value": 0, "unit": "deg"}, "theta2": {"value": 0, "unit": "deg"},
                      "v": {"value": 0, "unit": "m/s"}, "delta": {"value": 0, "unit": "deg"}},
          "xi_final": {"x": {"value": 8.5, "unit": "m"}, "y": {"value": -4.5, "unit": "m"},
                      "theta1": {"value": 90, "unit": "deg"}, "theta2": {"value": 90, "unit": "deg"},
                      "v": {"value": 0, "unit": "m/s"}, "delta": {"value": 0, "unit": "deg"}},
          "canvas": [{"type": "polytope", "unit": "m", "A": [[0,1],[1,0],[0,-1],[-1,0]], "b": [10,10,10,6],
                      "V": [[10,10],[10,-10],[-6,-10],[-6,10]]}],
          "obstacles": [{"set": {"type": "polytope", "unit": "m", "V": [[7,-3],[7,-10],[-6,-10],[-6,-3]]}}],
          "k_f": 30,
          "horizon": {"type": "free", "tf_guess": {"value": 50, "unit": "s"}},
          "weights": {"r": 1, "q": [100, 200]},
          "formulation": "hyperplane",
          "gamma": 0.75,
          "path_guess": {"type": "parking", "interim": {"value": [7, 7.5], "unit": "m"}}
        }"#
    }

    #[test]
    fn parses_units_to_si() {
        let s = parse_scenario(trailer_scenario_json()).unwrap();
        assert!((s.model.v_max - 5.0 / 3.6).abs() < 1e-15);
        assert!((s.model.joint_max.unwrap() - std::f64::consts::FRAC_PI_3).abs() < 1e-15);
        assert!((s.xi_final.theta2.unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(s.body_parts[1].attach, Attach::Trailer);
        assert_eq!(s.horizon, Horizon::Free);
        assert_eq!(s.tf_guess, 50.0);
    }

    fn assert_scenarios_close(a: &Scenario, b: &Scenario) {
        let ja: serde_json::Value = serde_json::from_str(&scenario_to_json(a).unwrap()).unwrap();
        let jb: serde_json::Value = serde_json::from_str(&scenario_to_json(b).unwrap()).unwrap();
        fn walk(x: &serde_json::Value, y: &serde_json::Value, path: &str) {
            use serde_json::Value::*;
            match (x, y) {
                (Number(p), Number(q)) => {
                    let (p, q) = (p.as_f64().unwrap(), q.as_f64().unwrap());
                    assert!(
                        (p - q).abs() <= 1e-12 * p.abs().max(1.0),
                        "{path}: {p} vs {q}"
                    );
                }
                (Array(p), Array(q)) => {
                    assert_eq!(p.len(), q.len(), "{path}");
                    for (i, (u, v)) in p.iter().zip(q).enumerate() {
                        walk(u, v, &format!("{path}[{i}]"));
                    }
                }
                (Object(p), Object(q)) => {
                    assert_eq!(p.len(), q.len(), "{path}");
                    for (k, u) in p {
                        walk(u, &q[k], &format!("{path}.{k}"));
                    }
                }
                _ => assert_eq!(x, y, "{path}"),
            }
        }
        walk(&ja, &jb, "");
    }

    #[test]
    fn scenario_round_trip() {
        for s in [
            single_car(3),
            parse_scenario(trailer_scenario_json()).unwrap(),
        ] {
            let back = parse_scenario(&scenario_to_json(&s).unwrap()).unwrap();
            assert_scenarios_close(&s, &back);
            assert_eq!(s.k_f, back.k_f);
            assert_eq!(s.body_parts.len(), back.body_parts.len());
        }
    }

    #[test]
    fn circular_motion_needs_fixed_horizon() {
        let text = trailer_scenario_json().replace(
            r#""obstacles": [{"set""#,
            r#""obstacles": [{"motion": {"type": "circular", "center": {"value": [0, 0], "unit": "m"},
               "radius": {"value": 5, "unit": "m"}, "angle0": {"value": 0, "unit": "deg"},
               "rate": {"value": 1, "unit": "deg/s"}}, "set""#,
        );
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("fixed horizon"), "{err}");
    }

    #[test]
    fn wrong_unit_dimension_is_rejected() {
        let text = trailer_scenario_json().replace(
            r#""l1": {"value": 1, "unit": "m"}"#,
            r#""l1": {"value": 1, "unit": "s"}"#,
        );
        assert!(matches!(parse_scenario(&text), Err(Error::Parse(_))));
        let text =
            trailer_scenario_json().replace(r#""l1": {"value": 1, "unit": "m"}"#, r#""l1": 1"#);
        assert!(matches!(parse_scenario(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = trailer_scenario_json().replace(r#""k_f": 30,"#, r#""k_f": 30, "kf": 3,"#);
        assert!(parse_scenario(&text).is_err());
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let traj = Trajectory {
            t_f: 12.5,
            states: (0..4)
                .map(|k| vec![k as f64, 0.1, -0.3, 0.7, 1.0 / 3.0, 0.0])
                .collect(),
            controls: vec![[0.1, -0.2], [1e-17, 3.0], [-0.5, 0.25]],
        };
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,t,x,y,theta1,theta2,v,delta,a,omega\n"));
        assert!(text.trim_end().ends_with(",,"));
        assert_eq!(read_trajectory_csv(&buf[..]).unwrap(), traj);
    }

    #[test]
    fn malformed_csv_is_a_parse_error() {
        let bad = "step,t,x,y,theta1,v,delta,a,omega\n0,0,0,0,0,0,0,1,1\n2,1,0,0,0,0,0,,\n";
        assert!(matches!(
            read_trajectory_csv(bad.as_bytes()),
            Err(Error::Parse(_))
        ));
        let bad = "step,t,x,y,theta1,v,delta,a,omega\n0,0,0,0,0,0,0,,\n1,1,0,0,0,0,0,,\n";
        assert!(matches!(
            read_trajectory_csv(bad.as_bytes()),
            Err(Error::Parse(_))
        ));
    }
}
