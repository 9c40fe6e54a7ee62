//! Direct multiple-shooting transcription of the planning problem into a
//! sparse NLP.
//!
//! Decision vector: states `xi(0..=k_f)`, controls `u(0..k_f)`, `t_f` when
//! the horizon is free, then one auxiliary block per (body part, obstacle)
//! pair and step, then the containment blocks that need auxiliaries.
//! Collision and containment blocks sit at steps `1..=k_f`; step 0 is the
//! pinned initial state.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::baseline_dual::{self, count_aux_variables, FormulationKind};
use crate::containment::{self, Body, Canvas, ContainmentKind};
use crate::dynamics::{rk4_step_jet, VehicleModelParams, VehicleState, N_CONTROLS};
use crate::error::{Error, Result};
use crate::geometry::{centroid, ConvexSet, PlacedSet, Pose, NORM_EPS};
use crate::par::Exec;
use crate::residual::BlockEval;
use crate::separation::{self, Operand, SeparationKind};
use crate::solver::Problem;
use crate::sparse::Triplets;

/// How an obstacle moves over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    Static,
    /// Planar pose `(x, y, theta)` applied to the obstacle's local geometry
    /// at every grid point `0..=k_f`.
    Poses(Vec<[f64; 3]>),
}

impl Motion {
    /// Uniform circular motion sampled on the `k_f + 1` grid points of a
    /// horizon of `t_f` seconds. `rate` is in rad/s, negative for clockwise;
    /// the heading follows the direction of travel.
    pub fn circular(
        center: [f64; 2],
        radius: f64,
        angle0: f64,
        rate: f64,
        t_f: f64,
        k_f: usize,
    ) -> Motion {
        let turn = if rate < 0.0 {
            -std::f64::consts::FRAC_PI_2
        } else {
            std::f64::consts::FRAC_PI_2
        };
        Motion::Poses(
            (0..=k_f)
                .map(|k| {
                    let phi = angle0 + rate * t_f * k as f64 / k_f as f64;
                    [
                        center[0] + radius * phi.cos(),
                        center[1] + radius * phi.sin(),
                        phi + turn,
                    ]
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    /// Geometry in world coordinates when static, local coordinates when moving.
    pub set: ConvexSet,
    pub motion: Motion,
}

/// Which yaw angle carries a body part.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attach {
    Tractor,
    Trailer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyPart {
    /// Local geometry; the reference point is the vehicle position `(x, y)`.
    pub shape: ConvexSet,
    pub attach: Attach,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Fixed(f64),
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    /// Time penalty (free horizon only).
    pub r: f64,
    /// Diagonal control weights for `(a, omega)`.
    pub q: [f64; 2],
}

/// Seed path family for the initial guess.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathGuess {
    Linear,
    Parking { interim: [f64; 2] },
    Quartic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// The workspace is the intersection of these sets.
    pub canvas: Vec<ConvexSet>,
    pub obstacles: Vec<Obstacle>,
    pub body_parts: Vec<BodyPart>,
    pub model: VehicleModelParams,
    pub xi_init: VehicleState,
    pub xi_final: VehicleState,
    pub k_f: usize,
    pub horizon: Horizon,
    pub weights: Weights,
    pub formulation: FormulationKind,
    /// Plane placement weight for the orthogonal plane guess.
    pub gamma: f64,
    pub path_guess: PathGuess,
    /// Warm start for a free horizon, seconds.
    pub tf_guess: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        self.model.validate()?;
        if self.k_f < 2 {
            return bad(format!("k_f must be at least 2, got {}", self.k_f));
        }
        let w = &self.weights;
        if !(w.r >= 0.0 && w.q[0] >= 0.0 && w.q[1] >= 0.0)
            || !(w.r.is_finite() && w.q.iter().all(|q| q.is_finite()))
        {
            return bad("weights must be finite and nonnegative".into());
        }
        match self.horizon {
            Horizon::Free if !(w.r > 0.0) => {
                return bad("a free horizon needs a positive time weight r".into())
            }
            Horizon::Fixed(t) if !(t > 0.0 && t.is_finite()) => {
                return bad(format!("fixed horizon must be positive, got {t}"))
            }
            _ => {}
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.tf_guess > 0.0 && self.tf_guess.is_finite()) {
            return bad("t_f guess must be positive".into());
        }
        if self.body_parts.is_empty() {
            return bad("at least one body part is required".into());
        }
        let trailer = self.model.has_trailer();
        for xi in [&self.xi_init, &self.xi_final] {
            if xi.theta2.is_some() != trailer {
                return bad(
                    "boundary states must carry theta2 exactly when the model has a trailer".into(),
                );
            }
            if xi.to_vec().iter().any(|v| !v.is_finite()) {
                return bad("boundary states must be finite".into());
            }
        }
        let sets = self
            .canvas
            .iter()
            .chain(self.obstacles.iter().map(|o| &o.set))
            .chain(self.body_parts.iter().map(|b| &b.shape));
        for s in sets {
            if s.dim() != 2 {
                return Err(Error::dim(
                    "set dimension for the planar vehicle",
                    2,
                    s.dim(),
                ));
            }
        }
        for (i, b) in self.body_parts.iter().enumerate() {
            if b.attach == Attach::Trailer && !trailer {
                return bad(format!(
                    "body part {i} is attached to a trailer the model does not have"
                ));
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if let Motion::Poses(p) = &o.motion {
                if p.len() != self.k_f + 1 {
                    return bad(format!(
                        "obstacle {i} motion has {} poses, expected k_f + 1 = {}",
                        p.len(),
                        self.k_f + 1
                    ));
                }
                if p.iter().flatten().any(|v| !v.is_finite()) {
                    return bad(format!("obstacle {i} motion has non-finite poses"));
                }
            }
        }
        let (lo, hi) = self.model.state_bounds();
        for (tag, xi) in [("initial", &self.xi_init), ("final", &self.xi_final)] {
            for (i, v) in xi.to_vec().iter().enumerate() {
                if *v < lo[i] || *v > hi[i] {
                    return bad(format!(
                        "{tag} state component {i} = {v} is outside its box"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.model.n_states()
    }

    /// Obstacle geometry at grid step `k`.
    pub fn obstacle_at(&self, o: usize, k: usize) -> Result<ConvexSet> {
        let obs = &self.obstacles[o];
        match &obs.motion {
            Motion::Static => Ok(obs.set.clone()),
            Motion::Poses(p) => {
                let [x, y, th] = p[k];
                obs.set.transformed(&Pose::planar(x, y, th))
            }
        }
    }

    /// Index of the yaw angle a part rotates with.
    pub fn yaw_index(&self, attach: Attach) -> usize {
        match attach {
            Attach::Tractor => 2,
            Attach::Trailer => 3,
        }
    }

    /// Body part placed at state `xi`, with `(x, y, yaw)` tangents.
    pub fn place_part(&self, part: usize, xi: &[f64]) -> PlacedSet {
        let b = &self.body_parts[part];
        PlacedSet::planar(&b.shape, xi[0], xi[1], xi[self.yaw_index(b.attach)])
    }

    /// Body part in world coordinates at state `xi`.
    pub fn part_world(&self, part: usize, xi: &[f64]) -> Result<ConvexSet> {
        let b = &self.body_parts[part];
        b.shape
            .transformed(&Pose::planar(xi[0], xi[1], xi[self.yaw_index(b.attach)]))
    }

    pub fn time_step(&self) -> f64 {
        1.0 / self.k_f as f64
    }
}

/// Variable totals by category.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct VariableCount {
    pub formulation: FormulationKind,
    pub states: usize,
    pub controls: usize,
    pub time: usize,
    pub aux: usize,
    pub total: usize,
    /// Auxiliary variables each obstacle adds over the whole horizon.
    pub aux_per_obstacle: Vec<usize>,
}

/// Variable count under the scenario's own formulation.
pub fn count_variables(s: &Scenario) -> Result<VariableCount> {
    count_variables_with(s, s.formulation)
}

/// Pure bookkeeping: no residual is evaluated, so counts exist for every
/// formulation, including those that are not transcribed.
pub fn count_variables_with(s: &Scenario, kind: FormulationKind) -> Result<VariableCount> {
    s.validate()?;
    let states = (s.k_f + 1) * s.n_states();
    let controls = s.k_f * N_CONTROLS;
    let time = usize::from(s.horizon == Horizon::Free);
    let mut aux_per_obstacle = Vec::with_capacity(s.obstacles.len());
    for o in &s.obstacles {
        let mut per = 0;
        for b in &s.body_parts {
            per += count_aux_variables(kind, &b.shape, &o.set, 2)? * s.k_f;
        }
        aux_per_obstacle.push(per);
    }
    let mut aux: usize = aux_per_obstacle.iter().sum();
    for b in &s.body_parts {
        for c in &s.canvas {
            aux += ContainmentKind::of(b.shape.is_polytope(), c.is_polytope()).aux_count(2) * s.k_f;
        }
    }
    Ok(VariableCount {
        formulation: kind,
        states,
        controls,
        time,
        aux,
        total: states + controls + time + aux,
        aux_per_obstacle,
    })
}

/// How a (body part, obstacle) pair is encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairForm {
    /// Hyperplane separation; `body_first` tells which operand slot the body takes.
    Separation {
        kind: SeparationKind,
        body_first: bool,
    },
    /// Dual certificate of a polytope pair.
    Dual,
}

fn pair_form(kind: FormulationKind, body: &ConvexSet, obstacle: &ConvexSet) -> Result<PairForm> {
    use ConvexSet::{Ellipsoid as E, Polytope as P};
    match (kind, body, obstacle) {
        (FormulationKind::Hyperplane, P(_), P(_)) => Ok(PairForm::Separation {
            kind: SeparationKind::PolyPoly,
            body_first: true,
        }),
        (FormulationKind::Hyperplane, P(_), E(_)) => Ok(PairForm::Separation {
            kind: SeparationKind::PolyEll,
            body_first: true,
        }),
        (FormulationKind::Hyperplane, E(_), P(_)) => Ok(PairForm::Separation {
            kind: SeparationKind::PolyEll,
            body_first: false,
        }),
        (FormulationKind::Hyperplane, E(_), E(_)) => Ok(PairForm::Separation {
            kind: SeparationKind::EllEll,
            body_first: true,
        }),
        (FormulationKind::Dual, P(_), P(_)) => Ok(PairForm::Dual),
        (FormulationKind::Dual, _, _) => Err(Error::Unsupported(
            "dual residuals are transcribed for polytope pairs only".into(),
        )),
        (FormulationKind::Farkas, _, _) => Err(Error::Unsupported(
            "farkas constraints are counted but not transcribed".into(),
        )),
    }
}

/// One (body part, obstacle, step) block.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBlock {
    pub body: usize,
    pub obstacle: usize,
    pub step: usize,
    pub form: PairForm,
    pub aux: Range<usize>,
    pub eq_rows: Range<usize>,
    pub ineq_rows: Range<usize>,
}

/// One (body part, canvas set, step) block.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainBlock {
    pub body: usize,
    pub canvas: usize,
    pub step: usize,
    pub kind: ContainmentKind,
    pub aux: Range<usize>,
    pub eq_rows: Range<usize>,
    pub ineq_rows: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct VarSlice {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Named, contiguous, non-overlapping slices covering the decision vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct VarMap {
    pub slices: Vec<VarSlice>,
}

impl VarMap {
    fn push(&mut self, name: impl Into<String>, len: usize) -> usize {
        let offset = self.slices.last().map_or(0, |s| s.offset + s.len);
        self.slices.push(VarSlice {
            name: name.into(),
            offset,
            len,
        });
        offset
    }

    pub fn total(&self) -> usize {
        self.slices.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn get(&self, name: &str) -> Option<&VarSlice> {
        self.slices.iter().find(|s| s.name == name)
    }
}

/// Locally evaluated block: rows plus derivatives in the block's aux and in
/// the body part's `(x, y, yaw)` tangents.
struct Local {
    eq: Option<BlockEval>,
    ineq: Option<BlockEval>,
    body_first: bool,
}

fn take_rows(e: BlockEval, n: usize) -> BlockEval {
    BlockEval {
        values: e.values.rows(0, n).into_owned(),
        d_aux: e.d_aux.rows(0, n).into_owned(),
        d_first: e.d_first.rows(0, n).into_owned(),
        d_second: e.d_second.rows(0, n).into_owned(),
    }
}

/// Dual rows kept as inequalities: margin and the two norm rows. The sign
/// rows are variable bounds.
const DUAL_INEQ_ROWS: usize = 3;

/// Norm threshold the transcribed guard rows enforce.
///
/// The residual families guard `|lambda| >= NORM_EPS`, which only keeps the
/// square root smooth. In an NLP the multiplier-penalty pull on `(lambda, mu)`
/// is towards zero, and the degenerate plane `lambda = 0` then violates the
/// guard by just `NORM_EPS^2`, below the feasibility tolerance. Every
/// transcribed block is positively homogeneous in its aux variables, so
/// raising the threshold leaves the feasible set of trajectories unchanged.
pub const NLP_NORM_MIN: f64 = 0.5;

/// Shifts a guard row `eps^2 - |w|^2` to `NLP_NORM_MIN^2 - |w|^2`; the
/// derivative is unchanged.
fn shift_guard_row(e: &mut BlockEval, row: usize) {
    e.values[row] += NLP_NORM_MIN * NLP_NORM_MIN - NORM_EPS * NORM_EPS;
}

/// The transcribed NLP.
#[derive(Debug, Clone)]
pub struct NlpProblem {
    scenario: Scenario,
    n_x: usize,
    var_map: VarMap,
    lower: Vec<f64>,
    upper: Vec<f64>,
    tf_index: Option<usize>,
    /// Obstacle geometry per obstacle and step.
    obstacles: Vec<Vec<ConvexSet>>,
    obstacles_placed: Vec<Vec<PlacedSet>>,
    pairs: Vec<PairBlock>,
    contains: Vec<ContainBlock>,
    eq_names: Vec<String>,
    ineq_names: Vec<String>,
    n_joint_rows: usize,
    exec: Exec,
}

/// Transcribes a scenario.
pub fn build(s: &Scenario) -> Result<NlpProblem> {
    s.validate()?;
    let n_x = s.n_states();
    let k_f = s.k_f;
    let mut var_map = VarMap::default();
    var_map.push("states", (k_f + 1) * n_x);
    var_map.push("controls", k_f * N_CONTROLS);
    let tf_index = match s.horizon {
        Horizon::Free => Some(var_map.push("t_f", 1)),
        Horizon::Fixed(_) => None,
    };

    let mut obstacles = Vec::with_capacity(s.obstacles.len());
    let mut obstacles_placed = Vec::with_capacity(s.obstacles.len());
    for o in 0..s.obstacles.len() {
        let per: Vec<ConvexSet> = (0..=k_f)
            .map(|k| s.obstacle_at(o, k))
            .collect::<Result<_>>()?;
        obstacles_placed.push(per.iter().map(PlacedSet::fixed).collect());
        obstacles.push(per);
    }

    let mut nlp = NlpProblem {
        scenario: s.clone(),
        n_x,
        var_map,
        lower: Vec::new(),
        upper: Vec::new(),
        tf_index,
        obstacles,
        obstacles_placed,
        pairs: Vec::new(),
        contains: Vec::new(),
        eq_names: Vec::new(),
        ineq_names: Vec::new(),
        n_joint_rows: 0,
        exec: Exec::Sequential,
    };

    // equality rows: boundary conditions, then shooting defects
    for i in 0..n_x {
        nlp.eq_names.push(format!("init[{i}]"));
    }
    for i in 0..n_x {
        nlp.eq_names.push(format!("final[{i}]"));
    }
    for k in 0..k_f {
        for i in 0..n_x {
            nlp.eq_names.push(format!("defect[{k},{i}]"));
        }
    }
    if s.model.joint_max.is_some() {
        for k in 0..=k_f {
            nlp.ineq_names.push(format!("joint[{k},0]"));
            nlp.ineq_names.push(format!("joint[{k},1]"));
        }
        nlp.n_joint_rows = 2 * (k_f + 1);
    }

    // probe state for row counting: the initial state
    let probe = s.xi_init.to_vec();
    for b in 0..s.body_parts.len() {
        for o in 0..s.obstacles.len() {
            let form = pair_form(s.formulation, &s.body_parts[b].shape, &s.obstacles[o].set)?;
            let aux_len = count_aux_variables(
                s.formulation,
                &s.body_parts[b].shape,
                &s.obstacles[o].set,
                2,
            )?;
            let start = nlp
                .var_map
                .push(format!("aux_pair[{b},{o}]"), aux_len * k_f);
            for (j, k) in (1..=k_f).enumerate() {
                let aux = start + j * aux_len..start + (j + 1) * aux_len;
                let mut blk = PairBlock {
                    body: b,
                    obstacle: o,
                    step: k,
                    form,
                    aux,
                    eq_rows: 0..0,
                    ineq_rows: 0..0,
                };
                let local = nlp.eval_pair(&blk, &s.place_part(b, &probe), &vec![1.0; aux_len])?;
                let tag = match form {
                    PairForm::Separation { kind, .. } => format!("sep_{}", kind.name()),
                    PairForm::Dual => "dual".to_string(),
                };
                blk.eq_rows = nlp.push_names(
                    true,
                    &format!("{tag}_eq"),
                    b,
                    o,
                    k,
                    local.eq.as_ref().map_or(0, BlockEval::len),
                );
                blk.ineq_rows = nlp.push_names(
                    false,
                    &tag,
                    b,
                    o,
                    k,
                    local.ineq.as_ref().map_or(0, BlockEval::len),
                );
                nlp.pairs.push(blk);
            }
        }
    }
    for b in 0..s.body_parts.len() {
        for c in 0..s.canvas.len() {
            let kind = ContainmentKind::of(
                s.body_parts[b].shape.is_polytope(),
                s.canvas[c].is_polytope(),
            );
            let aux_len = kind.aux_count(2);
            let start = if aux_len > 0 {
                nlp.var_map
                    .push(format!("aux_contain[{b},{c}]"), aux_len * k_f)
            } else {
                nlp.var_map.total()
            };
            for (j, k) in (1..=k_f).enumerate() {
                let aux = start + j * aux_len..start + (j + 1) * aux_len;
                let mut blk = ContainBlock {
                    body: b,
                    canvas: c,
                    step: k,
                    kind,
                    aux,
                    eq_rows: 0..0,
                    ineq_rows: 0..0,
                };
                let local =
                    nlp.eval_contain(&blk, &s.place_part(b, &probe), &vec![1.0; aux_len])?;
                let tag = format!("contain_{}", kind.name());
                blk.eq_rows = nlp.push_names(
                    true,
                    &format!("{tag}_eq"),
                    b,
                    c,
                    k,
                    local.eq.as_ref().map_or(0, BlockEval::len),
                );
                blk.ineq_rows = nlp.push_names(
                    false,
                    &tag,
                    b,
                    c,
                    k,
                    local.ineq.as_ref().map_or(0, BlockEval::len),
                );
                nlp.contains.push(blk);
            }
        }
    }

    // bounds
    let n = nlp.var_map.total();
    let inf = f64::INFINITY;
    let (mut lower, mut upper) = (vec![-inf; n], vec![inf; n]);
    let (slo, shi) = s.model.state_bounds();
    for k in 0..=k_f {
        for i in 0..n_x {
            let idx = nlp.state_index(k, i);
            lower[idx] = slo[i];
            upper[idx] = shi[i];
        }
    }
    // boundary states are pinned as bounds as well as equality rows
    for (k, xi) in [(0, &s.xi_init), (k_f, &s.xi_final)] {
        for (i, v) in xi.to_vec().into_iter().enumerate() {
            let idx = nlp.state_index(k, i);
            lower[idx] = v;
            upper[idx] = v;
        }
    }
    let (clo, chi) = s.model.control_bounds();
    for k in 0..k_f {
        for j in 0..N_CONTROLS {
            let idx = nlp.control_index(k, j);
            lower[idx] = clo[j];
            upper[idx] = chi[j];
        }
    }
    if let Some(t) = tf_index {
        lower[t] = 0.0;
    }
    for blk in &nlp.pairs {
        if blk.form == PairForm::Dual {
            for idx in blk.aux.clone() {
                lower[idx] = 0.0;
            }
        }
    }
    for blk in &nlp.contains {
        if blk.kind == ContainmentKind::EllInEll {
            // lambda >= 0 and the diagonal of the Cholesky factor >= 0
            lower[blk.aux.start] = 0.0;
            for i in 0..3 {
                lower[blk.aux.start + 1 + i * (i + 1) / 2 + i] = 0.0;
            }
        }
    }
    nlp.lower = lower;
    nlp.upper = upper;
    Ok(nlp)
}

impl NlpProblem {
    fn push_names(
        &mut self,
        eq: bool,
        tag: &str,
        b: usize,
        o: usize,
        k: usize,
        rows: usize,
    ) -> Range<usize> {
        let names = if eq {
            &mut self.eq_names
        } else {
            &mut self.ineq_names
        };
        let start = names.len();
        for r in 0..rows {
            names.push(format!("{tag}[{b},{o},{k},{r}]"));
        }
        start..names.len()
    }

    /// Selects how constraint blocks are evaluated; sequential by default so
    /// that independent solves can run side by side.
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn var_map(&self) -> &VarMap {
        &self.var_map
    }

    pub fn pair_blocks(&self) -> &[PairBlock] {
        &self.pairs
    }

    pub fn containment_blocks(&self) -> &[ContainBlock] {
        &self.contains
    }

    pub fn n_states(&self) -> usize {
        self.n_x
    }

    pub fn state_index(&self, k: usize, i: usize) -> usize {
        k * self.n_x + i
    }

    pub fn control_index(&self, k: usize, j: usize) -> usize {
        (self.scenario.k_f + 1) * self.n_x + k * N_CONTROLS + j
    }

    pub fn tf_index(&self) -> Option<usize> {
        self.tf_index
    }

    /// Horizon length encoded by `z`.
    pub fn t_f(&self, z: &[f64]) -> f64 {
        match (self.tf_index, self.scenario.horizon) {
            (Some(i), _) => z[i],
            (None, Horizon::Fixed(t)) => t,
            (None, Horizon::Free) => unreachable!("free horizon always owns a t_f slot"),
        }
    }

    pub fn state<'a>(&self, z: &'a [f64], k: usize) -> &'a [f64] {
        &z[k * self.n_x..(k + 1) * self.n_x]
    }

    pub fn control<'a>(&self, z: &'a [f64], k: usize) -> &'a [f64] {
        let i = self.control_index(k, 0);
        &z[i..i + N_CONTROLS]
    }

    pub fn states(&self, z: &[f64]) -> Vec<Vec<f64>> {
        (0..=self.scenario.k_f)
            .map(|k| self.state(z, k).to_vec())
            .collect()
    }

    pub fn controls(&self, z: &[f64]) -> Vec<[f64; 2]> {
        (0..self.scenario.k_f)
            .map(|k| {
                let u = self.control(z, k);
                [u[0], u[1]]
            })
            .collect()
    }

    /// Obstacle geometry at step `k`.
    pub fn obstacle_at(&self, o: usize, k: usize) -> &ConvexSet {
        &self.obstacles[o][k]
    }

    /// Separating plane of a pair block, oriented with the body on the
    /// `lambda^T s >= mu` side.
    pub fn body_plane(&self, blk: &PairBlock, z: &[f64]) -> Result<(DVector<f64>, f64)> {
        let aux = &z[blk.aux.clone()];
        match blk.form {
            PairForm::Separation { kind, body_first } => {
                let (l, m) = separation::plane_from_aux(kind, aux, None)?;
                // body on the upper side when it is first in an upper-first kind
                if body_first == kind.first_on_upper_side() {
                    Ok((l, m))
                } else {
                    Ok((-l, -m))
                }
            }
            PairForm::Dual => {
                let xi = self.state(z, blk.step);
                let ConvexSet::Polytope(local) = &self.scenario.body_parts[blk.body].shape else {
                    return Err(Error::Unsupported(
                        "dual block with a non-polytope body".into(),
                    ));
                };
                let world = local.transformed(&self.part_pose(blk.body, xi))?;
                let ConvexSet::Polytope(obs) = &self.obstacles[blk.obstacle][blk.step] else {
                    return Err(Error::Unsupported(
                        "dual block with a non-polytope obstacle".into(),
                    ));
                };
                Ok(baseline_dual::plane_from_certificate(
                    world.faces(),
                    world.offsets(),
                    obs,
                    aux,
                ))
            }
        }
    }

    fn part_pose(&self, part: usize, xi: &[f64]) -> Pose {
        let b = &self.scenario.body_parts[part];
        Pose::planar(xi[0], xi[1], xi[self.scenario.yaw_index(b.attach)])
    }

    /// Decision-vector columns of a part's `(x, y, yaw)` tangents at step `k`.
    fn tangent_columns(&self, part: usize, k: usize) -> [usize; 3] {
        let yaw = self
            .scenario
            .yaw_index(self.scenario.body_parts[part].attach);
        [
            self.state_index(k, 0),
            self.state_index(k, 1),
            self.state_index(k, yaw),
        ]
    }

    fn eval_pair(&self, blk: &PairBlock, body: &PlacedSet, aux: &[f64]) -> Result<Local> {
        let obstacle = &self.obstacles_placed[blk.obstacle][blk.step];
        match blk.form {
            PairForm::Separation { kind, body_first } => {
                let (b, o) = (operand(body), operand(obstacle));
                let mut ev = if body_first {
                    separation::evaluate(kind, b, o, aux)?
                } else {
                    separation::evaluate(kind, o, b, aux)?
                };
                let last = ev.len() - 1;
                shift_guard_row(&mut ev, last);
                Ok(Local {
                    eq: None,
                    ineq: Some(ev),
                    body_first,
                })
            }
            PairForm::Dual => {
                let (PlacedSet::Polytope(b), ConvexSet::Polytope(o)) =
                    (body, &self.obstacles[blk.obstacle][blk.step])
                else {
                    return Err(Error::Unsupported("dual block needs two polytopes".into()));
                };
                let ev = baseline_dual::evaluate(b, o, aux)?;
                let mut ineq = take_rows(ev.ineq, DUAL_INEQ_ROWS);
                shift_guard_row(&mut ineq, DUAL_INEQ_ROWS - 1);
                Ok(Local {
                    eq: Some(ev.eq),
                    ineq: Some(ineq),
                    body_first: true,
                })
            }
        }
    }

    fn eval_contain(&self, blk: &ContainBlock, body: &PlacedSet, aux: &[f64]) -> Result<Local> {
        let b = match body {
            PlacedSet::Polytope(p) => Body::Poly(p),
            PlacedSet::Ellipsoid(e) => Body::Ell(e),
        };
        let c = match &self.scenario.canvas[blk.canvas] {
            ConvexSet::Polytope(p) => Canvas::Poly(p),
            ConvexSet::Ellipsoid(e) => Canvas::Ell(e),
        };
        let ev = containment::evaluate(blk.kind, b, c, aux)?;
        if blk.kind == ContainmentKind::EllInEll {
            // the sign rows are bounds
            Ok(Local {
                eq: Some(ev.eq),
                ineq: None,
                body_first: true,
            })
        } else {
            Ok(Local {
                eq: None,
                ineq: Some(ev.ineq),
                body_first: true,
            })
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn scatter(
        &self,
        local: &BlockEval,
        body_first: bool,
        rows: &Range<usize>,
        aux: &Range<usize>,
        cols: &[usize; 3],
        out: &mut [f64],
        jac: Option<&mut Triplets>,
    ) -> Result<()> {
        if local.len() != rows.len() {
            return Err(Error::dim("block rows", rows.len(), local.len()));
        }
        out[rows.clone()].copy_from_slice(local.values.as_slice());
        if let Some(j) = jac {
            let d_body = if body_first {
                &local.d_first
            } else {
                &local.d_second
            };
            for r in 0..local.len() {
                let row = rows.start + r;
                for (c, col) in aux.clone().enumerate() {
                    j.push(row, col, local.d_aux[(r, c)]);
                }
                for t in 0..d_body.ncols() {
                    j.push(row, cols[t], d_body[(r, t)]);
                }
            }
        }
        Ok(())
    }

    /// Dense Jacobian helper for tests and diagnostics.
    pub fn jacobians_dense(&self, z: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (mut eq, mut ineq) = (vec![0.0; self.n_eq()], vec![0.0; self.n_ineq()]);
        let (mut je, mut ji) = (
            Triplets::new(self.n_eq(), self.n_vars()),
            Triplets::new(self.n_ineq(), self.n_vars()),
        );
        self.constraints(z, &mut eq, &mut ineq, Some((&mut je, &mut ji)))?;
        Ok((je.to_dense(), ji.to_dense()))
    }

    /// Largest shooting defect in absolute value.
    pub fn max_defect(&self, z: &[f64]) -> Result<f64> {
        let (mut eq, mut ineq) = (vec![0.0; self.n_eq()], vec![0.0; self.n_ineq()]);
        self.constraints(z, &mut eq, &mut ineq, None)?;
        let start = 2 * self.n_x;
        Ok(eq[start..start + self.scenario.k_f * self.n_x]
            .iter()
            .fold(0.0, |m, v| m.max(v.abs())))
    }
}

fn operand(p: &PlacedSet) -> Operand<'_> {
    match p {
        PlacedSet::Polytope(q) => Operand::Poly(q),
        PlacedSet::Ellipsoid(e) => Operand::Ell(e),
    }
}

impl Problem for NlpProblem {
    fn n_vars(&self) -> usize {
        self.var_map.total()
    }

    fn n_eq(&self) -> usize {
        self.eq_names.len()
    }

    fn n_ineq(&self) -> usize {
        self.ineq_names.len()
    }

    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn objective(&self, z: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        if z.len() != self.n_vars() {
            return Err(Error::dim("decision vector", self.n_vars(), z.len()));
        }
        let s = &self.scenario;
        let q = s.weights.q;
        let mut energy = 0.0;
        for k in 0..s.k_f {
            let u = self.control(z, k);
            energy += q[0] * u[0] * u[0] + q[1] * u[1] * u[1];
        }
        // free horizon: r t_f + sum t_f |u|_Q^2 dtau; fixed: sum |u|_Q^2
        let (value, scale) = match self.tf_index {
            Some(t) => {
                let dt = s.time_step();
                (s.weights.r * z[t] + z[t] * dt * energy, z[t] * dt)
            }
            None => (energy, 1.0),
        };
        if let Some(g) = grad {
            g.fill(0.0);
            for k in 0..s.k_f {
                let i = self.control_index(k, 0);
                g[i] = 2.0 * q[0] * z[i] * scale;
                g[i + 1] = 2.0 * q[1] * z[i + 1] * scale;
            }
            if let Some(t) = self.tf_index {
                g[t] = s.weights.r + s.time_step() * energy;
            }
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("objective".into()));
        }
        Ok(value)
    }

    fn constraints(
        &self,
        z: &[f64],
        eq: &mut [f64],
        ineq: &mut [f64],
        jac: Option<(&mut Triplets, &mut Triplets)>,
    ) -> Result<()> {
        let s = &self.scenario;
        if z.len() != self.n_vars() {
            return Err(Error::dim("decision vector", self.n_vars(), z.len()));
        }
        if eq.len() != self.n_eq() || ineq.len() != self.n_ineq() {
            return Err(Error::dim(
                "residual buffers",
                self.n_eq() + self.n_ineq(),
                eq.len() + ineq.len(),
            ));
        }
        let (mut je, mut ji) = match jac {
            Some((a, b)) => (Some(a), Some(b)),
            None => (None, None),
        };
        let n_x = self.n_x;
        let k_f = s.k_f;

        for (r, (k, xi)) in [(0, &s.xi_init), (k_f, &s.xi_final)]
            .into_iter()
            .enumerate()
        {
            let target = xi.to_vec();
            for i in 0..n_x {
                let idx = self.state_index(k, i);
                eq[r * n_x + i] = z[idx] - target[i];
                if let Some(j) = je.as_deref_mut() {
                    j.push(r * n_x + i, idx, 1.0);
                }
            }
        }

        let h = s.time_step();
        let scale = self.t_f(z);
        for k in 0..k_f {
            let jet = rk4_step_jet(&s.model, self.state(z, k), self.control(z, k), h, scale)?;
            let next = self.state(z, k + 1);
            let base = 2 * n_x + k * n_x;
            for i in 0..n_x {
                eq[base + i] = next[i] - jet.next[i];
            }
            if let Some(j) = je.as_deref_mut() {
                for i in 0..n_x {
                    let row = base + i;
                    j.push(row, self.state_index(k + 1, i), 1.0);
                    for c in 0..n_x {
                        j.push(row, self.state_index(k, c), -jet.d_xi[(i, c)]);
                    }
                    for c in 0..N_CONTROLS {
                        j.push(row, self.control_index(k, c), -jet.d_u[(i, c)]);
                    }
                    if let Some(t) = self.tf_index {
                        j.push(row, t, -jet.d_scale[i]);
                    }
                }
            }
        }

        if let Some(jm) = s.model.joint_max {
            for k in 0..=k_f {
                let xi = self.state(z, k);
                let d = xi[2] - xi[3];
                ineq[2 * k] = d - jm;
                ineq[2 * k + 1] = -d - jm;
                if let Some(j) = ji.as_deref_mut() {
                    let (a, b) = (self.state_index(k, 2), self.state_index(k, 3));
                    j.push(2 * k, a, 1.0);
                    j.push(2 * k, b, -1.0);
                    j.push(2 * k + 1, a, -1.0);
                    j.push(2 * k + 1, b, 1.0);
                }
            }
        }

        // body parts placed once per step
        let placed: Vec<Vec<PlacedSet>> = (0..=k_f)
            .map(|k| {
                if k == 0 {
                    Vec::new()
                } else {
                    (0..s.body_parts.len())
                        .map(|b| s.place_part(b, self.state(z, k)))
                        .collect()
                }
            })
            .collect();

        let pair_locals = self.exec.map(&self.pairs, |blk| {
            self.eval_pair(blk, &placed[blk.step][blk.body], &z[blk.aux.clone()])
        });
        let contain_locals = self.exec.map(&self.contains, |blk| {
            self.eval_contain(blk, &placed[blk.step][blk.body], &z[blk.aux.clone()])
        });
        for (blk, local) in self.pairs.iter().zip(pair_locals) {
            let local = local?;
            let cols = self.tangent_columns(blk.body, blk.step);
            if let Some(e) = &local.eq {
                self.scatter(
                    e,
                    local.body_first,
                    &blk.eq_rows,
                    &blk.aux,
                    &cols,
                    eq,
                    je.as_deref_mut(),
                )?;
            }
            if let Some(e) = &local.ineq {
                self.scatter(
                    e,
                    local.body_first,
                    &blk.ineq_rows,
                    &blk.aux,
                    &cols,
                    ineq,
                    ji.as_deref_mut(),
                )?;
            }
        }
        for (blk, local) in self.contains.iter().zip(contain_locals) {
            let local = local?;
            let cols = self.tangent_columns(blk.body, blk.step);
            if let Some(e) = &local.eq {
                self.scatter(
                    e,
                    true,
                    &blk.eq_rows,
                    &blk.aux,
                    &cols,
                    eq,
                    je.as_deref_mut(),
                )?;
            }
            if let Some(e) = &local.ineq {
                self.scatter(
                    e,
                    true,
                    &blk.ineq_rows,
                    &blk.aux,
                    &cols,
                    ineq,
                    ji.as_deref_mut(),
                )?;
            }
        }
        Ok(())
    }

    fn eq_name(&self, i: usize) -> String {
        self.eq_names[i].clone()
    }

    fn ineq_name(&self, i: usize) -> String {
        self.ineq_names[i].clone()
    }
}

/// World-frame centroid of a body part at state `xi`.
pub fn part_centroid(s: &Scenario, part: usize, xi: &[f64]) -> Result<DVector<f64>> {
    Ok(centroid(&s.part_world(part, xi)?))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dynamics::rollout;
    use crate::geometry::{Ellipsoid, Polytope};
    use crate::solver::check_derivatives;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn single_car(n_obstacles: usize) -> Scenario {
        let deg = std::f64::consts::PI / 180.0;
        let boxes = [
            Polytope::rectangle(-6.0, 7.0, -10.0, -3.0).unwrap(),
            Polytope::rectangle(-6.0, -4.0, 7.0, 10.0).unwrap(),
            Polytope::rectangle(2.0, 4.0, 8.5, 10.0).unwrap(),
            Polytope::rectangle(-6.0, -4.5, -2.5, 0.5).unwrap(),
        ];
        Scenario {
            name: "single_car".into(),
            canvas: vec![Polytope::rectangle(-6.0, 10.0, -10.0, 10.0).unwrap().into()],
            obstacles: boxes[..n_obstacles]
                .iter()
                .map(|b| Obstacle {
                    set: b.clone().into(),
                    motion: Motion::Static,
                })
                .collect(),
            body_parts: vec![BodyPart {
                shape: Polytope::rectangle(-1.0, 3.6, -1.0, 1.0).unwrap().into(),
                attach: Attach::Tractor,
            }],
            model: VehicleModelParams {
                l1: 2.6,
                l2: None,
                theta_max: 180.0 * deg,
                v_min: -5.0 / 3.6,
                v_max: 5.0 / 3.6,
                delta_max: 40.0 * deg,
                a_min: -1.0,
                a_max: 1.0,
                omega_max: 5.0 * deg,
                joint_max: None,
            },
            xi_init: VehicleState {
                x: 0.0,
                y: 0.0,
                theta1: 0.0,
                theta2: None,
                v: 0.0,
                delta: 0.0,
            },
            xi_final: VehicleState {
                x: 8.5,
                y: -7.0,
                theta1: 90.0 * deg,
                theta2: None,
                v: 0.0,
                delta: 0.0,
            },
            k_f: 30,
            horizon: Horizon::Free,
            weights: Weights {
                r: 1.0,
                q: [100.0, 200.0],
            },
            formulation: FormulationKind::Hyperplane,
            gamma: 0.75,
            path_guess: PathGuess::Linear,
            tf_guess: 50.0,
        }
    }

    #[test]
    fn parking_counts() {
        let mut s = single_car(1);
        for (n, hyp, dual) in [(1, 306, 456), (2, 396, 696), (3, 486, 936), (4, 576, 1176)] {
            s = Scenario {
                obstacles: single_car(n).obstacles,
                ..s
            };
            assert_eq!(
                count_variables_with(&s, FormulationKind::Hyperplane)
                    .unwrap()
                    .total,
                hyp
            );
            assert_eq!(
                count_variables_with(&s, FormulationKind::Dual)
                    .unwrap()
                    .total,
                dual
            );
            assert_eq!(
                count_variables_with(&s, FormulationKind::Farkas)
                    .unwrap()
                    .total,
                dual
            );
            for kind in [FormulationKind::Hyperplane, FormulationKind::Dual] {
                let nlp = build(&Scenario {
                    formulation: kind,
                    ..s.clone()
                })
                .unwrap();
                assert_eq!(nlp.n_vars(), count_variables_with(&s, kind).unwrap().total);
            }
        }
        let c = count_variables_with(&single_car(1), FormulationKind::Hyperplane).unwrap();
        assert_eq!(c.aux_per_obstacle, vec![90]);
        let c = count_variables_with(&single_car(1), FormulationKind::Dual).unwrap();
        assert_eq!(c.aux_per_obstacle, vec![240]);
        let c = count_variables(&single_car(0)).unwrap();
        assert_eq!((c.aux, c.total), (0, 216));
    }

    #[test]
    fn var_map_tiles_the_vector() {
        for kind in [FormulationKind::Hyperplane, FormulationKind::Dual] {
            let nlp = build(&Scenario {
                formulation: kind,
                ..single_car(3)
            })
            .unwrap();
            let mut next = 0;
            for s in &nlp.var_map().slices {
                assert_eq!(s.offset, next, "{}", s.name);
                next += s.len;
            }
            assert_eq!(next, nlp.n_vars());
            let (je, ji) = nlp.jacobians_dense(&vec![0.5; nlp.n_vars()]).unwrap();
            assert_eq!(je.ncols(), nlp.n_vars());
            assert_eq!(ji.ncols(), nlp.n_vars());
        }
    }

    #[test]
    fn cost_examples() {
        let fixed = Scenario {
            horizon: Horizon::Fixed(21.0),
            ..single_car(1)
        };
        let nlp = build(&fixed).unwrap();
        assert_eq!(nlp.objective(&vec![0.0; nlp.n_vars()], None).unwrap(), 0.0);
        let nlp = build(&single_car(1)).unwrap();
        let mut z = vec![0.0; nlp.n_vars()];
        z[nlp.tf_index().unwrap()] = 50.0;
        assert_eq!(nlp.objective(&z, None).unwrap(), 50.0);
    }

    #[test]
    fn rollout_satisfies_defects() {
        let s = single_car(1);
        let nlp = build(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let controls: Vec<[f64; 2]> = (0..s.k_f)
            .map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.05..0.05)])
            .collect();
        let tf = 40.0;
        let traj = rollout(&s.model, &s.xi_init.to_vec(), &controls, s.time_step(), tf).unwrap();
        let mut z = vec![0.3; nlp.n_vars()];
        for (k, xi) in traj.iter().enumerate() {
            for (i, v) in xi.iter().enumerate() {
                z[nlp.state_index(k, i)] = *v;
            }
        }
        for (k, u) in controls.iter().enumerate() {
            z[nlp.control_index(k, 0)] = u[0];
            z[nlp.control_index(k, 1)] = u[1];
        }
        z[nlp.tf_index().unwrap()] = tf;
        assert!(nlp.max_defect(&z).unwrap() <= 1e-9);
    }

    #[test]
    fn removing_an_obstacle_drops_the_increment() {
        for kind in [FormulationKind::Hyperplane, FormulationKind::Dual] {
            let s = Scenario {
                formulation: kind,
                ..single_car(4)
            };
            let full = count_variables(&s).unwrap();
            let mut fewer = s.clone();
            fewer.obstacles.pop();
            let less = count_variables(&fewer).unwrap();
            assert_eq!(full.total - less.total, full.aux_per_obstacle[3]);
            assert!(less.total < full.total);
        }
    }

    fn random_z(nlp: &NlpProblem, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut z: Vec<f64> = (0..nlp.n_vars())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        for k in 0..=nlp.scenario().k_f {
            z[nlp.state_index(k, 0)] = rng.random_range(-4.0..8.0);
            z[nlp.state_index(k, 1)] = rng.random_range(-6.0..6.0);
            z[nlp.state_index(k, nlp.n_states() - 1)] = rng.random_range(-0.6..0.6);
        }
        if let Some(t) = nlp.tf_index() {
            z[t] = rng.random_range(20.0..60.0);
        }
        z
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let overtaking_like = Scenario {
            canvas: vec![Ellipsoid::circle(0.0, 0.0, 30.0).unwrap().into()],
            obstacles: vec![
                Obstacle {
                    set: Ellipsoid::circle(2.0, -8.0, 3.0).unwrap().into(),
                    motion: Motion::Static,
                },
                Obstacle {
                    set: Polytope::rectangle(-2.3, 2.3, -1.0, 1.0).unwrap().into(),
                    motion: Motion::circular([0.0, 0.0], 5.0, 1.0, -0.02, 21.0, 10),
                },
            ],
            k_f: 10,
            horizon: Horizon::Fixed(21.0),
            ..single_car(0)
        };
        for s in [
            single_car(2),
            Scenario {
                formulation: FormulationKind::Dual,
                ..single_car(1)
            },
            overtaking_like,
        ] {
            let nlp = build(&s).unwrap();
            for _ in 0..3 {
                let z = random_z(&nlp, &mut rng);
                let rep = check_derivatives(&nlp, &z, 1e-6).unwrap();
                assert!(rep.max_deviation() < 1e-6, "{}: {:#?}", s.name, rep);
            }
        }
    }

    #[test]
    fn unsupported_pairs_are_rejected() {
        let mut s = single_car(0);
        s.obstacles.push(Obstacle {
            set: Ellipsoid::circle(0.0, 5.0, 1.0).unwrap().into(),
            motion: Motion::Static,
        });
        assert!(build(&s).is_ok());
        s.formulation = FormulationKind::Dual;
        assert!(matches!(build(&s), Err(Error::Unsupported(_))));
        assert!(count_variables(&s).is_ok());
        s.formulation = FormulationKind::Farkas;
        assert!(matches!(count_variables(&s), Err(Error::Unsupported(_))));
        assert!(build(&Scenario {
            formulation: FormulationKind::Farkas,
            ..single_car(1)
        })
        .is_err());
    }

    #[test]
    fn scenario_validation() {
        assert!(build(&Scenario {
            k_f: 1,
            ..single_car(1)
        })
        .is_err());
        assert!(build(&Scenario {
            gamma: 1.0,
            ..single_car(1)
        })
        .is_err());
        let mut s = single_car(1);
        s.weights.r = 0.0;
        assert!(build(&s).is_err());
        let mut s = single_car(1);
        s.obstacles[0].motion = Motion::Poses(vec![[0.0; 3]; 3]);
        assert!(build(&s).is_err());
    }
}
