//! Discrete centroidal dynamics and their bi-affine rearrangements.
//!
//! The free state vector stacks knots `1..=T` as `[c, ċ, k]` (9 entries per
//! knot); knot 0 is the fixed initial state and is folded into `b`. The force
//! vector stacks `f[t][j]` for `t in 0..T`, `j in 0..N`. Residual rows come in
//! blocks of 9 per step: position, velocity, angular momentum.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::CsrMatrix;

/// Entries per knot in the state vector.
pub const STATE_DIM: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentroidalState {
    pub c: Vector3<f64>,
    pub cdot: Vector3<f64>,
    pub k: Vector3<f64>,
}

impl Default for CentroidalState {
    fn default() -> Self {
        Self {
            c: Vector3::zeros(),
            cdot: Vector3::zeros(),
            k: Vector3::zeros(),
        }
    }
}

impl CentroidalState {
    pub fn new(c: Vector3<f64>, cdot: Vector3<f64>, k: Vector3<f64>) -> Self {
        Self { c, cdot, k }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn as_array(&self) -> [f64; STATE_DIM] {
        [
            self.c.x, self.c.y, self.c.z, self.cdot.x, self.cdot.y, self.cdot.z, self.k.x,
            self.k.y, self.k.z,
        ]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            c: Vector3::new(s[0], s[1], s[2]),
            cdot: Vector3::new(s[3], s[4], s[5]),
            k: Vector3::new(s[6], s[7], s[8]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTrajectory {
    pub knots: Vec<CentroidalState>,
    pub dt: f64,
}

impl StateTrajectory {
    pub fn new(knots: Vec<CentroidalState>, dt: f64) -> Result<Self> {
        let traj = Self { knots, dt };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.len() < 2 {
            return Err(invalid("knots", "a trajectory needs at least two knots"));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        Ok(())
    }

    /// Number of steps `T` (knots minus one).
    pub fn horizon(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn to_flat(&self) -> DVector<f64> {
        DVector::from_iterator(
            STATE_DIM * self.knots.len(),
            self.knots.iter().flat_map(|s| s.as_array()),
        )
    }

    /// Knots `1..=T` stacked; the decision vector of the state subproblem.
    pub fn free_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            STATE_DIM * self.horizon(),
            self.knots[1..].iter().flat_map(|s| s.as_array()),
        )
    }

    pub fn from_free(x_init: CentroidalState, free: &DVector<f64>, dt: f64) -> Self {
        let mut knots = Vec::with_capacity(free.len() / STATE_DIM + 1);
        knots.push(x_init);
        knots.extend(
            free.as_slice()
                .chunks_exact(STATE_DIM)
                .map(CentroidalState::from_slice),
        );
        Self { knots, dt }
    }
}

/// Contact forces `f[t][j]` stored row-major by knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcePlan {
    pub horizon: usize,
    pub n_eff: usize,
    pub forces: Vec<Vector3<f64>>,
}

impl ForcePlan {
    pub fn zeros(horizon: usize, n_eff: usize) -> Self {
        Self {
            horizon,
            n_eff,
            forces: vec![Vector3::zeros(); horizon * n_eff],
        }
    }

    pub fn get(&self, t: usize, j: usize) -> Vector3<f64> {
        self.forces[t * self.n_eff + j]
    }

    pub fn set(&mut self, t: usize, j: usize, f: Vector3<f64>) {
        self.forces[t * self.n_eff + j] = f;
    }

    pub fn dim(&self) -> usize {
        3 * self.forces.len()
    }

    pub fn to_flat(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.forces.iter().flat_map(|f| [f.x, f.y, f.z]),
        )
    }

    pub fn from_flat(horizon: usize, n_eff: usize, flat: &DVector<f64>) -> Self {
        let forces = flat
            .as_slice()
            .chunks_exact(3)
            .map(|f| Vector3::new(f[0], f[1], f[2]))
            .collect();
        Self {
            horizon,
            n_eff,
            forces,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactPlan {
    /// `active[t][j]`: effector `j` in contact during step `t`.
    pub active: Vec<Vec<bool>>,
    pub positions: Vec<Vec<Vector3<f64>>>,
    pub n_eff: usize,
    pub horizon: usize,
    pub dt: f64,
}

impl ContactPlan {
    pub fn new(active: Vec<Vec<bool>>, positions: Vec<Vec<Vector3<f64>>>, dt: f64) -> Result<Self> {
        let horizon = active.len();
        let n_eff = active.first().map_or(0, Vec::len);
        let plan = Self {
            active,
            positions,
            n_eff,
            horizon,
            dt,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Flight phase for every knot (no effectors).
    pub fn flight(horizon: usize, dt: f64) -> Self {
        Self {
            active: vec![Vec::new(); horizon],
            positions: vec![Vec::new(); horizon],
            n_eff: 0,
            horizon,
            dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(invalid("plan.dt", "must be positive"));
        }
        if self.active.len() != self.horizon || self.positions.len() != self.horizon {
            return Err(Error::DimensionMismatch {
                what: "contact plan rows",
                expected: self.horizon,
                got: self.active.len().min(self.positions.len()),
            });
        }
        for (a, p) in self.active.iter().zip(&self.positions) {
            if a.len() != self.n_eff || p.len() != self.n_eff {
                return Err(Error::DimensionMismatch {
                    what: "contact plan columns",
                    expected: self.n_eff,
                    got: a.len().min(p.len()),
                });
            }
            if a.iter().zip(p).any(|(&on, r)| on && !r.iter().all(|v| v.is_finite())) {
                return Err(invalid("plan.positions", "active contact with non-finite position"));
            }
        }
        Ok(())
    }

    pub fn is_active(&self, t: usize, j: usize) -> bool {
        self.active[t][j]
    }

    /// Centroid of the active contact positions at step `t`, if any.
    pub fn active_centroid(&self, t: usize) -> Option<Vector3<f64>> {
        let (sum, n) = self.active[t]
            .iter()
            .zip(&self.positions[t])
            .filter(|(&on, _)| on)
            .fold((Vector3::zeros(), 0usize), |(s, n), (_, r)| (s + r, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Axis-aligned bound on the CoM position at one knot. Infinite entries are
/// written as `null` in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComBound {
    #[serde(with = "lower_bound")]
    pub lower: Vector3<f64>,
    #[serde(with = "upper_bound")]
    pub upper: Vector3<f64>,
}

impl ComBound {
    pub fn unbounded() -> Self {
        Self {
            lower: Vector3::repeat(f64::NEG_INFINITY),
            upper: Vector3::repeat(f64::INFINITY),
        }
    }

    pub fn centered(center: Vector3<f64>, half_extent: Vector3<f64>) -> Self {
        Self {
            lower: center - half_extent,
            upper: center + half_extent,
        }
    }
}

macro_rules! bound_serde {
    ($name:ident, $missing:expr) => {
        mod $name {
            use nalgebra::Vector3;
            use serde::{Deserialize, Deserializer, Serialize, Serializer};

            pub fn serialize<S: Serializer>(v: &Vector3<f64>, s: S) -> Result<S::Ok, S::Error> {
                let arr: [Option<f64>; 3] =
                    [v.x, v.y, v.z].map(|x| if x.is_finite() { Some(x) } else { None });
                arr.serialize(s)
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector3<f64>, D::Error> {
                let arr = <[Option<f64>; 3]>::deserialize(d)?;
                let [x, y, z] = arr.map(|x| x.unwrap_or($missing));
                Ok(Vector3::new(x, y, z))
            }
        }
    };
}

bound_serde!(lower_bound, f64::NEG_INFINITY);
bound_serde!(upper_bound, f64::INFINITY);

/// Diagonal weights of the state cost, running (knots `1..T`) and terminal
/// (knot `T`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateWeights {
    pub running: [f64; STATE_DIM],
    pub terminal: [f64; STATE_DIM],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub mass: f64,
    pub gravity: Vector3<f64>,
    pub mu: f64,
    pub plan: ContactPlan,
    /// One bound per knot `0..=T`; knot 0 is fixed and its bound is ignored.
    pub com_bounds: Vec<ComBound>,
    pub x_nom: StateTrajectory,
    pub weights_x: StateWeights,
    /// Per-component weight applied to every contact force.
    pub weights_f: [f64; 3],
    pub x_init: CentroidalState,
}

impl ProblemSpec {
    pub fn horizon(&self) -> usize {
        self.plan.horizon
    }

    pub fn n_eff(&self) -> usize {
        self.plan.n_eff
    }

    pub fn dt(&self) -> f64 {
        self.plan.dt
    }

    pub fn state_dim(&self) -> usize {
        STATE_DIM * self.horizon()
    }

    pub fn force_dim(&self) -> usize {
        3 * self.horizon() * self.n_eff()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(invalid("mass", "must be positive"));
        }
        if !(self.mu > 0.0) {
            return Err(invalid("mu", "must be positive"));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(invalid("gravity", "must be finite"));
        }
        self.plan.validate()?;
        if self.horizon() == 0 {
            return Err(invalid("plan", "horizon must be at least one step"));
        }
        self.x_nom.validate()?;
        if self.x_nom.knots.len() != self.horizon() + 1 {
            return Err(Error::DimensionMismatch {
                what: "x_nom knots",
                expected: self.horizon() + 1,
                got: self.x_nom.knots.len(),
            });
        }
        if (self.x_nom.dt - self.dt()).abs() > 1e-12 {
            return Err(invalid("x_nom.dt", "must equal plan.dt"));
        }
        if self.com_bounds.len() != self.horizon() + 1 {
            return Err(Error::DimensionMismatch {
                what: "com_bounds",
                expected: self.horizon() + 1,
                got: self.com_bounds.len(),
            });
        }
        for b in &self.com_bounds {
            for i in 0..3 {
                if b.lower[i] > b.upper[i] || b.lower[i].is_nan() || b.upper[i].is_nan() {
                    return Err(Error::InvalidBounds { index: i });
                }
            }
        }
        let weights = self
            .weights_x
            .running
            .iter()
            .chain(&self.weights_x.terminal)
            .chain(&self.weights_f);
        for &w in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(invalid("weights", "must be finite and nonnegative"));
            }
        }
        if !self.x_init.is_finite() {
            return Err(Error::NonFiniteState);
        }
        Ok(())
    }

    /// Diagonal of `W_x` over the free state vector.
    pub fn state_weight_diagonal(&self) -> DVector<f64> {
        let t_max = self.horizon();
        DVector::from_iterator(
            self.state_dim(),
            (1..=t_max).flat_map(|t| {
                if t == t_max {
                    self.weights_x.terminal
                } else {
                    self.weights_x.running
                }
            }),
        )
    }

    pub fn force_weight_diagonal(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.force_dim(),
            (0..self.horizon() * self.n_eff()).flat_map(|_| self.weights_f),
        )
    }

    /// Box bounds on the free state vector: CoM entries from `com_bounds`,
    /// velocity and momentum unbounded.
    pub fn state_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.state_dim();
        let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
        let mut upper = DVector::from_element(n, f64::INFINITY);
        for t in 1..=self.horizon() {
            let base = STATE_DIM * (t - 1);
            for i in 0..3 {
                lower[base + i] = self.com_bounds[t].lower[i];
                upper[base + i] = self.com_bounds[t].upper[i];
            }
        }
        (lower, upper)
    }

    /// Φ(X) = (X − X_nom)ᵀ W_x (X − X_nom) over the free knots.
    pub fn state_cost(&self, x: &StateTrajectory) -> f64 {
        let w = self.state_weight_diagonal();
        let d = x.free_vector() - self.x_nom.free_vector();
        d.iter().zip(w.iter()).map(|(d, w)| w * d * d).sum()
    }

    /// Φ(F) = Fᵀ W_f F.
    pub fn force_cost(&self, f: &ForcePlan) -> f64 {
        f.forces
            .iter()
            .map(|v| {
                (0..3)
                    .map(|i| self.weights_f[i] * v[i] * v[i])
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Sparse linear system `A z = b` in one variable block of the dynamics.
#[derive(Debug, Clone)]
pub struct BiAffineSystem {
    pub a: CsrMatrix,
    pub b: DVector<f64>,
}

impl BiAffineSystem {
    /// `A z − b`.
    pub fn residual(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut r = -self.b.clone();
        self.a.mul_add(z.as_slice(), r.as_mut_slice());
        r
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    v.cross_matrix()
}

/// One explicit-Euler step of the centroidal dynamics with point contacts.
pub fn integrate_step(
    state: &CentroidalState,
    forces: &[Vector3<f64>],
    active: &[bool],
    positions: &[Vector3<f64>],
    mass: f64,
    gravity: &Vector3<f64>,
    dt: f64,
) -> Result<CentroidalState> {
    if !(dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    if forces.len() != active.len() || positions.len() != active.len() {
        return Err(Error::DimensionMismatch {
            what: "per-effector inputs",
            expected: active.len(),
            got: forces.len().min(positions.len()),
        });
    }
    if !state.is_finite() || !forces.iter().all(|f| f.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFiniteState);
    }
    let mut net_force = Vector3::zeros();
    let mut net_moment = Vector3::zeros();
    for ((f, &on), r) in forces.iter().zip(active).zip(positions) {
        if on {
            net_force += f;
            net_moment += (r - state.c).cross(f);
        }
    }
    let next = CentroidalState {
        c: state.c + state.cdot * dt,
        cdot: state.cdot + net_force / mass * dt + gravity * dt,
        k: state.k + net_moment * dt,
    };
    if !next.is_finite() {
        return Err(Error::NonFiniteState);
    }
    Ok(next)
}

fn check_state_dims(x: &StateTrajectory, spec: &ProblemSpec) -> Result<()> {
    if x.knots.len() != spec.horizon() + 1 {
        return Err(Error::DimensionMismatch {
            what: "state trajectory knots",
            expected: spec.horizon() + 1,
            got: x.knots.len(),
        });
    }
    Ok(())
}

fn check_force_dims(f: &ForcePlan, spec: &ProblemSpec) -> Result<()> {
    if f.horizon != spec.horizon() || f.n_eff != spec.n_eff() || f.forces.len() != f.horizon * f.n_eff
    {
        return Err(Error::DimensionMismatch {
            what: "force plan",
            expected: spec.horizon() * spec.n_eff(),
            got: f.forces.len(),
        });
    }
    Ok(())
}

/// Stacked residuals of the three dynamics equations, evaluated by direct
/// loop. Knot 0 is taken from `spec.x_init`, not from `x`.
pub fn dynamics_residual(
    x: &StateTrajectory,
    f: &ForcePlan,
    spec: &ProblemSpec,
) -> Result<DVector<f64>> {
    check_state_dims(x, spec)?;
    check_force_dims(f, spec)?;
    let dt = spec.dt();
    let n = spec.n_eff();
    let mut r = DVector::zeros(spec.state_dim());
    for t in 0..spec.horizon() {
        let cur = if t == 0 { &spec.x_init } else { &x.knots[t] };
        let next = &x.knots[t + 1];
        let mut net_force = Vector3::zeros();
        let mut net_moment = Vector3::zeros();
        for j in 0..n {
            if spec.plan.is_active(t, j) {
                let fj = f.get(t, j);
                net_force += fj;
                net_moment += (spec.plan.positions[t][j] - cur.c).cross(&fj);
            }
        }
        let pos = next.c - cur.c - cur.cdot * dt;
        let vel = next.cdot - cur.cdot - net_force / spec.mass * dt - spec.gravity * dt;
        let amom = next.k - cur.k - net_moment * dt;
        let base = STATE_DIM * t;
        r.rows_mut(base, 3).copy_from(&pos);
        r.rows_mut(base + 3, 3).copy_from(&vel);
        r.rows_mut(base + 6, 3).copy_from(&amom);
    }
    Ok(r)
}

/// Accumulates `residual = A z + const` row by row; `b = −const`.
struct SystemBuilder {
    rows: usize,
    cols: usize,
    triplets: Vec<(usize, usize, f64)>,
    constant: DVector<f64>,
}

impl SystemBuilder {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            triplets: Vec::new(),
            constant: DVector::zeros(rows),
        }
    }

    fn push(&mut self, row: usize, col: usize, v: f64) {
        if v != 0.0 {
            self.triplets.push((row, col, v));
        }
    }

    fn push_block(&mut self, row: usize, col: usize, m: &Matrix3<f64>) {
        for i in 0..3 {
            for j in 0..3 {
                self.push(row + i, col + j, m[(i, j)]);
            }
        }
    }

    fn add_constant(&mut self, row: usize, v: &Vector3<f64>) {
        let mut rows = self.constant.rows_mut(row, 3);
        rows += v;
    }

    fn finish(self) -> BiAffineSystem {
        BiAffineSystem {
            a: CsrMatrix::from_triplets(self.rows, self.cols, self.triplets),
            b: -self.constant,
        }
    }
}

/// `A(F) X = b(F)`: the dynamics as an affine system in the free states.
pub fn build_state_system(f: &ForcePlan, spec: &ProblemSpec) -> Result<BiAffineSystem> {
    check_force_dims(f, spec)?;
    let t_max = spec.horizon();
    let dt = spec.dt();
    let n = spec.n_eff();
    let x0 = &spec.x_init;
    let dim = spec.state_dim();
    let mut sys = SystemBuilder::new(dim, dim);
    let eye = Matrix3::identity();
    // column of knot t (t >= 1), component offset o
    let col = |t: usize, o: usize| STATE_DIM * (t - 1) + o;

    for t in 0..t_max {
        let row = STATE_DIM * t;
        let mut net_force = Vector3::zeros();
        let mut r_cross_f = Vector3::zeros();
        for j in 0..n {
            if spec.plan.is_active(t, j) {
                let fj = f.get(t, j);
                net_force += fj;
                r_cross_f += spec.plan.positions[t][j].cross(&fj);
            }
        }
        // (r − c) × f = r × f + [Σf]× c
        let c_coeff = -dt * skew(&net_force);

        sys.push_block(row, col(t + 1, 0), &eye);
        sys.push_block(row + 3, col(t + 1, 3), &eye);
        sys.push_block(row + 6, col(t + 1, 6), &eye);
        if t == 0 {
            sys.add_constant(row, &(-x0.c - x0.cdot * dt));
            sys.add_constant(row + 3, &(-x0.cdot));
            sys.add_constant(row + 6, &(-x0.k + c_coeff * x0.c));
        } else {
            sys.push_block(row, col(t, 0), &(-eye));
            sys.push_block(row, col(t, 3), &(-dt * eye));
            sys.push_block(row + 3, col(t, 3), &(-eye));
            sys.push_block(row + 6, col(t, 6), &(-eye));
            sys.push_block(row + 6, col(t, 0), &c_coeff);
        }
        sys.add_constant(row + 3, &(-(net_force / spec.mass + spec.gravity) * dt));
        sys.add_constant(row + 6, &(-r_cross_f * dt));
    }
    Ok(sys.finish())
}

/// `A(X) F = b(X)`: the dynamics as an affine system in the forces. Columns of
/// inactive contacts carry no entries.
pub fn build_force_system(x: &StateTrajectory, spec: &ProblemSpec) -> Result<BiAffineSystem> {
    check_state_dims(x, spec)?;
    let t_max = spec.horizon();
    let dt = spec.dt();
    let n = spec.n_eff();
    let mut sys = SystemBuilder::new(spec.state_dim(), spec.force_dim());
    let vel_coeff = -dt / spec.mass * Matrix3::identity();

    for t in 0..t_max {
        let row = STATE_DIM * t;
        let cur = if t == 0 { &spec.x_init } else { &x.knots[t] };
        let next = &x.knots[t + 1];
        for j in 0..n {
            if !spec.plan.is_active(t, j) {
                continue;
            }
            let col = 3 * (t * n + j);
            sys.push_block(row + 3, col, &vel_coeff);
            sys.push_block(row + 6, col, &(-dt * skew(&(spec.plan.positions[t][j] - cur.c))));
        }
        sys.add_constant(row, &(next.c - cur.c - cur.cdot * dt));
        sys.add_constant(row + 3, &(next.cdot - cur.cdot - spec.gravity * dt));
        sys.add_constant(row + 6, &(next.k - cur.k));
    }
    Ok(sys.finish())
}

/// Roll the dynamics forward from `spec.x_init` under `f`.
pub fn rollout(f: &ForcePlan, spec: &ProblemSpec) -> Result<StateTrajectory> {
    check_force_dims(f, spec)?;
    let n = spec.n_eff();
    let mut knots = Vec::with_capacity(spec.horizon() + 1);
    knots.push(spec.x_init);
    for t in 0..spec.horizon() {
        let forces: Vec<_> = (0..n).map(|j| f.get(t, j)).collect();
        let next = integrate_step(
            &knots[t],
            &forces,
            &spec.plan.active[t],
            &spec.plan.positions[t],
            spec.mass,
            &spec.gravity,
            spec.dt(),
        )?;
        knots.push(next);
    }
    Ok(StateTrajectory {
        knots,
        dt: spec.dt(),
    })
}
