//! Closed-loop MPC on the centroidal point mass: control-rate integration of
//! interpolated planned forces, replanning at a fixed rate with optional plan
//! lag, disturbance injection and per-tick logging.

use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use nalgebra::{DVector, UnitQuaternion, Vector3};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::admm::{AdmmConfig, AdmmInit, AdmmSolver};
use crate::error::{invalid, Error, Result};
use crate::gait::{GaitParams, Quaternion};
use crate::model::{integrate_step, CentroidalState, ContactPlan, ForcePlan, StateTrajectory, STATE_DIM};
use crate::scenario::{PlanningContext, Scenario};

/// How long a fresh plan takes to reach the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LagModel {
    #[default]
    None,
    /// Fixed latency in milliseconds.
    Fixed(f64),
    /// Wall-clock solve time.
    Measured,
}

/// Commanded velocity held for `duration` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocitySegment {
    pub duration: f64,
    pub v_des: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub replan_hz: f64,
    pub control_hz: f64,
    /// Planning horizon; the gait's knot count when unset.
    pub horizon_knots: Option<usize>,
    pub lag_model: LagModel,
    pub scenario_duration: f64,
    /// Seed each solve with the previous solution shifted in time.
    pub warm_start: bool,
    /// Freeze simulated time during solves. When false the controller runs
    /// in real time and plans arrive from a worker thread.
    pub sequential: bool,
    /// Commanded velocity over time; the nominal `v_des` when empty. The last
    /// segment is held past its end.
    pub velocity_schedule: Vec<VelocitySegment>,
    /// Scalar base inertia used to integrate orientation from momentum.
    pub base_inertia: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            replan_hz: 20.0,
            control_hz: 1000.0,
            horizon_knots: None,
            lag_model: LagModel::None,
            scenario_duration: 2.0,
            warm_start: true,
            sequential: true,
            velocity_schedule: Vec::new(),
            base_inertia: 0.05,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self, gait: &GaitParams) -> Result<()> {
        if !(self.replan_hz > 0.0) {
            return Err(invalid("replan_hz", "must be positive"));
        }
        if !(self.control_hz >= self.replan_hz) {
            return Err(invalid("control_hz", "must be at least replan_hz"));
        }
        if !(self.scenario_duration > 0.0) {
            return Err(invalid("scenario_duration", "must be positive"));
        }
        if !(self.base_inertia > 0.0) {
            return Err(invalid("base_inertia", "must be positive"));
        }
        let knots = self.horizon(gait);
        if knots < 2 {
            return Err(invalid("horizon_knots", "must be at least 2"));
        }
        if !(knots as f64 * gait.dt > 1.0 / self.replan_hz) {
            return Err(invalid(
                "horizon_knots",
                format!(
                    "horizon of {:.3} s does not cover the replan period of {:.3} s",
                    knots as f64 * gait.dt,
                    1.0 / self.replan_hz
                ),
            ));
        }
        if let LagModel::Fixed(ms) = self.lag_model {
            if !(ms >= 0.0) {
                return Err(invalid("lag_model", "fixed lag must be nonnegative"));
            }
        }
        if self.velocity_schedule.iter().any(|s| !(s.duration > 0.0)) {
            return Err(invalid("velocity_schedule", "segment durations must be positive"));
        }
        Ok(())
    }

    pub fn horizon(&self, gait: &GaitParams) -> usize {
        self.horizon_knots.unwrap_or(gait.n_knots)
    }

    pub fn ticks(&self) -> usize {
        (self.scenario_duration * self.control_hz).round() as usize
    }

    pub fn replan_every(&self) -> usize {
        ((self.control_hz / self.replan_hz).round() as usize).max(1)
    }

    pub fn v_des_at(&self, t: f64, fallback: &Vector3<f64>) -> Vector3<f64> {
        let mut end = 0.0;
        for seg in &self.velocity_schedule {
            end += seg.duration;
            if t < end - 1e-12 {
                return seg.v_des;
            }
        }
        self.velocity_schedule.last().map_or(*fallback, |s| s.v_des)
    }
}

/// External push on the CoM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub start: f64,
    pub duration: f64,
    pub force: Vector3<f64>,
    /// Rotates the horizontal part of `force` to this heading (degrees from
    /// +x), keeping its magnitude.
    #[serde(default)]
    pub direction_deg: Option<f64>,
    /// Application point relative to the CoM; adds a moment.
    #[serde(default)]
    pub offset: Option<Vector3<f64>>,
}

impl Disturbance {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(invalid("disturbance.duration", "must be positive"));
        }
        if !self.start.is_finite() || !self.force.iter().all(|f| f.is_finite()) {
            return Err(invalid("disturbance", "start and force must be finite"));
        }
        Ok(())
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }

    /// Force and moment about the CoM.
    pub fn wrench(&self) -> (Vector3<f64>, Vector3<f64>) {
        let force = match self.direction_deg {
            Some(deg) => {
                let planar = self.force.xy().norm();
                let a = deg.to_radians();
                Vector3::new(planar * a.cos(), planar * a.sin(), self.force.z)
            }
            None => self.force,
        };
        let moment = self.offset.map_or(Vector3::zeros(), |r| r.cross(&force));
        (force, moment)
    }
}

/// Forces of `plan` at `t_since_plan` seconds after its first knot, linear
/// between knots (inactive contacts count as zero, so a touchdown ramps up
/// from zero over the preceding interval). The second value is true when the
/// query lies past the horizon; the last knot is then held.
pub fn interpolate_forces(plan: &ForcePlan, t_since_plan: f64, dt: f64) -> (Vec<Vector3<f64>>, bool) {
    let n = plan.n_eff;
    if plan.horizon == 0 {
        return (vec![Vector3::zeros(); n], true);
    }
    let last = plan.horizon - 1;
    let s = t_since_plan.max(0.0) / dt;
    if s >= plan.horizon as f64 - 1e-9 {
        return ((0..n).map(|j| plan.get(last, j)).collect(), true);
    }
    let nearest = s.round();
    let (k, frac) = if (s - nearest).abs() < 1e-9 {
        (nearest as usize, 0.0)
    } else {
        (s.floor() as usize, s - s.floor())
    };
    if k >= last || frac == 0.0 {
        return ((0..n).map(|j| plan.get(k.min(last), j)).collect(), false);
    }
    let forces = (0..n)
        .map(|j| plan.get(k, j) * (1.0 - frac) + plan.get(k + 1, j) * frac)
        .collect();
    (forces, false)
}

/// A solved plan as seen by the controller.
#[derive(Debug, Clone)]
pub struct TimedPlan {
    pub x: StateTrajectory,
    pub forces: ForcePlan,
    pub dual: DVector<f64>,
    pub contacts: ContactPlan,
    /// Simulation time of knot 0.
    pub t_plan: f64,
    /// Time already consumed by lag: query 0 maps to this offset.
    pub offset: f64,
    pub objective: f64,
    pub violation: f64,
}

impl TimedPlan {
    pub fn duration(&self) -> f64 {
        self.forces.horizon as f64 * self.contacts.dt
    }

    /// Forces and the exhausted flag `t_since` seconds after the (possibly
    /// shifted) origin.
    pub fn forces_at(&self, t_since: f64) -> (Vec<Vector3<f64>>, bool) {
        interpolate_forces(&self.forces, self.offset + t_since, self.contacts.dt)
    }

    /// Contact flags and positions matching [`TimedPlan::forces_at`]: a foot
    /// counts as loaded while either neighbouring knot has it in contact.
    pub fn contacts_at(&self, t_since: f64) -> (Vec<bool>, Vec<Vector3<f64>>) {
        let n = self.contacts.n_eff;
        let horizon = self.contacts.horizon;
        let s = ((self.offset + t_since).max(0.0) / self.contacts.dt + 1e-9).floor() as usize;
        let k = s.min(horizon - 1);
        let next = (k + 1).min(horizon - 1);
        let mut active = vec![false; n];
        let mut positions = vec![Vector3::zeros(); n];
        for j in 0..n {
            if self.contacts.active[k][j] {
                active[j] = true;
                positions[j] = self.contacts.positions[k][j];
            } else if self.contacts.active[next][j] {
                active[j] = true;
                positions[j] = self.contacts.positions[next][j];
            }
        }
        (active, positions)
    }
}

/// Advances the origin of `plan` by `solve_time` seconds.
pub fn apply_plan_lag(plan: &TimedPlan, solve_time: f64) -> Result<TimedPlan> {
    if !(solve_time >= 0.0) {
        return Err(invalid("solve_time", "must be nonnegative"));
    }
    let offset = plan.offset + solve_time;
    if offset >= plan.duration() {
        return Err(Error::LagExceedsHorizon {
            lag: offset,
            horizon: plan.duration(),
        });
    }
    Ok(TimedPlan {
        offset,
        ..plan.clone()
    })
}

/// Previous solution moved forward by `shift` knots, last knot replicated.
pub fn shift_solution(plan: &TimedPlan, shift: usize) -> AdmmInit {
    let horizon = plan.forces.horizon;
    let n = plan.forces.n_eff;
    let knots = (0..=horizon)
        .map(|t| plan.x.knots[(t + shift).min(horizon)])
        .collect();
    let mut f = ForcePlan::zeros(horizon, n);
    for t in 0..horizon {
        for j in 0..n {
            f.set(t, j, plan.forces.get((t + shift).min(horizon - 1), j));
        }
    }
    let p = DVector::from_fn(horizon * STATE_DIM, |i, _| {
        let block = (i / STATE_DIM + shift).min(horizon - 1);
        plan.dual[block * STATE_DIM + i % STATE_DIM]
    });
    AdmmInit {
        x: StateTrajectory {
            knots,
            dt: plan.x.dt,
        },
        f,
        p,
    }
}

/// Latest complete plan, swapped atomically by the planner.
#[derive(Debug, Default)]
pub struct PlanSlot {
    plan: Mutex<Option<Arc<TimedPlan>>>,
    version: AtomicU64,
}

impl PlanSlot {
    pub fn publish(&self, plan: TimedPlan) {
        *self.plan.lock() = Some(Arc::new(plan));
        self.version.fetch_add(1, Ordering::Release);
    }

    pub fn latest(&self) -> Option<Arc<TimedPlan>> {
        self.plan.lock().clone()
    }

    pub fn version(&self) -> u64 {
        self.version.load(Ordering::Acquire)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub t: f64,
    pub state: CentroidalState,
    pub forces: Vec<Vector3<f64>>,
    pub v_des: Vector3<f64>,
    pub violation: f64,
    pub solve_us: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplanRecord {
    pub t: f64,
    pub objective: f64,
    pub violation: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_us: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimLog {
    pub n_eff: usize,
    pub rows: Vec<LogRow>,
    pub replans: Vec<ReplanRecord>,
    /// Ticks on which the controller ran past the end of its plan.
    pub exhausted_ticks: usize,
    /// Largest distance by which the simulated CoM left the kinematic box
    /// around its stance feet (0 if it never did).
    pub max_box_excursion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_cost: f64,
    pub mean_violation: f64,
    pub tracking_rmse: f64,
    pub max_solve_us: f64,
    pub replans: usize,
    pub failed_replans: usize,
    pub converged_fraction: f64,
}

/// Mean objective over successful replans.
pub fn mpc_cost_metric(log: &SimLog) -> Result<f64> {
    let costs: Vec<f64> = log
        .replans
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| r.objective)
        .collect();
    if costs.is_empty() {
        return Err(Error::EmptyLog);
    }
    Ok(costs.iter().sum::<f64>() / costs.len() as f64)
}

impl SimLog {
    pub fn csv_header(&self) -> String {
        let mut cols: Vec<String> = ["t", "cx", "cy", "cz", "vx", "vy", "vz", "kx", "ky", "kz"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for j in 0..self.n_eff {
            for axis in ["x", "y", "z"] {
                cols.push(format!("f{j}{axis}"));
            }
        }
        cols.extend(["vdesx", "vdesy", "vdesz", "violation", "solve_us", "cost"].map(String::from));
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.csv_header())?;
        let mut line = String::new();
        for row in &self.rows {
            line.clear();
            let mut push = |v: f64| {
                if !line.is_empty() {
                    line.push(',');
                }
                line.push_str(&v.to_string());
            };
            push(row.t);
            row.state.as_array().into_iter().for_each(&mut push);
            for f in &row.forces {
                f.iter().copied().for_each(&mut push);
            }
            row.v_des.iter().copied().for_each(&mut push);
            push(row.violation);
            push(row.solve_us);
            push(row.cost);
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Root-mean-square horizontal velocity tracking error over all ticks.
    pub fn tracking_rmse(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        let sum: f64 = self
            .rows
            .iter()
            .map(|r| (r.state.cdot.xy() - r.v_des.xy()).norm_squared())
            .sum();
        (sum / self.rows.len() as f64).sqrt()
    }

    /// Mean horizontal velocity error over ticks with `t0 <= t < t1`.
    pub fn mean_velocity_error(&self, t0: f64, t1: f64) -> f64 {
        let errs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.t >= t0 && r.t < t1)
            .map(|r| (r.state.cdot.xy() - r.v_des.xy()).norm())
            .collect();
        errs.iter().sum::<f64>() / errs.len() as f64
    }

    pub fn summary(&self) -> Result<Summary> {
        let ok: Vec<&ReplanRecord> = self.replans.iter().filter(|r| r.error.is_none()).collect();
        let mean_violation = if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|r| r.violation).sum::<f64>() / ok.len() as f64
        };
        Ok(Summary {
            mean_cost: mpc_cost_metric(self)?,
            mean_violation,
            tracking_rmse: self.tracking_rmse(),
            max_solve_us: self.replans.iter().map(|r| r.wall_us).fold(0.0, f64::max),
            replans: self.replans.len(),
            failed_replans: self.replans.len() - ok.len(),
            converged_fraction: ok.iter().filter(|r| r.converged).count() as f64
                / self.replans.len().max(1) as f64,
        })
    }
}

/// Replan inputs captured at a replan tick.
#[derive(Debug, Clone)]
struct ReplanRequest {
    t: f64,
    state: CentroidalState,
    v_des: Vector3<f64>,
    orientation: Quaternion,
    footholds: Vec<Option<Vector3<f64>>>,
}

/// Solver state carried between replans.
struct Planner<'a> {
    scenario: &'a Scenario,
    horizon: usize,
    dt: f64,
    admm: AdmmConfig,
    solver: AdmmSolver,
    previous: Option<TimedPlan>,
}

impl<'a> Planner<'a> {
    fn new(scenario: &'a Scenario, admm: AdmmConfig) -> Result<Self> {
        let gait = scenario.gait_params()?;
        Ok(Self {
            scenario,
            horizon: scenario.mpc.horizon(&gait),
            dt: gait.dt,
            admm,
            solver: AdmmSolver::new(),
            previous: None,
        })
    }

    fn solve(&mut self, req: &ReplanRequest) -> (Result<TimedPlan>, ReplanRecord) {
        let start = Instant::now();
        let out = self.try_solve(req);
        let wall_us = start.elapsed().as_secs_f64() * 1e6;
        let record = match &out {
            Ok((plan, iterations, converged)) => ReplanRecord {
                t: req.t,
                objective: plan.objective,
                violation: plan.violation,
                iterations: *iterations,
                converged: *converged,
                wall_us,
                error: None,
            },
            Err(e) => ReplanRecord {
                t: req.t,
                objective: f64::NAN,
                violation: f64::NAN,
                iterations: 0,
                converged: false,
                wall_us,
                error: Some(e.to_string()),
            },
        };
        let plan = out.map(|(plan, _, _)| {
            self.previous = Some(plan.clone());
            plan
        });
        (plan, record)
    }

    fn try_solve(&mut self, req: &ReplanRequest) -> Result<(TimedPlan, usize, bool)> {
        let ctx = PlanningContext {
            t_elapsed: req.t,
            state: req.state,
            v_des: req.v_des,
            orientation: Some(req.orientation),
            footholds: Some(&req.footholds),
            horizon: Some(self.horizon),
        };
        let spec = self.scenario.problem(&ctx)?;
        let init = match (&self.previous, self.scenario.mpc.warm_start) {
            (Some(prev), true) => {
                let shift = ((req.t - prev.t_plan) / self.dt).round().max(0.0) as usize;
                (shift < self.horizon && prev.forces.n_eff == spec.n_eff())
                    .then(|| shift_solution(prev, shift))
            }
            _ => None,
        };
        let res = self.solver.solve(&spec, init.as_ref(), &self.admm)?;
        let violation = res.violation();
        let plan = TimedPlan {
            x: res.x,
            forces: res.f,
            dual: res.p,
            contacts: spec.plan,
            t_plan: req.t,
            offset: 0.0,
            objective: res.objective,
            violation,
        };
        Ok((plan, res.iterations, res.converged))
    }
}

/// Point-mass plant with foothold memory and base orientation.
struct Plant<'a> {
    scenario: &'a Scenario,
    gait: GaitParams,
    state: CentroidalState,
    orientation: UnitQuaternion<f64>,
    footholds: Vec<Option<Vector3<f64>>>,
    excursion: f64,
    dt: f64,
}

impl<'a> Plant<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self> {
        let gait = scenario.gait_params()?;
        Ok(Self {
            scenario,
            state: scenario.initial_state(),
            orientation: scenario.nominal.q0.0,
            footholds: vec![None; gait.n_eff()],
            excursion: 0.0,
            gait,
            dt: 1.0 / scenario.mpc.control_hz,
        })
    }

    fn request(&self, t: f64) -> ReplanRequest {
        let footholds = (0..self.gait.n_eff())
            .map(|j| if self.gait.in_stance(j, t) { self.footholds[j] } else { None })
            .collect();
        ReplanRequest {
            t,
            state: self.state,
            v_des: self.scenario.mpc.v_des_at(t, &self.scenario.nominal.v_des),
            orientation: Quaternion(self.orientation),
            footholds,
        }
    }

    /// Integrates one control tick; returns the applied contact forces and
    /// whether the plan was exhausted.
    fn step(&mut self, t: f64, plan: &TimedPlan, t_since: f64) -> Result<(Vec<Vector3<f64>>, bool)> {
        let (forces, exhausted) = plan.forces_at(t_since);
        let (active, positions) = plan.contacts_at(t_since);
        for j in 0..self.footholds.len() {
            if !self.gait.in_stance(j, t) {
                self.footholds[j] = None;
            } else if active[j] && self.footholds[j].is_none() {
                self.footholds[j] = Some(positions[j]);
            }
        }
        let mut next = integrate_step(
            &self.state,
            &forces,
            &active,
            &positions,
            self.scenario.mass,
            &self.scenario.gravity,
            self.dt,
        )?;
        for d in self.scenario.disturbances.iter().filter(|d| d.is_active(t)) {
            let (force, moment) = d.wrench();
            next.cdot += force / self.scenario.mass * self.dt;
            next.k += moment * self.dt;
        }
        let omega = self.state.k / self.scenario.mpc.base_inertia;
        self.orientation = UnitQuaternion::from_scaled_axis(omega * self.dt) * self.orientation;
        self.excursion = self.excursion.max(self.box_excursion(&active, &positions));
        self.state = next;
        Ok((forces, exhausted))
    }

    fn box_excursion(&self, active: &[bool], positions: &[Vector3<f64>]) -> f64 {
        let (sum, n) = active
            .iter()
            .zip(positions.iter().zip(&self.scenario.effectors))
            .filter(|(on, _)| **on)
            .fold((Vector3::zeros(), 0usize), |(s, n), (_, (r, hip))| (s + r - hip, n + 1));
        if n == 0 {
            return 0.0;
        }
        let anchor = sum / n as f64;
        let cb = &self.scenario.com_box;
        let center = Vector3::new(anchor.x, anchor.y, cb.height.unwrap_or(self.scenario.nominal.z_des));
        (0..3)
            .map(|i| (self.state.c[i] - center[i]).abs() - cb.half_extent[i])
            .fold(0.0, f64::max)
    }
}

fn check_failures(t: f64, failures: usize, record: &ReplanRecord) -> Result<()> {
    if failures > 3 {
        return Err(Error::Aborted {
            t,
            failures,
            last: record.error.clone().unwrap_or_default(),
        });
    }
    Ok(())
}

/// Runs the scenario's closed loop. Sequential or real-time according to
/// `scenario.mpc.sequential`.
pub fn run_closed_loop(scenario: &Scenario) -> Result<SimLog> {
    scenario.validate()?;
    if scenario.mpc.sequential {
        run_sequential(scenario)
    } else {
        run_concurrent(scenario)
    }
}

fn run_sequential(scenario: &Scenario) -> Result<SimLog> {
    let cfg = &scenario.mpc;
    let mut planner = Planner::new(scenario, scenario.admm)?;
    let mut plant = Plant::new(scenario)?;
    let ticks = cfg.ticks();
    let every = cfg.replan_every();
    let dt = plant.dt;

    let mut log = SimLog {
        n_eff: plant.gait.n_eff(),
        rows: Vec::with_capacity(ticks),
        ..SimLog::default()
    };
    let mut current: Option<(TimedPlan, f64)> = None;
    let mut pending: Option<(usize, TimedPlan)> = None;
    let mut failures = 0;
    let mut solve_us = 0.0;

    for i in 0..ticks {
        let t = i as f64 * dt;
        if i % every == 0 {
            let req = plant.request(t);
            let (plan, record) = planner.solve(&req);
            match plan {
                Ok(plan) => {
                    failures = 0;
                    let lag = match cfg.lag_model {
                        LagModel::None => 0.0,
                        LagModel::Fixed(ms) => ms / 1000.0,
                        LagModel::Measured => record.wall_us / 1e6,
                    };
                    solve_us = lag * 1e6;
                    let delay = (lag / dt).round() as usize;
                    let shifted = apply_plan_lag(&plan, delay as f64 * dt)?;
                    if current.is_none() || delay == 0 {
                        current = Some((shifted, t + delay as f64 * dt));
                    } else {
                        pending = Some((i + delay, shifted));
                    }
                }
                Err(_) => {
                    failures += 1;
                    check_failures(t, failures, &record)?;
                }
            }
            log.replans.push(record);
        }
        if let Some((at, _)) = &pending {
            if *at == i {
                let (_, plan) = pending.take().expect("checked above");
                current = Some((plan, t));
            }
        }
        let (plan, published) = current.as_ref().ok_or_else(|| Error::Aborted {
            t,
            failures,
            last: "no plan available".into(),
        })?;
        let state = plant.state;
        let (forces, exhausted) = plant.step(t, plan, t - published)?;
        log.exhausted_ticks += exhausted as usize;
        log.rows.push(LogRow {
            t,
            state,
            forces,
            v_des: cfg.v_des_at(t, &scenario.nominal.v_des),
            violation: plan.violation,
            solve_us,
            cost: plan.objective,
        });
    }
    log.max_box_excursion = plant.excursion;
    Ok(log)
}

/// Real-time variant: the controller ticks on the wall clock while a worker
/// thread solves and publishes plans through a [`PlanSlot`]. Plans are
/// indexed by the time elapsed since their request, so the solve latency is
/// skipped implicitly.
fn run_concurrent(scenario: &Scenario) -> Result<SimLog> {
    let cfg = &scenario.mpc;
    let ticks = cfg.ticks();
    let every = cfg.replan_every();
    let mut plant = Plant::new(scenario)?;
    let dt = plant.dt;
    let slot = PlanSlot::default();
    let busy = AtomicBool::new(false);
    let (req_tx, req_rx) = mpsc::channel::<ReplanRequest>();
    let (rec_tx, rec_rx) = mpsc::channel::<ReplanRecord>();

    thread::scope(|scope| -> Result<SimLog> {
        let slot_ref = &slot;
        let busy_ref = &busy;
        let worker = scope.spawn(move || -> Result<()> {
            let mut planner = Planner::new(scenario, scenario.admm)?;
            for req in req_rx {
                let (plan, record) = planner.solve(&req);
                if let Ok(plan) = plan {
                    slot_ref.publish(plan);
                }
                busy_ref.store(false, Ordering::Release);
                if rec_tx.send(record).is_err() {
                    break;
                }
            }
            Ok(())
        });

        let mut log = SimLog {
            n_eff: plant.gait.n_eff(),
            rows: Vec::with_capacity(ticks),
            ..SimLog::default()
        };
        let mut failures = 0;
        let mut last_wall = 0.0;
        let drain = |log: &mut SimLog, failures: &mut usize, last_wall: &mut f64| -> Result<()> {
            for record in rec_rx.try_iter() {
                if record.error.is_some() {
                    *failures += 1;
                    check_failures(record.t, *failures, &record)?;
                } else {
                    *failures = 0;
                    *last_wall = record.wall_us;
                }
                log.replans.push(record);
            }
            Ok(())
        };

        // the first plan is awaited before the clock starts
        busy.store(true, Ordering::Release);
        req_tx.send(plant.request(0.0)).ok();
        while slot.version() == 0 {
            if worker.is_finished() {
                break;
            }
            let record = rec_rx.recv_timeout(Duration::from_millis(1));
            if let Ok(record) = record {
                if record.error.is_some() {
                    failures += 1;
                    check_failures(0.0, failures, &record)?;
                    busy.store(true, Ordering::Release);
                    req_tx.send(plant.request(0.0)).ok();
                } else {
                    last_wall = record.wall_us;
                }
                log.replans.push(record);
            }
        }

        let clock = Instant::now();
        let result = (|| -> Result<()> {
            for i in 0..ticks {
                let t = i as f64 * dt;
                let deadline = Duration::from_secs_f64(t);
                if let Some(wait) = deadline.checked_sub(clock.elapsed()) {
                    thread::sleep(wait);
                }
                drain(&mut log, &mut failures, &mut last_wall)?;
                if i > 0 && i % every == 0 && !busy.swap(true, Ordering::AcqRel) {
                    req_tx.send(plant.request(t)).ok();
                }
                let plan = slot.latest().ok_or_else(|| Error::Aborted {
                    t,
                    failures,
                    last: "no plan available".into(),
                })?;
                let state = plant.state;
                let (forces, exhausted) = plant.step(t, &plan, t - plan.t_plan)?;
                log.exhausted_ticks += exhausted as usize;
                log.rows.push(LogRow {
                    t,
                    state,
                    forces,
                    v_des: cfg.v_des_at(t, &scenario.nominal.v_des),
                    violation: plan.violation,
                    solve_us: last_wall,
                    cost: plan.objective,
                });
            }
            Ok(())
        })();
        drop(req_tx);
        let worker_result = worker.join().expect("planner thread panicked");
        result?;
        worker_result?;
        drain(&mut log, &mut failures, &mut last_wall)?;
        log.max_box_excursion = plant.excursion;
        Ok(log)
    })
}
