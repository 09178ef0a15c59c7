//! Cyclic contact schedules, Raibert footstep adaptation and nominal
//! trajectories for the state cost.

use nalgebra::{Quaternion as NaQuaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{CentroidalState, ContactPlan, StateTrajectory};

/// Effector order used by the gait presets.
pub const QUADRUPED_EFFECTORS: [&str; 4] = ["FL", "FR", "HL", "HR"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    pub stance_duration: f64,
    pub gait_duration: f64,
    pub dt: f64,
    pub n_knots: usize,
    /// Phase offset in `[0, 1)` per effector.
    pub phase_offsets: Vec<f64>,
}

impl GaitParams {
    pub fn trot() -> Self {
        Self {
            stance_duration: 0.15,
            gait_duration: 0.3,
            dt: 0.03,
            n_knots: 10,
            phase_offsets: vec![0.0, 0.5, 0.5, 0.0],
        }
    }

    pub fn jump() -> Self {
        Self {
            stance_duration: 0.2,
            gait_duration: 0.5,
            dt: 0.05,
            n_knots: 10,
            phase_offsets: vec![0.0; 4],
        }
    }

    pub fn bound() -> Self {
        Self {
            stance_duration: 0.15,
            gait_duration: 0.3,
            dt: 0.05,
            n_knots: 12,
            phase_offsets: vec![0.0, 0.0, 0.5, 0.5],
        }
    }

    /// All effectors in permanent contact.
    pub fn stand(dt: f64, n_knots: usize, n_eff: usize) -> Self {
        Self {
            stance_duration: 1.0,
            gait_duration: 1.0,
            dt,
            n_knots,
            phase_offsets: vec![0.0; n_eff],
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "trot" => Some(Self::trot()),
            "jump" => Some(Self::jump()),
            "bound" => Some(Self::bound()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stance_duration > 0.0 && self.stance_duration <= self.gait_duration) {
            return Err(invalid(
                "stance_duration",
                "must satisfy 0 < stance_duration <= gait_duration",
            ));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        if self.n_knots < 2 {
            return Err(invalid("n_knots", "must be at least 2"));
        }
        if self.phase_offsets.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(invalid("phase_offsets", "each offset must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn n_eff(&self) -> usize {
        self.phase_offsets.len()
    }

    fn duty(&self) -> f64 {
        self.stance_duration / self.gait_duration
    }

    /// Gait phase in `[0, 1)` of effector `j` at absolute time `time`.
    pub fn phase(&self, j: usize, time: f64) -> f64 {
        let raw = time / self.gait_duration + self.phase_offsets[j];
        // snap to a 1e-9 grid so knot times landing on a phase boundary are
        // classified consistently
        let snapped = (raw * 1e9).round() / 1e9;
        snapped - snapped.floor()
    }

    pub fn in_stance(&self, j: usize, time: f64) -> bool {
        self.duty() >= 1.0 || self.phase(j, time) < self.duty()
    }

    /// Start time of the stance phase active (or next to begin) at `time`.
    fn stance_start(&self, j: usize, time: f64) -> f64 {
        let phase = self.phase(j, time);
        if self.in_stance(j, time) {
            time - phase * self.gait_duration
        } else {
            time + (1.0 - phase) * self.gait_duration
        }
    }
}

/// Raibert footstep: hip position plus half-stance feedforward and a
/// velocity-error feedback term, dropped onto the ground plane.
pub fn raibert_footstep(
    hip_nominal: &Vector3<f64>,
    v_actual: &Vector3<f64>,
    v_des: &Vector3<f64>,
    stance_duration: f64,
    k_gain: f64,
) -> Vector3<f64> {
    let mut r = hip_nominal + v_actual * (stance_duration / 2.0) + (v_actual - v_des) * k_gain;
    r.z = 0.0;
    r
}

/// Inputs for building a moving-horizon contact plan.
#[derive(Debug, Clone)]
pub struct PlanRequest<'a> {
    /// Hip offsets from the CoM in the world frame, one per effector.
    pub hips: &'a [Vector3<f64>],
    pub t_elapsed: f64,
    pub com: Vector3<f64>,
    pub v_actual: Vector3<f64>,
    pub v_des: Vector3<f64>,
    pub raibert_gain: f64,
    /// Footholds of stances already in progress; reused for the first stance
    /// segment of each effector.
    pub current_footholds: Option<&'a [Option<Vector3<f64>>]>,
    /// Overrides `gait.n_knots` when set.
    pub horizon: Option<usize>,
}

/// Contact plan for a cyclic gait starting at `t_elapsed`. Each stance
/// segment gets a single Raibert foothold, held until lift-off.
pub fn make_cyclic_plan(gait: &GaitParams, req: &PlanRequest<'_>) -> Result<ContactPlan> {
    gait.validate()?;
    if req.hips.len() != gait.n_eff() {
        return Err(crate::Error::DimensionMismatch {
            what: "hip positions",
            expected: gait.n_eff(),
            got: req.hips.len(),
        });
    }
    let horizon = req.horizon.unwrap_or(gait.n_knots);
    let n = gait.n_eff();
    let mut active = vec![vec![false; n]; horizon];
    let mut positions = vec![vec![Vector3::zeros(); n]; horizon];

    for j in 0..n {
        let mut foothold: Option<Vector3<f64>> = None;
        let mut first_segment = true;
        for t in 0..horizon {
            let time = req.t_elapsed + t as f64 * gait.dt;
            if !gait.in_stance(j, time) {
                foothold = None;
                first_segment = false;
                continue;
            }
            let r = *foothold.get_or_insert_with(|| {
                let reuse = if first_segment && t == 0 {
                    req.current_footholds.and_then(|f| f.get(j).copied().flatten())
                } else {
                    None
                };
                reuse.unwrap_or_else(|| {
                    let touchdown = gait.stance_start(j, time);
                    let hip = req.com + req.v_des * (touchdown - req.t_elapsed) + req.hips[j];
                    raibert_footstep(&hip, &req.v_actual, &req.v_des, gait.stance_duration, req.raibert_gain)
                })
            });
            active[t][j] = true;
            positions[t][j] = r;
        }
    }
    ContactPlan::new(active, positions, gait.dt)
}

/// Unit quaternion stored as `[x, y, z, w]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quaternion(pub UnitQuaternion<f64>);

impl Quaternion {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    pub fn from_xyzw(x: f64, y: f64, z: f64, w: f64) -> Result<Self> {
        let q = NaQuaternion::new(w, x, y, z);
        if (q.norm() - 1.0).abs() > 1e-9 {
            return Err(invalid("quaternion", "must have unit norm"));
        }
        Ok(Self(UnitQuaternion::new_unchecked(q)))
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self(UnitQuaternion::from_scaled_axis(axis.normalize() * angle))
    }
}

impl TryFrom<[f64; 4]> for Quaternion {
    type Error = crate::Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Self::from_xyzw(v[0], v[1], v[2], v[3])
    }
}

impl From<Quaternion> for [f64; 4] {
    fn from(q: Quaternion) -> Self {
        let c = q.0.quaternion().coords;
        [c.x, c.y, c.z, c.w]
    }
}

/// `q_from ⊖ q_to`: world-frame rotation vector (shortest arc) of the
/// rotation carrying `q_from` onto `q_to`.
pub fn rotation_difference(q_from: &Quaternion, q_to: &Quaternion) -> Vector3<f64> {
    let rel = q_to.0 * q_from.0.inverse();
    let c = rel.quaternion().coords;
    // shortest arc: keep the scalar part nonnegative
    let (v, w) = if c.w < 0.0 {
        (-Vector3::new(c.x, c.y, c.z), -c.w)
    } else {
        (Vector3::new(c.x, c.y, c.z), c.w)
    };
    let s = v.norm();
    if s < 1e-12 {
        // first-order log near identity
        return v * 2.0;
    }
    v * (2.0 * s.atan2(w) / s)
}

/// Nominal angular momentum that turns the base from `q0` toward `q_des`,
/// weighted per axis.
pub fn k_nom(q0: &Quaternion, q_des: &Quaternion, w: &Vector3<f64>) -> Vector3<f64> {
    w.component_mul(&rotation_difference(q0, q_des))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalSpec {
    pub v_des: Vector3<f64>,
    pub z_des: f64,
    pub w_amom: Vector3<f64>,
    #[serde(default = "Quaternion::identity")]
    pub q0: Quaternion,
    #[serde(default = "Quaternion::identity")]
    pub q_des: Quaternion,
}

impl NominalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.z_des > 0.0) {
            return Err(invalid("z_des", "must be positive"));
        }
        if self.w_amom.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("w_amom", "weights must be nonnegative"));
        }
        Ok(())
    }
}

/// Constant-velocity reference at height `z_des` with the orientation-derived
/// angular momentum on every knot. Returns `horizon + 1` knots.
pub fn build_nominal(
    spec: &NominalSpec,
    dt: f64,
    horizon: usize,
    com0: &Vector3<f64>,
) -> Result<StateTrajectory> {
    spec.validate()?;
    let k = k_nom(&spec.q0, &spec.q_des, &spec.w_amom);
    let knots = (0..=horizon)
        .map(|t| {
            let mut c = com0 + spec.v_des * (t as f64 * dt);
            c.z = spec.z_des;
            CentroidalState::new(c, spec.v_des, k)
        })
        .collect();
    StateTrajectory::new(knots, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn hips() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.2, 0.15, 0.0),
            Vector3::new(0.2, -0.15, 0.0),
            Vector3::new(-0.2, 0.15, 0.0),
            Vector3::new(-0.2, -0.15, 0.0),
        ]
    }

    fn request(h: &[Vector3<f64>], t: f64) -> PlanRequest<'_> {
        PlanRequest {
            hips: h,
            t_elapsed: t,
            com: Vector3::new(0.0, 0.0, 0.25),
            v_actual: Vector3::zeros(),
            v_des: Vector3::zeros(),
            raibert_gain: 0.03,
            current_footholds: None,
            horizon: None,
        }
    }

    #[test]
    fn trot_pairs_diagonals() {
        let h = hips();
        let plan = make_cyclic_plan(&GaitParams::trot(), &request(&h, 0.0)).unwrap();
        for t in 0..10 {
            let first = t < 5;
            assert_eq!(plan.active[t], vec![first, !first, !first, first], "knot {t}");
        }
    }

    #[test]
    fn jump_all_or_nothing() {
        let h = hips();
        let gait = GaitParams::jump();
        let plan = make_cyclic_plan(&gait, &request(&h, 0.0)).unwrap();
        for t in 0..10 {
            let expect = (t as f64 * 0.05) / 0.5 < 0.4 - 1e-12;
            assert_eq!(plan.active[t], vec![expect; 4], "knot {t}");
        }
        assert_eq!(plan.active.iter().filter(|r| r[0]).count(), 4);
    }

    #[test]
    fn bound_front_then_hind() {
        let h = hips();
        let plan = make_cyclic_plan(&GaitParams::bound(), &request(&h, 0.0)).unwrap();
        for t in 0..12 {
            let front = (t % 6) < 3;
            assert_eq!(plan.active[t], vec![front, front, !front, !front], "knot {t}");
        }
    }

    #[test]
    fn full_duty_is_standing() {
        let h = hips();
        let gait = GaitParams {
            stance_duration: 0.3,
            ..GaitParams::trot()
        };
        let plan = make_cyclic_plan(&gait, &request(&h, 0.123)).unwrap();
        assert!(plan.active.iter().flatten().all(|&a| a));
    }

    #[test]
    fn footholds_constant_through_stance() {
        let h = hips();
        let mut req = request(&h, 0.0);
        req.v_actual = Vector3::new(0.4, 0.0, 0.0);
        req.v_des = Vector3::new(0.5, 0.0, 0.0);
        let plan = make_cyclic_plan(&GaitParams::trot(), &req).unwrap();
        for j in 0..4 {
            let pts: Vec<_> = (0..10).filter(|&t| plan.active[t][j]).map(|t| plan.positions[t][j]).collect();
            assert!(pts.windows(2).all(|w| w[0] == w[1]));
            assert!(pts.iter().all(|p| p.z == 0.0));
        }
    }

    #[test]
    fn reuses_current_footholds() {
        let h = hips();
        let held = [Some(Vector3::new(1.0, 2.0, 0.0)), None, None, Some(Vector3::new(3.0, 4.0, 0.0))];
        let mut req = request(&h, 0.0);
        req.current_footholds = Some(&held);
        let plan = make_cyclic_plan(&GaitParams::trot(), &req).unwrap();
        assert_eq!(plan.positions[4][0], Vector3::new(1.0, 2.0, 0.0));
        assert_eq!(plan.positions[0][3], Vector3::new(3.0, 4.0, 0.0));
    }

    proptest! {
        #[test]
        fn plan_is_periodic(t in 0.0..3.0f64) {
            let h = hips();
            for gait in [GaitParams::trot(), GaitParams::jump(), GaitParams::bound()] {
                let a = make_cyclic_plan(&gait, &request(&h, t)).unwrap();
                let b = make_cyclic_plan(&gait, &request(&h, t + gait.gait_duration)).unwrap();
                prop_assert_eq!(a.active, b.active);
            }
        }

        #[test]
        fn moving_horizon_shift(k in 0usize..40) {
            let h = hips();
            for gait in [GaitParams::trot(), GaitParams::jump(), GaitParams::bound()] {
                let t = k as f64 * gait.dt;
                let a = make_cyclic_plan(&gait, &request(&h, t)).unwrap();
                let b = make_cyclic_plan(&gait, &request(&h, t + gait.dt)).unwrap();
                prop_assert_eq!(&a.active[1..], &b.active[..gait.n_knots - 1]);
            }
        }

        #[test]
        fn raibert_is_affine(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, d in -1.0..1.0f64) {
            let hip = Vector3::new(0.2, 0.1, 0.3);
            let f = |va: Vector3<f64>, vd: Vector3<f64>| raibert_footstep(&hip, &va, &vd, 0.15, 0.1) - raibert_footstep(&hip, &Vector3::zeros(), &Vector3::zeros(), 0.15, 0.1);
            let v1 = Vector3::new(a, b, 0.0);
            let v2 = Vector3::new(c, d, 0.0);
            let sum = f(v1 + v2, v2 - v1);
            let split = f(v1, -v1) + f(v2, v2);
            prop_assert!((sum - split).amax() < 1e-12);
        }

        #[test]
        fn k_nom_is_odd(ax in -1.0..1.0f64, ay in -1.0..1.0f64, az in 0.1..1.0f64, angle in -3.0..3.0f64, bx in -1.0..1.0f64, b_angle in -1.0..1.0f64) {
            let q0 = Quaternion::from_axis_angle(&Vector3::new(ax, ay, az), angle);
            let q1 = Quaternion::from_axis_angle(&Vector3::new(bx, 0.3, 1.0), b_angle);
            let w = Vector3::new(1.0, 2.0, 0.5);
            let fwd = k_nom(&q0, &q1, &w);
            let back = k_nom(&q1, &q0, &w);
            prop_assert!((fwd + back).amax() < 1e-9);
            prop_assert!(k_nom(&q0, &q0, &w).amax() < 1e-12);
        }
    }

    #[test]
    fn raibert_examples() {
        let hip = Vector3::new(0.2, 0.15, 0.3);
        let r = raibert_footstep(&hip, &Vector3::zeros(), &Vector3::zeros(), 0.15, 0.03);
        assert_eq!(r, Vector3::new(0.2, 0.15, 0.0));
        let v = Vector3::new(0.5, 0.0, 0.0);
        let r = raibert_footstep(&hip, &v, &v, 0.15, 0.03);
        assert_abs_diff_eq!(r, Vector3::new(0.2375, 0.15, 0.0), epsilon = 1e-15);
        let r = raibert_footstep(&Vector3::zeros(), &Vector3::new(0.6, 0.0, 0.0), &v, 0.15, 0.1)
            - raibert_footstep(&Vector3::zeros(), &Vector3::new(0.6, 0.0, 0.0), &Vector3::new(0.6, 0.0, 0.0), 0.15, 0.1);
        assert_abs_diff_eq!(r, Vector3::new(0.01, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn k_nom_identity_and_zero_weight() {
        let q = Quaternion::from_axis_angle(&Vector3::new(0.3, 0.1, 1.0), 0.7);
        assert_eq!(k_nom(&q, &q, &Vector3::repeat(1.0)), Vector3::zeros());
        let other = Quaternion::identity();
        assert_eq!(k_nom(&q, &other, &Vector3::zeros()), Vector3::zeros());
    }

    #[test]
    fn k_nom_quarter_yaw() {
        // axis-angle oracle: the rotation from 90° yaw back to identity is
        // −90° about z
        let q0 = Quaternion::from_xyzw(0.0, 0.0, FRAC_PI_2.mul_add(0.5, 0.0).sin(), (FRAC_PI_2 / 2.0).cos()).unwrap();
        let k = k_nom(&q0, &Quaternion::identity(), &Vector3::repeat(1.0));
        assert_abs_diff_eq!(k, Vector3::new(0.0, 0.0, -FRAC_PI_2), epsilon = 1e-12);
    }

    #[test]
    fn nominal_ramp() {
        let spec = NominalSpec {
            v_des: Vector3::new(0.5, 0.0, 0.0),
            z_des: 0.25,
            w_amom: Vector3::zeros(),
            q0: Quaternion::identity(),
            q_des: Quaternion::identity(),
        };
        let x = build_nominal(&spec, 0.03, 10, &Vector3::new(0.0, 0.0, 0.3)).unwrap();
        assert_eq!(x.knots.len(), 11);
        assert_abs_diff_eq!(x.knots[9].c.x, 0.135, epsilon = 1e-15);
        assert!(x.knots.iter().all(|k| k.c.z == 0.25 && k.cdot == spec.v_des));

        let still = NominalSpec {
            v_des: Vector3::zeros(),
            ..spec
        };
        let x = build_nominal(&still, 0.03, 10, &Vector3::new(0.1, -0.2, 0.3)).unwrap();
        assert!(x.knots.iter().all(|k| k.c == Vector3::new(0.1, -0.2, 0.25)));
    }

    #[test]
    fn nominal_pitch_momentum() {
        let pitch = 10f64.to_radians();
        let spec = NominalSpec {
            v_des: Vector3::zeros(),
            z_des: 0.25,
            w_amom: Vector3::new(0.0, 2.0, 0.0),
            q0: Quaternion::from_axis_angle(&Vector3::y(), pitch),
            q_des: Quaternion::identity(),
        };
        let x = build_nominal(&spec, 0.05, 6, &Vector3::zeros()).unwrap();
        for k in &x.knots {
            assert_abs_diff_eq!(k.k, Vector3::new(0.0, -2.0 * pitch, 0.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn quaternion_json_is_xyzw() {
        let q = Quaternion::from_axis_angle(&Vector3::z(), 0.5);
        let json = serde_json::to_string(&q).unwrap();
        let arr: [f64; 4] = serde_json::from_str(&json).unwrap();
        assert_abs_diff_eq!(arr[2], 0.25f64.sin(), epsilon = 1e-15);
        assert!(serde_json::from_str::<Quaternion>("[0.0, 0.0, 0.0, 2.0]").is_err());
    }
}
