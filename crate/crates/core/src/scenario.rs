//! Scenario documents: robot, gait, nominal motion, solver and MPC settings in
//! one JSON file, plus the glue that turns them into a [`ProblemSpec`].

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::admm::AdmmConfig;
use crate::error::{invalid, Result};
use crate::gait::{build_nominal, make_cyclic_plan, GaitParams, NominalSpec, PlanRequest, Quaternion};
use crate::model::{CentroidalState, ComBound, ContactPlan, ProblemSpec, StateWeights};
use crate::sim::{Disturbance, MpcConfig};

/// A gait given either by preset name or by explicit parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GaitSpec {
    Named(String),
    Params(GaitParams),
}

impl GaitSpec {
    pub fn resolve(&self) -> Result<GaitParams> {
        let gait = match self {
            GaitSpec::Named(name) => GaitParams::by_name(name)
                .ok_or_else(|| invalid("gait", format!("unknown gait preset `{name}`")))?,
            GaitSpec::Params(p) => p.clone(),
        };
        gait.validate()?;
        Ok(gait)
    }
}

/// Kinematic box on the CoM: centered over the stance feet at `height`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComBox {
    pub half_extent: Vector3<f64>,
    /// Box center height above the ground; the nominal height when unset.
    pub height: Option<f64>,
    pub enabled: bool,
}

impl Default for ComBox {
    fn default() -> Self {
        Self {
            half_extent: Vector3::new(0.15, 0.12, 0.15),
            height: None,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub x_running: [f64; 9],
    pub x_terminal: [f64; 9],
    pub f: [f64; 3],
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            x_running: [1.0, 1.0, 10.0, 1.0, 1.0, 1.0, 0.1, 0.1, 0.1],
            x_terminal: [1.0, 1.0, 10.0, 10.0, 10.0, 10.0, 0.1, 0.1, 0.1],
            f: [1e-3, 1e-3, 1e-4],
        }
    }
}

fn default_gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -9.81)
}

fn default_raibert_gain() -> f64 {
    0.03
}

/// Hip offsets (FL, FR, HL, HR) of a small quadruped.
pub fn quadruped_hips() -> Vec<Vector3<f64>> {
    vec![
        Vector3::new(0.19, 0.15, 0.0),
        Vector3::new(0.19, -0.15, 0.0),
        Vector3::new(-0.19, 0.15, 0.0),
        Vector3::new(-0.19, -0.15, 0.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub mass: f64,
    #[serde(default = "default_gravity")]
    pub gravity: Vector3<f64>,
    pub mu: f64,
    pub gait: GaitSpec,
    pub nominal: NominalSpec,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
    #[serde(default)]
    pub com_box: ComBox,
    /// Hip offsets from the CoM, one per effector.
    #[serde(default = "quadruped_hips")]
    pub effectors: Vec<Vector3<f64>>,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub admm: AdmmConfig,
    #[serde(default = "default_raibert_gain")]
    pub raibert_gain: f64,
    /// Initial state; at rest above the origin at the nominal height if unset.
    #[serde(default)]
    pub init: Option<CentroidalState>,
}

/// Where and when to pose one planning problem.
#[derive(Debug, Clone)]
pub struct PlanningContext<'a> {
    pub t_elapsed: f64,
    pub state: CentroidalState,
    pub v_des: Vector3<f64>,
    /// Current base orientation; the nominal `q0` when unset.
    pub orientation: Option<Quaternion>,
    pub footholds: Option<&'a [Option<Vector3<f64>>]>,
    pub horizon: Option<usize>,
}

impl<'a> PlanningContext<'a> {
    pub fn at_rest(state: CentroidalState) -> Self {
        Self {
            t_elapsed: 0.0,
            state,
            v_des: Vector3::zeros(),
            orientation: None,
            footholds: None,
            horizon: None,
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Self = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(invalid("mass", "must be positive"));
        }
        if !(self.mu > 0.0) {
            return Err(invalid("mu", "must be positive"));
        }
        let gait = self.gait.resolve()?;
        if gait.n_eff() != self.effectors.len() {
            return Err(invalid(
                "effectors",
                format!("gait has {} phase offsets but {} effectors are given", gait.n_eff(), self.effectors.len()),
            ));
        }
        self.nominal.validate()?;
        self.admm.validate()?;
        self.mpc.validate(&gait)?;
        if self.com_box.half_extent.iter().any(|h| !(*h > 0.0)) {
            return Err(invalid("com_box.half_extent", "must be positive"));
        }
        for d in &self.disturbances {
            d.validate()?;
        }
        Ok(())
    }

    pub fn gait_params(&self) -> Result<GaitParams> {
        self.gait.resolve()
    }

    pub fn initial_state(&self) -> CentroidalState {
        self.init.unwrap_or_else(|| {
            CentroidalState::new(Vector3::new(0.0, 0.0, self.nominal.z_des), Vector3::zeros(), Vector3::zeros())
        })
    }

    pub fn state_weights(&self) -> StateWeights {
        StateWeights {
            running: self.weights.x_running,
            terminal: self.weights.x_terminal,
        }
    }

    /// Planning problem for the given context: moving-horizon contact plan,
    /// nominal trajectory from the commanded velocity and CoM boxes.
    pub fn problem(&self, ctx: &PlanningContext<'_>) -> Result<ProblemSpec> {
        if !ctx.state.is_finite() {
            return Err(crate::Error::NonFiniteState);
        }
        let gait = self.gait_params()?;
        let request = PlanRequest {
            hips: &self.effectors,
            t_elapsed: ctx.t_elapsed,
            com: ctx.state.c,
            v_actual: ctx.state.cdot,
            v_des: ctx.v_des,
            raibert_gain: self.raibert_gain,
            current_footholds: ctx.footholds,
            horizon: ctx.horizon,
        };
        let plan = make_cyclic_plan(&gait, &request)?;
        let nominal = NominalSpec {
            v_des: ctx.v_des,
            q0: ctx.orientation.unwrap_or(self.nominal.q0),
            ..self.nominal.clone()
        };
        let x_nom = build_nominal(&nominal, gait.dt, plan.horizon, &ctx.state.c)?;
        let com_bounds = self.com_bounds(&plan, &x_nom.knots.iter().map(|k| k.c).collect::<Vec<_>>());
        let spec = ProblemSpec {
            mass: self.mass,
            gravity: self.gravity,
            mu: self.mu,
            plan,
            com_bounds,
            x_nom,
            weights_x: self.state_weights(),
            weights_f: self.weights.f,
            x_init: ctx.state,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Where the stance feet of step `t` put the CoM: the mean of each
    /// foothold minus its hip offset.
    pub fn stance_anchor(&self, plan: &ContactPlan, t: usize) -> Option<Vector3<f64>> {
        let (sum, n) = (0..plan.n_eff)
            .filter(|&j| plan.active[t][j])
            .fold((Vector3::zeros(), 0usize), |(s, n), j| {
                (s + plan.positions[t][j] - self.effectors[j], n + 1)
            });
        (n > 0).then(|| sum / n as f64)
    }

    /// Box per knot `0..=T`, centered over the stance anchor of the step that
    /// ends at that knot; over the nominal CoM before the first stance.
    pub fn com_bounds(&self, plan: &ContactPlan, nominal_com: &[Vector3<f64>]) -> Vec<ComBound> {
        if !self.com_box.enabled {
            return vec![ComBound::unbounded(); plan.horizon + 1];
        }
        let height = self.com_box.height.unwrap_or(self.nominal.z_des);
        let mut last: Option<Vector3<f64>> = None;
        (0..=plan.horizon)
            .map(|t| {
                let step = t.saturating_sub(1).min(plan.horizon.saturating_sub(1));
                if let Some(c) = self.stance_anchor(plan, step) {
                    last = Some(c);
                }
                let center_xy = match last {
                    Some(c) => c,
                    None => nominal_com[t],
                };
                ComBound::centered(Vector3::new(center_xy.x, center_xy.y, height), self.com_box.half_extent)
            })
            .collect()
    }

    /// Four feet in permanent contact under the hips, balancing a point mass
    /// at rest. Small horizon, suitable for checks against a KKT solve.
    pub fn hover() -> Self {
        Self {
            mass: 1.0,
            gravity: default_gravity(),
            mu: 0.8,
            gait: GaitSpec::Params(GaitParams::stand(0.1, 2, 4)),
            nominal: NominalSpec {
                v_des: Vector3::zeros(),
                z_des: 0.25,
                w_amom: Vector3::zeros(),
                q0: Quaternion::identity(),
                q_des: Quaternion::identity(),
            },
            mpc: MpcConfig::default(),
            disturbances: Vec::new(),
            com_box: ComBox::default(),
            effectors: quadruped_hips(),
            weights: Weights {
                x_running: [1e2; 9],
                x_terminal: [1e2; 9],
                f: [1e-5; 3],
            },
            admm: AdmmConfig::default(),
            raibert_gain: default_raibert_gain(),
            init: None,
        }
    }

    /// Standing quadruped, 2.5 kg, sized for closed-loop runs.
    pub fn stand() -> Self {
        let mut s = Self::preset_base(GaitParams::stand(0.05, 10, 4));
        s.mpc.scenario_duration = 2.0;
        s
    }

    pub fn trot() -> Self {
        Self::preset_base(GaitParams::trot())
    }

    pub fn jump() -> Self {
        Self::preset_base(GaitParams::jump())
    }

    pub fn bound() -> Self {
        Self::preset_base(GaitParams::bound())
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "hover" => Some(Self::hover()),
            "stand" => Some(Self::stand()),
            "trot" => Some(Self::trot()),
            "jump" => Some(Self::jump()),
            "bound" => Some(Self::bound()),
            _ => None,
        }
    }

    fn preset_base(gait: GaitParams) -> Self {
        Self {
            mass: 2.5,
            gravity: default_gravity(),
            mu: 0.8,
            gait: GaitSpec::Params(gait),
            nominal: NominalSpec {
                v_des: Vector3::zeros(),
                z_des: 0.25,
                w_amom: Vector3::repeat(0.2),
                q0: Quaternion::identity(),
                q_des: Quaternion::identity(),
            },
            mpc: MpcConfig::default(),
            disturbances: Vec::new(),
            com_box: ComBox::default(),
            effectors: quadruped_hips(),
            weights: Weights::default(),
            admm: AdmmConfig::default(),
            raibert_gain: default_raibert_gain(),
            init: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_json() {
        for name in ["hover", "stand", "trot", "jump", "bound"] {
            let s = Scenario::preset(name).unwrap();
            s.validate().unwrap();
            let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
            assert_eq!(back, s, "{name}");
        }
    }

    #[test]
    fn minimal_document_uses_defaults() {
        let s = Scenario::from_json(
            r#"{"mass": 2.0, "mu": 0.6, "gait": "trot",
                "nominal": {"v_des": [0.5, 0, 0], "z_des": 0.3, "w_amom": [0, 0, 0]}}"#,
        )
        .unwrap();
        assert_eq!(s.gravity, Vector3::new(0.0, 0.0, -9.81));
        assert_eq!(s.gait_params().unwrap(), GaitParams::trot());
        assert_eq!(s.effectors.len(), 4);
        assert_eq!(s.initial_state().c.z, 0.3);
    }

    #[test]
    fn missing_mass_names_the_field() {
        let err = Scenario::from_json(
            r#"{"mu": 0.6, "gait": "trot", "nominal": {"v_des": [0, 0, 0], "z_des": 0.3, "w_amom": [0, 0, 0]}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("mass"), "{err}");
    }

    #[test]
    fn unknown_gait_rejected() {
        let mut s = Scenario::trot();
        s.gait = GaitSpec::Named("gallop".into());
        assert!(s.validate().unwrap_err().to_string().contains("gallop"));
    }

    #[test]
    fn hover_problem_shape() {
        let s = Scenario::hover();
        let spec = s.problem(&PlanningContext::at_rest(s.initial_state())).unwrap();
        assert_eq!(spec.horizon(), 2);
        assert_eq!(spec.n_eff(), 4);
        assert!(spec.plan.active.iter().flatten().all(|&a| a));
        assert!(spec.plan.active_centroid(0).unwrap().norm() < 1e-12);
        assert!(s.stance_anchor(&spec.plan, 0).unwrap().norm() < 1e-12);
        for b in &spec.com_bounds {
            assert!(b.lower.z < 0.25 && b.upper.z > 0.25);
        }
    }

    #[test]
    fn flight_boxes_follow_last_stance() {
        let s = Scenario::jump();
        let ctx = PlanningContext {
            v_des: Vector3::new(0.5, 0.0, 0.0),
            ..PlanningContext::at_rest(s.initial_state())
        };
        let spec = s.problem(&ctx).unwrap();
        let stance = s.stance_anchor(&spec.plan, 3).unwrap();
        for t in 5..=10 {
            assert_eq!(spec.com_bounds[t].lower.x, stance.x - s.com_box.half_extent.x);
        }
    }
}
