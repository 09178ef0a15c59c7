//! Parameter sweeps behind the `bench-*` modes.

use std::time::Instant;

use biconmp::admm::AdmmSolver;
use biconmp::scenario::{PlanningContext, Scenario};
use biconmp::sim::{mpc_cost_metric, run_closed_loop, Disturbance, VelocitySegment};
use biconmp::Result;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform half-widths of the random initial-state perturbation.
pub const PERTURB_POS: f64 = 0.05;
pub const PERTURB_VEL: f64 = 0.2;
pub const PERTURB_MOM: f64 = 0.05;

pub const KNOT_COUNTS: [usize; 14] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120, 130, 140];
pub const FREQS: [f64; 6] = [2.0, 5.0, 7.0, 10.0, 20.0, 40.0];
pub const PUSH_FREQS: [f64; 5] = [5.0, 10.0, 20.0, 50.0, 100.0];

/// Tolerance used by the MPC cost and push studies; tighter than the
/// solver default so the metric is not dominated by early termination.
pub const STUDY_EPS_DYN: f64 = 1e-4;

pub const PUSH_TOL: f64 = 0.5;
pub const PUSH_MAX: f64 = 160.0;
/// Residual planar speed allowed at the end of a push trial.
pub const SETTLE_SPEED: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct KnotRow {
    pub knots: usize,
    pub mean_us: f64,
    pub std_us: f64,
    pub mean_violation: f64,
    pub converged: usize,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreqRow {
    pub replan_hz: f64,
    pub mean_cost: f64,
    pub tracking_error: f64,
    pub mean_violation: f64,
    pub failed_replans: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PushRow {
    pub replan_hz: f64,
    pub max_push: f64,
}

pub fn perturbation_note() -> String {
    format!(
        "# initial state perturbation: uniform +-{PERTURB_POS} m position, +-{PERTURB_VEL} m/s velocity, +-{PERTURB_MOM} kg m^2/s momentum"
    )
}

fn uniform3(rng: &mut ChaCha8Rng, half: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.gen_range(-half..=half))
}

/// Solve time against horizon length, `runs` random initial states per count.
pub fn bench_knots(scenario: &Scenario, knots: &[usize], runs: usize, seed: u64) -> Result<Vec<KnotRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(knots.len());
    for &n in knots {
        let mut times = Vec::with_capacity(runs);
        let mut viol = Vec::with_capacity(runs);
        let mut converged = 0;
        for _ in 0..runs {
            let mut x0 = scenario.initial_state();
            x0.c += uniform3(&mut rng, PERTURB_POS);
            x0.cdot += uniform3(&mut rng, PERTURB_VEL);
            x0.k += uniform3(&mut rng, PERTURB_MOM);
            let ctx = PlanningContext {
                v_des: scenario.nominal.v_des,
                horizon: Some(n),
                ..PlanningContext::at_rest(x0)
            };
            let spec = scenario.problem(&ctx)?;
            let mut solver = AdmmSolver::new();
            let start = Instant::now();
            let res = solver.solve(&spec, None, &scenario.admm)?;
            times.push(start.elapsed().as_secs_f64() * 1e6);
            if res.converged {
                converged += 1;
                viol.push(res.violation());
            }
        }
        let mean = times.iter().sum::<f64>() / runs as f64;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / runs.saturating_sub(1).max(1) as f64;
        let mean_violation = if viol.is_empty() {
            f64::NAN
        } else {
            viol.iter().sum::<f64>() / viol.len() as f64
        };
        rows.push(KnotRow {
            knots: n,
            mean_us: mean,
            std_us: var.sqrt(),
            mean_violation,
            converged,
            runs,
        });
    }
    Ok(rows)
}

/// Forward, stop, backward: 6 s at +0.5 m/s, 1 s at rest, 6 s at -0.5 m/s.
pub fn velocity_protocol() -> Vec<VelocitySegment> {
    vec![
        VelocitySegment {
            duration: 6.0,
            v_des: Vector3::new(0.5, 0.0, 0.0),
        },
        VelocitySegment {
            duration: 1.0,
            v_des: Vector3::zeros(),
        },
        VelocitySegment {
            duration: 6.0,
            v_des: Vector3::new(-0.5, 0.0, 0.0),
        },
    ]
}

/// Steady windows of the protocol: the first second of each moving segment
/// is treated as transient.
pub const STEADY_WINDOWS: [(f64, f64); 2] = [(1.0, 6.0), (8.0, 13.0)];

/// Horizon used for the protocol runs.
pub const PROTOCOL_KNOTS: usize = 20;

pub fn protocol_scenario(base: &Scenario) -> Scenario {
    let mut s = base.clone();
    s.mpc.velocity_schedule = velocity_protocol();
    s.mpc.scenario_duration = velocity_protocol().iter().map(|v| v.duration).sum();
    s.mpc.horizon_knots = Some(PROTOCOL_KNOTS);
    s.disturbances.clear();
    s
}

/// Mean steady-segment velocity error of one protocol log.
pub fn steady_error(log: &biconmp::sim::SimLog) -> f64 {
    STEADY_WINDOWS.iter().map(|(a, b)| log.mean_velocity_error(*a, *b)).sum::<f64>() / STEADY_WINDOWS.len() as f64
}

/// Mean MPC cost of the velocity protocol at each replanning rate.
/// Runs that abort are reported as NaN rows.
pub fn bench_freq(base: &Scenario, freqs: &[f64]) -> Vec<FreqRow> {
    freqs
        .iter()
        .map(|&hz| {
            let mut s = protocol_scenario(base);
            s.mpc.replan_hz = hz;
            let nan = FreqRow {
                replan_hz: hz,
                mean_cost: f64::NAN,
                tracking_error: f64::NAN,
                mean_violation: f64::NAN,
                failed_replans: 0,
            };
            let Ok(log) = run_closed_loop(&s) else { return nan };
            let (Ok(cost), Ok(summary)) = (mpc_cost_metric(&log), log.summary()) else { return nan };
            FreqRow {
                replan_hz: hz,
                mean_cost: cost,
                tracking_error: steady_error(&log),
                mean_violation: summary.mean_violation,
                failed_replans: summary.failed_replans,
            }
        })
        .collect()
}

/// Push template: the scenario's first disturbance, or a lateral push
/// 1 s into a 3 s run lasting 0.3 s.
pub fn push_template(base: &Scenario) -> (Disturbance, f64) {
    match base.disturbances.first() {
        Some(d) => (*d, base.mpc.scenario_duration),
        None => (
            Disturbance {
                start: 1.0,
                duration: 0.3,
                force: Vector3::new(0.0, 1.0, 0.0),
                direction_deg: None,
                offset: None,
            },
            3.0,
        ),
    }
}

/// Whether the controller survives a push of `magnitude` newtons along the
/// template direction: no solver abort, the CoM never leaves the kinematic
/// box of its stance feet, and the planar speed settles below
/// [`SETTLE_SPEED`] by the end of the run.
pub fn push_recovered(base: &Scenario, hz: f64, magnitude: f64) -> bool {
    let (template, duration) = push_template(base);
    let mut s = base.clone();
    s.mpc.replan_hz = hz;
    s.mpc.scenario_duration = duration;
    s.mpc.velocity_schedule.clear();
    let (force, _) = template.wrench();
    let dir = if force.norm() > 0.0 { force / force.norm() } else { Vector3::y() };
    s.disturbances = vec![Disturbance {
        force: dir * magnitude,
        direction_deg: None,
        ..template
    }];
    match run_closed_loop(&s) {
        Ok(log) => {
            let end = log.rows.last().map(|r| r.state.cdot.xy().norm()).unwrap_or(f64::INFINITY);
            log.max_box_excursion <= 0.0 && end < SETTLE_SPEED
        }
        Err(_) => false,
    }
}

/// Bisection for the largest recoverable push in `[0, PUSH_MAX]`.
/// NaN when even the unperturbed run fails.
pub fn max_recoverable_push(base: &Scenario, hz: f64) -> f64 {
    if !push_recovered(base, hz, 0.0) {
        return f64::NAN;
    }
    let (mut lo, mut hi) = (0.0, PUSH_MAX);
    if push_recovered(base, hz, hi) {
        return hi;
    }
    while hi - lo > PUSH_TOL {
        let mid = 0.5 * (lo + hi);
        if push_recovered(base, hz, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn bench_push(base: &Scenario, freqs: &[f64]) -> Vec<PushRow> {
    freqs
        .iter()
        .map(|&hz| PushRow {
            replan_hz: hz,
            max_push: max_recoverable_push(base, hz),
        })
        .collect()
}

/// Least-squares line through `(x, y)`: slope, intercept and R².
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    (slope, intercept, 1.0 - ss_res / syy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_has_unit_r2() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let (m, c, r2) = linear_fit(&x, &y);
        assert!((m - 2.0).abs() < 1e-12 && (c - 1.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn r2_of_known_scatter() {
        // by hand: slope 1, intercept 0, residuals (1, -1, -1, 1), ss_tot 9
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 0.0, 1.0, 4.0];
        let (m, c, r2) = linear_fit(&x, &y);
        assert!((m - 1.0).abs() < 1e-12);
        assert!(c.abs() < 1e-12);
        assert!((r2 - (1.0 - 4.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn protocol_lasts_thirteen_seconds() {
        let s = protocol_scenario(&Scenario::trot());
        assert_eq!(s.mpc.scenario_duration, 13.0);
        assert_eq!(s.mpc.horizon_knots, Some(PROTOCOL_KNOTS));
    }
}
