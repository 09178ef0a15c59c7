//! ADMM over the force and state subproblems of the centroidal problem.
//!
//! Each outer iteration minimizes
//! `Φ(F) + ρ/2 ‖A(X)F − b(X) + P‖² + I(F)` with friction-cone projections,
//! then `Φ(X) + ρ/2 ‖A(F)X − b(F) + P‖² + I(X)` with CoM box projections,
//! and finally updates the scaled dual `P ← P + A(F)X − b(F)`.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fista::{fista_minimize, ConvexSubproblem, FistaConfig, ProxOperator};
use crate::model::{
    build_force_system, build_state_system, dynamics_residual, BiAffineSystem, ForcePlan,
    ProblemSpec, StateTrajectory,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    pub rho: f64,
    pub eps_dyn: f64,
    pub max_iter: usize,
    pub inner: FistaConfig,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 100.0,
            eps_dyn: 1e-3,
            max_iter: 50,
            inner: FistaConfig::default(),
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(invalid("rho", "must be positive"));
        }
        if !(self.eps_dyn >= 0.0) {
            return Err(invalid("eps_dyn", "must be nonnegative"));
        }
        if self.max_iter < 1 {
            return Err(invalid("max_iter", "must be at least 1"));
        }
        self.inner.validate()
    }
}

/// Starting point for the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmInit {
    pub x: StateTrajectory,
    pub f: ForcePlan,
    pub p: DVector<f64>,
}

/// One JSON-lines trace record per outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iter: usize,
    pub violation: f64,
    pub inner_iters_f: usize,
    pub inner_iters_x: usize,
    pub elapsed_us: u64,
}

#[derive(Debug, Clone)]
pub struct AdmmResult {
    pub x: StateTrajectory,
    pub f: ForcePlan,
    pub p: DVector<f64>,
    /// `‖A(F)X − b(F)‖²` after every outer iteration.
    pub violations: Vec<f64>,
    pub trace: Vec<IterationTrace>,
    pub iterations: usize,
    pub converged: bool,
    /// `Φ(X) + Φ(F)` of the returned iterate.
    pub objective: f64,
}

impl AdmmResult {
    /// Violation of the returned iterate.
    pub fn violation(&self) -> f64 {
        self.violations
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Squared norm of the dynamics residual.
pub fn violation(x: &StateTrajectory, f: &ForcePlan, spec: &ProblemSpec) -> Result<f64> {
    Ok(dynamics_residual(x, f, spec)?.norm_squared())
}

/// Cached line-search parameters, one per subproblem kind.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepCache {
    pub force: Option<f64>,
    pub state: Option<f64>,
}

/// Outer solver. Holds the line-search warm start so that it carries over
/// between consecutive solves (e.g. MPC cycles).
#[derive(Debug, Clone, Default)]
pub struct AdmmSolver {
    pub cache: StepCache,
    /// Disable to start every FISTA call from `inner.l0`.
    pub warm_start_steps: bool,
}

pub fn admm_solve(spec: &ProblemSpec, init: Option<&AdmmInit>, cfg: &AdmmConfig) -> Result<AdmmResult> {
    AdmmSolver::new().solve(spec, init, cfg)
}

fn subproblem(
    sys: &BiAffineSystem,
    weights: &DVector<f64>,
    target: Option<&DVector<f64>>,
    dual: &DVector<f64>,
    rho: f64,
) -> ConvexSubproblem {
    let hessian = sys.a.gram_plus_diagonal(rho, &(weights * 2.0));
    let mut linear = sys.a.tr_mul_vec(&(&sys.b - dual)) * -rho;
    if let Some(target) = target {
        linear -= weights.component_mul(target) * 2.0;
    }
    ConvexSubproblem { hessian, linear }
}

impl AdmmSolver {
    pub fn new() -> Self {
        Self {
            cache: StepCache::default(),
            warm_start_steps: true,
        }
    }

    fn inner_config(&self, base: &FistaConfig, cached: Option<f64>) -> FistaConfig {
        FistaConfig {
            warm_start_l: if self.warm_start_steps {
                cached.or(base.warm_start_l)
            } else {
                base.warm_start_l
            },
            ..*base
        }
    }

    pub fn solve(
        &mut self,
        spec: &ProblemSpec,
        init: Option<&AdmmInit>,
        cfg: &AdmmConfig,
    ) -> Result<AdmmResult> {
        spec.validate()?;
        cfg.validate()?;
        let start = Instant::now();
        let horizon = spec.horizon();
        let n_eff = spec.n_eff();
        let dt = spec.dt();

        let (mut x, mut f, mut p) = match init {
            Some(init) => {
                if init.p.len() != spec.state_dim() {
                    return Err(Error::DimensionMismatch {
                        what: "initial dual",
                        expected: spec.state_dim(),
                        got: init.p.len(),
                    });
                }
                (init.x.clone(), init.f.clone(), init.p.clone())
            }
            None => (
                spec.x_nom.clone(),
                ForcePlan::zeros(horizon, n_eff),
                DVector::zeros(spec.state_dim()),
            ),
        };
        if x.knots.len() != horizon + 1 {
            return Err(Error::DimensionMismatch {
                what: "initial state trajectory",
                expected: horizon + 1,
                got: x.knots.len(),
            });
        }
        if f.horizon != horizon || f.n_eff != n_eff {
            return Err(Error::DimensionMismatch {
                what: "initial force plan",
                expected: horizon * n_eff,
                got: f.forces.len(),
            });
        }
        x.knots[0] = spec.x_init;
        x.dt = dt;

        let w_x = spec.state_weight_diagonal();
        let w_f = spec.force_weight_diagonal();
        let x_nom = spec.x_nom.free_vector();
        let (lower, upper) = spec.state_bounds();
        let state_prox = ProxOperator::boxed(lower, upper)?;
        let active: Vec<bool> = spec.plan.active.iter().flatten().copied().collect();
        let force_prox = ProxOperator::friction_cone(spec.mu, Some(active))?;

        let mut violations = Vec::with_capacity(cfg.max_iter);
        let mut trace = Vec::with_capacity(cfg.max_iter);
        let mut best: Option<(f64, StateTrajectory, ForcePlan, DVector<f64>)> = None;
        let mut converged = false;

        for k in 0..cfg.max_iter {
            let wrap = |subproblem: &'static str| {
                move |e: Error| Error::InnerSolver {
                    subproblem,
                    iteration: k,
                    source: Box::new(e),
                }
            };

            let force_sys = build_force_system(&x, spec)?;
            let force_qp = subproblem(&force_sys, &w_f, None, &p, cfg.rho);
            let force_cfg = self.inner_config(&cfg.inner, self.cache.force);
            let force_sol = fista_minimize(&force_qp, &force_prox, &f.to_flat(), &force_cfg)
                .map_err(wrap("force"))?;
            self.cache.force = Some(force_sol.accepted_l);
            f = ForcePlan::from_flat(horizon, n_eff, &force_sol.x);

            let state_sys = build_state_system(&f, spec)?;
            let state_qp = subproblem(&state_sys, &w_x, Some(&x_nom), &p, cfg.rho);
            let state_cfg = self.inner_config(&cfg.inner, self.cache.state);
            let state_sol = fista_minimize(&state_qp, &state_prox, &x.free_vector(), &state_cfg)
                .map_err(wrap("state"))?;
            self.cache.state = Some(state_sol.accepted_l);
            x = StateTrajectory::from_free(spec.x_init, &state_sol.x, dt);

            let residual = state_sys.residual(&state_sol.x);
            p += &residual;
            let v = residual.norm_squared();
            if !v.is_finite() {
                return Err(wrap("state")(Error::Diverged {
                    iteration: state_sol.iterations,
                }));
            }
            violations.push(v);
            trace.push(IterationTrace {
                iter: k,
                violation: v,
                inner_iters_f: force_sol.iterations,
                inner_iters_x: state_sol.iterations,
                elapsed_us: start.elapsed().as_micros() as u64,
            });
            if best.as_ref().is_none_or(|b| v < b.0) {
                best = Some((v, x.clone(), f.clone(), p.clone()));
            }
            if v <= cfg.eps_dyn {
                converged = true;
                break;
            }
        }

        let (_, x, f, p) = best.expect("at least one outer iteration runs");
        let objective = spec.state_cost(&x) + spec.force_cost(&f);
        Ok(AdmmResult {
            iterations: violations.len(),
            x,
            f,
            p,
            violations,
            trace,
            converged,
            objective,
        })
    }
}
