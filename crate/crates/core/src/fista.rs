//! Accelerated proximal gradient for strictly convex quadratics.
//!
//! Minimizes `½ xᵀHx + qᵀx + I(x)` where `I` is the indicator of a set with a
//! closed-form projection: a box, a product of friction cones, or nothing.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm, CsrMatrix, LinearOperator};

/// `½ xᵀHx + qᵀx`.
#[derive(Debug, Clone)]
pub struct ConvexSubproblem<H: LinearOperator = CsrMatrix> {
    pub hessian: H,
    /// Linear term `q`; the gradient is `Hx + q`.
    pub linear: DVector<f64>,
}

impl<H: LinearOperator> ConvexSubproblem<H> {
    pub fn new(hessian: H, linear: DVector<f64>) -> Result<Self> {
        if hessian.dim() != linear.len() {
            return Err(Error::DimensionMismatch {
                what: "subproblem linear term",
                expected: hessian.dim(),
                got: linear.len(),
            });
        }
        Ok(Self { hessian, linear })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut hx = vec![0.0; x.len()];
        self.hessian.apply(x, &mut hx);
        0.5 * dot(x, &hx) + dot(self.linear.as_slice(), x)
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        self.hessian.apply(x, g.as_mut_slice());
        g += &self.linear;
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProxOperator {
    Identity,
    Box {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    /// Friction cone per consecutive `(f_x, f_y, f_z)` group. Groups flagged
    /// inactive are projected to zero.
    FrictionCone { mu: f64, active: Option<Vec<bool>> },
}

impl ProxOperator {
    pub fn boxed(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_bounds(lower.as_slice(), upper.as_slice())?;
        Ok(Self::Box { lower, upper })
    }

    pub fn friction_cone(mu: f64, active: Option<Vec<bool>>) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(invalid("mu", "must be positive"));
        }
        Ok(Self::FrictionCone { mu, active })
    }

    /// Projects `x` in place.
    pub fn apply(&self, x: &mut [f64]) {
        match self {
            Self::Identity => {}
            Self::Box { lower, upper } => {
                for ((v, &l), &u) in x.iter_mut().zip(lower.iter()).zip(upper.iter()) {
                    *v = v.max(l).min(u);
                }
            }
            Self::FrictionCone { mu, active } => {
                for (g, f) in x.chunks_exact_mut(3).enumerate() {
                    let on = active.as_ref().is_none_or(|a| a[g]);
                    let p = if on {
                        soc_project(&Vector3::new(f[0], f[1], f[2]), *mu)
                    } else {
                        Vector3::zeros()
                    };
                    f.copy_from_slice(p.as_slice());
                }
            }
        }
    }

    /// Membership test with absolute slack `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            Self::Identity => true,
            Self::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol),
            Self::FrictionCone { mu, active } => {
                x.chunks_exact(3).enumerate().all(|(g, f)| {
                    if active.as_ref().is_none_or(|a| a[g]) {
                        f[0].hypot(f[1]) <= mu * f[2] + tol
                    } else {
                        f.iter().all(|&v| v == 0.0)
                    }
                })
            }
        }
    }
}

fn check_bounds(lower: &[f64], upper: &[f64]) -> Result<()> {
    if lower.len() != upper.len() {
        return Err(Error::DimensionMismatch {
            what: "box bounds",
            expected: lower.len(),
            got: upper.len(),
        });
    }
    for (i, (l, u)) in lower.iter().zip(upper).enumerate() {
        if !(l <= u) {
            return Err(Error::InvalidBounds { index: i });
        }
    }
    Ok(())
}

/// Elementwise clamp of `x` to `[lower, upper]`.
pub fn box_project(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> Result<DVector<f64>> {
    check_bounds(lower.as_slice(), upper.as_slice())?;
    if x.len() != lower.len() {
        return Err(Error::DimensionMismatch {
            what: "box projection input",
            expected: lower.len(),
            got: x.len(),
        });
    }
    Ok(x.zip_zip_map(lower, upper, |v, l, u| v.max(l).min(u)))
}

/// Euclidean projection onto `{f : ‖(f_x, f_y)‖ ≤ μ f_z}`.
///
/// Points in the polar cone map to the apex; points outside both cones land
/// on the boundary ray through their tangential direction, with
/// `f_z' = (μ‖f_xy‖ + f_z)/(μ² + 1)` and the tangential part scaled by
/// `μ f_z' / ‖f_xy‖`.
pub fn soc_project(f: &Vector3<f64>, mu: f64) -> Vector3<f64> {
    let tangential = f.x.hypot(f.y);
    if tangential <= mu * f.z {
        return *f;
    }
    if mu * tangential <= -f.z {
        return Vector3::zeros();
    }
    // tangential > 0 here: a zero tangential part falls in one of the cases above
    let normal = (mu * tangential + f.z) / (mu * mu + 1.0);
    let scale = mu * normal / tangential;
    Vector3::new(scale * f.x, scale * f.y, normal)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FistaConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Initial step parameter `L` when no warm start is given.
    pub l0: f64,
    /// Growth factor applied to `L` on a failed decrease test.
    pub beta_ls: f64,
    pub warm_start_l: Option<f64>,
}

impl Default for FistaConfig {
    fn default() -> Self {
        Self {
            max_iter: 3000,
            grad_tol: 1e-5,
            l0: 1e-3,
            beta_ls: 2.0,
            warm_start_l: None,
        }
    }
}

impl FistaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(invalid("max_iter", "must be at least 1"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(invalid("grad_tol", "must be positive"));
        }
        if !(self.l0 > 0.0) {
            return Err(invalid("l0", "must be positive"));
        }
        if !(self.beta_ls > 1.0) {
            return Err(invalid("beta_ls", "must exceed 1"));
        }
        if let Some(l) = self.warm_start_l {
            if !(l > 0.0 && l.is_finite()) {
                return Err(invalid("warm_start_l", "must be positive and finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FistaResult {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub accepted_l: f64,
}

/// One line of the optional per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FistaTrace {
    pub iteration: usize,
    pub objective: f64,
    pub step_l: f64,
}

/// Outcome of a backtracking search from `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktrackStep {
    pub l: f64,
    pub x: DVector<f64>,
    pub trials: usize,
}

/// Smallest `L · beta_ls^i` for which `x = prox(y − ∇f(y)/L)` satisfies
/// `f(x) ≤ f(y) + ∇f(y)ᵀ(x − y) + L/2 ‖x − y‖²`.
pub fn backtrack_step<H: LinearOperator>(
    problem: &ConvexSubproblem<H>,
    prox: &ProxOperator,
    y: &DVector<f64>,
    grad: &DVector<f64>,
    l: f64,
    beta_ls: f64,
) -> BacktrackStep {
    let n = y.len();
    let mut ws = Workspace::new(n);
    let (l, trials) = backtrack_into(problem, prox, y.as_slice(), grad.as_slice(), l, beta_ls, &mut ws);
    BacktrackStep {
        l,
        x: DVector::from_column_slice(&ws.x_next),
        trials,
    }
}

struct Workspace {
    x_next: Vec<f64>,
    diff: Vec<f64>,
    h_diff: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            x_next: vec![0.0; n],
            diff: vec![0.0; n],
            h_diff: vec![0.0; n],
        }
    }
}

/// Leaves the accepted point in `ws.x_next` and `H(x_next − y)` in `ws.h_diff`.
fn backtrack_into<H: LinearOperator>(
    problem: &ConvexSubproblem<H>,
    prox: &ProxOperator,
    y: &[f64],
    grad: &[f64],
    mut l: f64,
    beta_ls: f64,
    ws: &mut Workspace,
) -> (f64, usize) {
    let mut trials = 0;
    loop {
        trials += 1;
        for ((xn, &yi), &gi) in ws.x_next.iter_mut().zip(y).zip(grad) {
            *xn = yi - gi / l;
        }
        prox.apply(&mut ws.x_next);
        for ((d, &xn), &yi) in ws.diff.iter_mut().zip(&ws.x_next).zip(y) {
            *d = xn - yi;
        }
        problem.hessian.apply(&ws.diff, &mut ws.h_diff);
        // For a quadratic the decrease test reduces to dᵀHd ≤ L dᵀd.
        let curvature = dot(&ws.diff, &ws.h_diff);
        let sq = dot(&ws.diff, &ws.diff);
        if curvature <= l * sq * (1.0 + 1e-12) || sq == 0.0 || !curvature.is_finite() {
            return (l, trials);
        }
        l *= beta_ls;
    }
}

pub fn fista_minimize<H: LinearOperator>(
    problem: &ConvexSubproblem<H>,
    prox: &ProxOperator,
    x0: &DVector<f64>,
    cfg: &FistaConfig,
) -> Result<FistaResult> {
    fista_minimize_traced(problem, prox, x0, cfg, None)
}

pub fn fista_minimize_traced<H: LinearOperator>(
    problem: &ConvexSubproblem<H>,
    prox: &ProxOperator,
    x0: &DVector<f64>,
    cfg: &FistaConfig,
    mut trace: Option<&mut dyn FnMut(FistaTrace)>,
) -> Result<FistaResult> {
    cfg.validate()?;
    let n = problem.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            what: "fista initial point",
            expected: n,
            got: x0.len(),
        });
    }
    let q = problem.linear.as_slice();

    let mut x: Vec<f64> = x0.as_slice().to_vec();
    prox.apply(&mut x);
    let mut y = x.clone();
    let mut hy = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut ws = Workspace::new(n);

    let mut t = 1.0f64;
    let mut l = cfg.warm_start_l.unwrap_or(cfg.l0);
    let mut metric = f64::INFINITY;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        // recomputed each pass: an incrementally updated H y accumulates
        // error that the momentum recursion does not damp
        problem.hessian.apply(&y, &mut hy);
        for ((g, &h), &qi) in grad.iter_mut().zip(&hy).zip(q) {
            *g = h + qi;
        }
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::Diverged {
                iteration: iterations,
            });
        }
        let (accepted, _) = backtrack_into(problem, prox, &y, &grad, l, cfg.beta_ls, &mut ws);
        l = accepted;

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        let mut step_sq = 0.0;
        let mut map_sq = 0.0;
        for i in 0..n {
            let x_new = ws.x_next[i];
            let dx = x_new - x[i];
            let dy = x_new - y[i];
            step_sq += dx * dx;
            map_sq += dy * dy;
            y[i] = x_new + momentum * dx;
            x[i] = x_new;
        }
        t = t_next;
        // L‖x_{k+1} − x_k‖ alone can vanish where the momentum reverses
        // direction; L‖x_{k+1} − y_k‖ is the gradient mapping at y_k
        metric = l * step_sq.max(map_sq).sqrt();

        if let Some(cb) = trace.as_mut() {
            let objective = problem.objective(&x);
            if !objective.is_finite() {
                return Err(Error::Diverged {
                    iteration: iterations,
                });
            }
            cb(FistaTrace {
                iteration: iterations,
                objective,
                step_l: l,
            });
        }
        if !metric.is_finite() {
            return Err(Error::Diverged {
                iteration: iterations,
            });
        }
        if metric <= cfg.grad_tol {
            break;
        }
    }

    Ok(FistaResult {
        x: DVector::from_vec(x),
        iterations,
        final_grad_norm: metric,
        accepted_l: l,
    })
}

/// Unprojected gradient norm, for diagnostics.
pub fn gradient_norm<H: LinearOperator>(problem: &ConvexSubproblem<H>, x: &DVector<f64>) -> f64 {
    norm(problem.gradient(x.as_slice()).as_slice())
}
