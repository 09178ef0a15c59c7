use biconmp::admm::{admm_solve, AdmmConfig, AdmmSolver};
use biconmp::fista::ProxOperator;
use biconmp::model::{build_force_system, ProblemSpec};
use biconmp::scenario::{PlanningContext, Scenario};
use nalgebra::{DMatrix, DVector};

fn hover_spec() -> ProblemSpec {
    let s = Scenario::hover();
    s.problem(&PlanningContext::at_rest(s.initial_state())).unwrap()
}

/// min FᵀW_fF s.t. A(x_nom)F = b(x_nom), via the reduced KKT system
/// `(A W⁻¹ Aᵀ) λ = b`, `F = W⁻¹ Aᵀ λ` on the rows that involve forces.
fn kkt_oracle(spec: &ProblemSpec) -> DVector<f64> {
    let sys = build_force_system(&spec.x_nom, spec).unwrap();
    let a = sys.a.to_dense();
    let rows: Vec<usize> = (0..a.nrows()).filter(|&i| a.row(i).iter().any(|v| *v != 0.0)).collect();
    let a = DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)]);
    let b = DVector::from_fn(rows.len(), |i, _| sys.b[rows[i]]);
    let w_inv = DMatrix::from_diagonal(&spec.force_weight_diagonal().map(|w| 0.5 / w));
    let schur = &a * &w_inv * a.transpose();
    let lambda = schur.svd(true, true).solve(&b, 1e-12).unwrap();
    w_inv * a.transpose() * lambda
}

#[test]
fn hover_matches_kkt_oracle_across_rho() {
    let spec = hover_spec();
    let oracle = kkt_oracle(&spec);
    let mg4 = spec.mass * 9.81 / 4.0;
    for j in 0..4 {
        assert!((oracle[3 * j + 2] - mg4).abs() < 1e-9);
    }
    for rho in [10.0, 100.0, 1000.0] {
        let cfg = AdmmConfig {
            rho,
            ..AdmmConfig::default()
        };
        let res = admm_solve(&spec, None, &cfg).unwrap();
        assert!(res.converged, "rho {rho}: {:?}", res.violations);
        assert!(res.iterations <= 50);
        assert!(res.violation() <= 1e-3);
        let f = res.f.to_flat();
        let gap = (&f - &oracle).amax();
        assert!(gap < 1e-3, "rho {rho}: gap {gap}");
        for (t, knot) in res.x.knots.iter().enumerate().skip(1) {
            let b = spec.com_bounds[t];
            assert!((0..3).all(|i| knot.c[i] >= b.lower[i] && knot.c[i] <= b.upper[i]));
            assert!((knot.c - spec.x_nom.knots[t].c).amax() < 1e-3);
        }
    }
}

#[test]
fn iterates_respect_cones_boxes_and_complementarity() {
    let s = Scenario::trot();
    let spec = s.problem(&PlanningContext::at_rest(s.initial_state())).unwrap();
    let active: Vec<bool> = spec.plan.active.iter().flatten().copied().collect();
    let cone = ProxOperator::friction_cone(spec.mu, Some(active.clone())).unwrap();
    let (lo, hi) = spec.state_bounds();
    for max_iter in 1..=6 {
        let cfg = AdmmConfig {
            max_iter,
            eps_dyn: 0.0,
            ..AdmmConfig::default()
        };
        let res = admm_solve(&spec, None, &cfg).unwrap();
        let f = res.f.to_flat();
        assert!(cone.contains(f.as_slice(), 1e-12));
        for (g, on) in active.iter().enumerate() {
            if !on {
                assert!(f.rows(3 * g, 3).iter().all(|v| *v == 0.0));
            }
        }
        let x = res.x.free_vector();
        assert!(x.iter().zip(lo.iter().zip(hi.iter())).all(|(v, (l, h))| v >= l && v <= h));
    }
}

#[test]
fn solves_are_deterministic() {
    let s = Scenario::bound();
    let spec = s.problem(&PlanningContext::at_rest(s.initial_state())).unwrap();
    let a = admm_solve(&spec, None, &AdmmConfig::default()).unwrap();
    let b = admm_solve(&spec, None, &AdmmConfig::default()).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.violations), bits(&b.violations));
    assert_eq!(bits(a.f.to_flat().as_slice()), bits(b.f.to_flat().as_slice()));
}

#[test]
fn violation_envelope_never_increases() {
    let s = Scenario::jump();
    let spec = s.problem(&PlanningContext::at_rest(s.initial_state())).unwrap();
    let cfg = AdmmConfig {
        eps_dyn: 0.0,
        ..AdmmConfig::default()
    };
    let res = admm_solve(&spec, None, &cfg).unwrap();
    assert_eq!(res.iterations, 50);
    assert!(!res.converged);
    let v = &res.violations;
    assert!(v.last().unwrap() <= v.first().unwrap());
    let mut best = f64::INFINITY;
    for x in v {
        let next = best.min(*x);
        assert!(next <= best);
        best = next;
    }
    assert_eq!(best, res.violation());
}

#[test]
fn stops_as_soon_as_tolerance_is_met() {
    let spec = hover_spec();
    let loose = AdmmConfig {
        eps_dyn: 1e3,
        ..AdmmConfig::default()
    };
    let res = admm_solve(&spec, None, &loose).unwrap();
    assert_eq!(res.iterations, 1);
    assert_eq!(res.trace.len(), 1);
    assert!(res.converged);
}

#[test]
fn step_cache_carries_between_solves() {
    let s = Scenario::trot();
    let spec = s.problem(&PlanningContext::at_rest(s.initial_state())).unwrap();
    let mut solver = AdmmSolver::new();
    let cfg = AdmmConfig::default();
    let first = solver.solve(&spec, None, &cfg).unwrap();
    assert!(solver.cache.force.is_some() && solver.cache.state.is_some());
    let cached = solver.cache;
    let second = solver.solve(&spec, None, &cfg).unwrap();
    assert!(first.converged && second.converged);
    assert!((first.objective - second.objective).abs() <= 1e-3 * first.objective.abs().max(1.0));
    // the cache only ever grows: a cached L is accepted or backtracked upward
    assert!(solver.cache.force.unwrap() >= cached.force.unwrap());
    assert!(solver.cache.state.unwrap() >= cached.state.unwrap());
}
