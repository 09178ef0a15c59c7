use biconmp::model::{
    build_force_system, build_state_system, dynamics_residual, rollout, CentroidalState, ComBound, ContactPlan,
    ForcePlan, ProblemSpec, StateTrajectory, StateWeights,
};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vec3(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.gen_range(-scale..scale))
}

fn random_case(rng: &mut ChaCha8Rng) -> (StateTrajectory, ForcePlan, ProblemSpec) {
    let horizon = rng.gen_range(1..8);
    let n_eff = rng.gen_range(0..5);
    let dt = rng.gen_range(0.01..0.1);
    let active = (0..horizon)
        .map(|_| (0..n_eff).map(|_| rng.gen_bool(0.6)).collect())
        .collect();
    let positions = (0..horizon)
        .map(|_| (0..n_eff).map(|_| vec3(rng, 0.5)).collect())
        .collect();
    let plan = ContactPlan::new(active, positions, dt).unwrap();
    let state = |rng: &mut ChaCha8Rng| CentroidalState::new(vec3(rng, 1.0), vec3(rng, 1.0), vec3(rng, 1.0));
    let x = StateTrajectory::new((0..=horizon).map(|_| state(rng)).collect(), dt).unwrap();
    let mut f = ForcePlan::zeros(horizon, n_eff);
    for t in 0..horizon {
        for j in 0..n_eff {
            f.set(t, j, vec3(rng, 20.0));
        }
    }
    let spec = ProblemSpec {
        mass: rng.gen_range(0.5..5.0),
        gravity: Vector3::new(0.0, 0.0, -9.81),
        mu: 0.7,
        plan,
        com_bounds: vec![ComBound::unbounded(); horizon + 1],
        x_nom: x.clone(),
        weights_x: StateWeights {
            running: [1.0; 9],
            terminal: [1.0; 9],
        },
        weights_f: [1e-3; 3],
        x_init: x.knots[0],
    };
    (x, f, spec)
}

#[test]
fn three_residual_paths_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let (x, f, spec) = random_case(&mut rng);
        let direct = dynamics_residual(&x, &f, &spec).unwrap();
        let by_state = build_state_system(&f, &spec).unwrap().residual(&x.free_vector());
        let by_force = build_force_system(&x, &spec).unwrap().residual(&f.to_flat());
        assert_eq!(direct.len(), 9 * spec.horizon());
        let tol = 1e-12 * (1.0 + direct.amax());
        assert!((&direct - &by_state).amax() <= tol, "case {case}: state path");
        assert!((&direct - &by_force).amax() <= tol, "case {case}: force path");
    }
}

#[test]
fn inactive_columns_are_empty() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (x, _, spec) = random_case(&mut rng);
        let sys = build_force_system(&x, &spec).unwrap();
        for t in 0..spec.horizon() {
            for j in 0..spec.n_eff() {
                let empty = (0..3).all(|c| sys.a.column_is_empty((t * spec.n_eff() + j) * 3 + c));
                assert_eq!(empty, !spec.plan.is_active(t, j));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rollout_has_zero_residual(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, f, spec) = random_case(&mut rng);
        let x = rollout(&f, &spec).unwrap();
        let r = dynamics_residual(&x, &f, &spec).unwrap();
        prop_assert!(r.amax() < 1e-9);
    }

    #[test]
    fn state_system_is_affine_in_forces(seed in any::<u64>(), a in -2.0..2.0f64) {
        // b(F) and A(F) are affine in F, so A(F)X − b(F) is affine in F
        // for fixed X: r(aF₁ + (1−a)F₂) = a·r(F₁) + (1−a)·r(F₂)
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, f1, spec) = random_case(&mut rng);
        let (_, mut f2, _) = random_case(&mut rng);
        f2 = if f2.horizon == f1.horizon && f2.n_eff == f1.n_eff { f2 } else { f1.clone() };
        let mix = ForcePlan::from_flat(f1.horizon, f1.n_eff, &(f1.to_flat() * a + f2.to_flat() * (1.0 - a)));
        let r = |f: &ForcePlan| build_state_system(f, &spec).unwrap().residual(&x.free_vector());
        let lhs = r(&mix);
        let rhs = r(&f1) * a + r(&f2) * (1.0 - a);
        prop_assert!((lhs - rhs).amax() < 1e-9);
    }
}
