use std::f64::consts::PI;

use hamfield::boundary::{
    classify_theory, generating_function_check, solve_dirichlet, Classification, ShootingConfig, TheoryVerdict,
};
use hamfield::examples::{make_cotangent_lift, make_free_particle, make_pendulum, make_sphere_geodesics, VectorField};
use hamfield::integrators::integrate_flow;
use hamfield::system::action_functional;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn unit(x: f64, y: f64, z: f64) -> DVector<f64> {
    DVector::from_column_slice(&[x, y, z]).normalize()
}

#[test]
fn pendulum_has_two_branches_with_distinct_actions() {
    let sys = make_pendulum(1.0, 1.0).unwrap().system;
    let cfg = ShootingConfig::default();
    let set = solve_dirichlet(&sys, &v1(0.0), &v1(PI / 2.0), &cfg).unwrap();
    assert!(matches!(set.classification, Classification::MultipleIsolated { count } if count >= 2));
    assert!(set.isolation_stable);
    let ws: Vec<f64> = set.solutions.iter().map(|s| action_functional(&sys, &s.trajectory).unwrap()).collect();
    assert!((ws[0] - ws[1]).abs() >= 1e-3, "{ws:?}");
    // Re-integration reproduces the right endpoint.
    for s in &set.solutions {
        let f = integrate_flow(&sys, &s.u0, &s.p0, &cfg.integrator).unwrap();
        let u1 = f.trajectory.last_state().0;
        assert!(sys.config().distance(u1, &v1(PI / 2.0)) <= 10.0 * cfg.newton_tol);
    }
    // Separated solutions stay at least the deduplication radius apart.
    for i in 0..set.solutions.len() {
        for j in i + 1..set.solutions.len() {
            let d = set.solutions[i].trajectory.distance(&set.solutions[j].trajectory, sys.config());
            assert!(d >= cfg.distinctness_radius);
        }
    }
}

#[test]
fn pendulum_generating_function_identities() {
    let sys = make_pendulum(1.0, 1.0).unwrap().system;
    let cfg = ShootingConfig::default();
    for branch in 0..2 {
        let d = generating_function_check(&sys, &v1(0.0), &v1(PI / 2.0), &cfg, branch).unwrap();
        assert!(d.defect_u0 <= 1e-5 && d.defect_u1 <= 1e-5, "{d:?}");
        assert!(d.symmetry_defect <= 1e-4, "{d:?}");
    }
}

#[test]
fn pendulum_branch_count_over_random_pairs() {
    let sys = make_pendulum(1.0, 1.0).unwrap().system;
    let cfg = ShootingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..6 {
        let a: f64 = rng.gen_range(-PI..PI);
        let gap: f64 = rng.gen_range(0.1..PI - 0.1) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let set = solve_dirichlet(&sys, &v1(a), &v1(a + gap), &cfg).unwrap();
        assert!(set.solutions.len() >= 2, "{a} {gap}: {}", set.classification);
    }
}

#[test]
fn sphere_antipodes_form_a_continuum() {
    let sys = make_sphere_geodesics().system;
    let cfg = ShootingConfig::default();
    let n = unit(0.0, 0.0, 1.0);
    let set = solve_dirichlet(&sys, &n, &(-&n), &cfg).unwrap();
    match set.classification {
        Classification::Continuum { max_condition } => assert!(max_condition > 1e10),
        other => panic!("{other}"),
    }
    let set = solve_dirichlet(&sys, &n, &unit(1.0, 0.3, 0.4), &cfg).unwrap();
    assert!(matches!(set.classification, Classification::Unique | Classification::MultipleIsolated { .. }));
    assert!(set.isolation_stable);
}

#[test]
fn cotangent_lift_is_reachable_only_on_the_graph() {
    let sys = make_cotangent_lift(VectorField::constant(&[1.0])).system;
    let set = solve_dirichlet(&sys, &v1(0.0), &v1(0.5), &ShootingConfig::default()).unwrap();
    assert_eq!(set.classification, Classification::NoSolution);
}

#[test]
fn theory_classification() {
    let cfg = ShootingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<_> = (0..20).map(|_| (v1(rng.gen_range(-2.0..2.0)), v1(rng.gen_range(-2.0..2.0)))).collect();
    let free = make_free_particle(1.0).unwrap().system;
    assert_eq!(classify_theory(&free, &pairs, &cfg).unwrap().verdict, TheoryVerdict::Dirichlet);

    let pend = make_pendulum(1.0, 1.0).unwrap().system;
    let rep = classify_theory(&pend, &pairs, &cfg).unwrap();
    assert_eq!(rep.verdict, TheoryVerdict::LocallyDirichlet, "{:?}", rep.evidence);

    let sphere = make_sphere_geodesics().system;
    let n = unit(0.0, 0.0, 1.0);
    let sphere_pairs = vec![(n.clone(), unit(0.5, 0.5, 0.2)), (n.clone(), -&n)];
    let rep = classify_theory(&sphere, &sphere_pairs, &cfg).unwrap();
    assert_eq!(rep.verdict, TheoryVerdict::Neither);
    let ev = rep.evidence.unwrap();
    assert!(matches!(ev.pair.classification, Classification::Continuum { .. }));
    assert_eq!(ev.pair.u1, vec![0.0, 0.0, -1.0]);

    let lift = make_cotangent_lift(VectorField::linear(1.0, 1)).system;
    let rep = classify_theory(&lift, &[(v1(0.5), v1(0.2)), (v1(-1.0), v1(3.0))], &cfg).unwrap();
    assert_eq!(rep.verdict, TheoryVerdict::Neither);
}
