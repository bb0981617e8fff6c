use hamfield::examples::{make_cotangent_lift, make_free_particle, make_pendulum, make_quartic, VectorField};
use hamfield::integrators::{
    energy_drift, flow_jacobian, flow_map, integrate_flow, symplecticity_defect, FlowStatus, IntegratorConfig, Scheme,
};
use hamfield::linalg::{loglog_slope, sup_norm};
use hamfield::system::{fundamental_formula_check, TimeGrid, Trajectory};
use std::f64::consts::PI;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

/// Smooth random variation: low Fourier modes with random amplitudes.
fn random_variation(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 {
    let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    move |t| c[0] + c[1] * t + c[2] * (PI * t).sin() + c[3] * (PI * t).cos()
}

#[test]
fn fundamental_formula_on_random_pendulum_trajectories() {
    let sys = make_pendulum(1.0, 1.0).unwrap().system;
    let cfg = IntegratorConfig::with_step(1.0 / 1999.0);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..5 {
        let (u0, p0) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let chi = integrate_flow(&sys, &v1(u0), &v1(p0), &cfg).unwrap().trajectory;
        assert_eq!(chi.len(), 2000);
        let (du, dp) = (random_variation(&mut rng), random_variation(&mut rng));
        let dus: Vec<_> = chi.times().iter().map(|&t| v1(du(t))).collect();
        let dps: Vec<_> = chi.times().iter().map(|&t| v1(dp(t))).collect();
        let c = fundamental_formula_check(&sys, &chi, &dus, &dps, 1e-6).unwrap();
        assert!(c.defect <= 1e-6, "{c:?}");
    }
}

#[test]
fn fundamental_formula_defect_is_second_order_in_the_grid() {
    // Off-shell curve, so the bulk pairing is nonzero too.
    let sys = make_pendulum(1.0, 1.0).unwrap().system;
    let mut defects = Vec::new();
    let sizes = [100usize, 200, 400, 800];
    for &n in &sizes {
        let grid = TimeGrid::uniform(n).unwrap();
        let chi = Trajectory::sample(grid.clone(), |t| (v1((2.0 * t).sin()), v1(t * t))).unwrap();
        let dus: Vec<_> = grid.nodes().iter().map(|&t| v1((3.0 * t).cos())).collect();
        let dps: Vec<_> = grid.nodes().iter().map(|&t| v1(1.0 + t)).collect();
        defects.push(fundamental_formula_check(&sys, &chi, &dus, &dps, 1e-6).unwrap().defect);
    }
    let hs: Vec<f64> = sizes.iter().map(|&n| 1.0 / n as f64).collect();
    assert!((loglog_slope(&hs, &defects) - 2.0).abs() < 0.1, "{defects:?}");
}

fn end_error(scheme: Scheme, h: f64) -> f64 {
    let sys = make_pendulum(1.0, 1.0).unwrap().system;
    let cfg = IntegratorConfig { scheme, ..IntegratorConfig::with_step(h) };
    let reference = IntegratorConfig { scheme, ..IntegratorConfig::with_step(h / 16.0) };
    let a = flow_map(&sys, &v1(1.0), &v1(0.5), 0.0, 1.0, &cfg, false).unwrap();
    let b = flow_map(&sys, &v1(1.0), &v1(0.5), 0.0, 1.0, &reference, false).unwrap();
    sup_norm(&(a.u - b.u)).max(sup_norm(&(a.p - b.p)))
}

#[test]
fn both_schemes_are_second_order() {
    let hs = [0.04, 0.02, 0.01, 0.005];
    for scheme in [Scheme::ImplicitMidpoint, Scheme::StormerVerlet] {
        let errs: Vec<f64> = hs.iter().map(|&h| end_error(scheme, h)).collect();
        let slope = loglog_slope(&hs, &errs);
        assert!((slope - 2.0).abs() < 0.1, "{scheme:?}: {slope}");
    }
}

#[test]
fn energy_is_nearly_conserved() {
    let cfg = IntegratorConfig::default();
    let pend = make_pendulum(1.0, 1.0).unwrap().system;
    let free = make_free_particle(1.0).unwrap().system;
    let quartic = make_quartic(1.0).unwrap().system;
    for (sys, u, p) in [(&pend, 1.0, 0.5), (&free, 0.0, 1.0), (&quartic, 0.5, 0.1)] {
        let f = integrate_flow(sys, &v1(u), &v1(p), &cfg).unwrap();
        assert!(energy_drift(sys, &f.trajectory) <= 1e-6);
    }
}

#[test]
fn symplecticity_of_examples() {
    let cfg = IntegratorConfig::default();
    let pend = make_pendulum(1.0, 1.0).unwrap().system;
    let free = make_free_particle(1.0).unwrap().system;
    let lift = make_cotangent_lift(VectorField::linear(1.0, 1)).system;
    for sys in [&pend, &free, &lift] {
        let j = flow_jacobian(sys, &v1(0.7), &v1(-0.3), &cfg).unwrap();
        assert!(symplecticity_defect(&j).unwrap() <= 1e-9);
    }
}

#[test]
fn blow_up_time_decreases_with_initial_height() {
    let sys = make_quartic(1.0).unwrap().system;
    let cfg = IntegratorConfig::default();
    let mut last = f64::INFINITY;
    for u0 in [3.0, 4.0, 6.0, 10.0] {
        let f = integrate_flow(&sys, &v1(u0), &v1(u0 * u0 / 2.0), &cfg).unwrap();
        let FlowStatus::BlowUp { t_escape } = f.status else { panic!("{u0}: {:?}", f.status) };
        assert!(t_escape < last);
        assert!((t_escape - 2.0 / u0).abs() < 0.05, "{u0}: {t_escape}");
        last = t_escape;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flow_composes(u in -1.5f64..1.5, p in -1.5f64..1.5, s in 0.1f64..0.9) {
        let sys = make_pendulum(1.0, 1.0).unwrap().system;
        let cfg = IntegratorConfig::default();
        let whole = flow_map(&sys, &v1(u), &v1(p), 0.0, 1.0, &cfg, false).unwrap();
        let first = flow_map(&sys, &v1(u), &v1(p), 0.0, s, &cfg, false).unwrap();
        let second = flow_map(&sys, &first.u, &first.p, s, 1.0, &cfg, false).unwrap();
        // Splitting the span changes the step alignment by at most one step.
        prop_assert!(sup_norm(&(whole.u - second.u)) < 1e-5);
    }

    #[test]
    fn midpoint_flow_is_symplectic(u in -2.0f64..2.0, p in -2.0f64..2.0) {
        let sys = make_pendulum(1.0, 1.0).unwrap().system;
        let j = flow_jacobian(&sys, &v1(u), &v1(p), &IntegratorConfig::with_step(0.01)).unwrap();
        prop_assert!(symplecticity_defect(&j).unwrap() < 1e-11);
    }
}

#[test]
fn lifted_linear_flow_matches_midpoint_amplification() {
    let lift = make_cotangent_lift(VectorField::linear(1.0, 1)).system;
    for (h, tol) in [(1e-3, 3e-7), (1e-4, 1e-8)] {
        let f = integrate_flow(&lift, &v1(1.0), &v1(1.0), &IntegratorConfig::with_step(h)).unwrap();
        assert!(f.status.is_completed());
        let (u, p) = f.trajectory.last_state();
        // Implicit midpoint on a linear equation multiplies by (1 + h/2)/(1 - h/2) per step.
        let n = (1.0 / h).round() as i32;
        let g = ((1.0 + h / 2.0) / (1.0 - h / 2.0)).powi(n);
        let amp = (u[0] / g - 1.0).abs().max((p[0] * g - 1.0).abs());
        assert!(amp <= 1e-11, "h={h}: {amp:e}");
        let err = (u[0] - std::f64::consts::E).abs().max((p[0] - (-1.0_f64).exp()).abs());
        assert!(err <= tol, "h={h}: {err:e}");
    }
}
