use nalgebra::{DMatrix, DVector};
use orbstab::curves::{Curve, Interval};
use orbstab::linearization::LinearSystem;
use orbstab::maneuver::*;
use proptest::prelude::*;

fn di() -> LinearSystem {
    LinearSystem {
        a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        b: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
    }
}

fn rho1(s: f64) -> f64 {
    s * (1.0 - s) * (1.0 - s)
}

fn drho1(s: f64) -> f64 {
    (1.0 - s) * (1.0 - s) - 2.0 * s * (1.0 - s)
}

#[test]
fn double_integrator_maneuver_is_consistent() {
    let m = double_integrator_maneuver(0.0, 1.0, 1.0).unwrap();
    let r = m.validate(&di(), 200).unwrap();
    assert!(r.max_p6_residual < 1e-9, "{r:?}");
    assert!(r.passes(1e-9));
    assert_eq!(m.x_alpha, DVector::from_vec(vec![0.0, 0.0]));
    assert_eq!(m.x_omega, DVector::from_vec(vec![1.0, 0.0]));
}

#[test]
fn zero_control_leaves_the_acceleration_residual() {
    let m = double_integrator_maneuver(0.0, 1.0, 1.0).unwrap();
    let zero = Curve::constant(m.domain(), DMatrix::zeros(1, 1));
    let bad = Maneuver::new(m.x_star.clone(), zero, m.rho.clone()).unwrap();
    let r = bad.validate(&di(), 200).unwrap();
    let grid = m.domain().chebyshev(200);
    let expected = grid.iter().map(|&s| (drho1(s) * rho1(s)).abs()).fold(0.0, f64::max);
    assert!((r.max_p6_residual - expected).abs() < 1e-12);
    assert!(r.max_p6_residual > 0.0);
    assert!(!r.passes(1e-6));
}

#[test]
fn nonzero_boundary_speed_fails() {
    let m = double_integrator_maneuver(0.0, 1.0, 1.0).unwrap();
    let d = m.domain();
    let rho = Curve::scalar_polynomial(d, &[0.1, 1.0, -2.0, 1.0]).unwrap();
    let bad = Maneuver::new(m.x_star.clone(), m.u_star.clone(), rho).unwrap();
    let r = bad.validate(&di(), 50).unwrap();
    assert!(!r.rho_ok);
    assert!(!r.passes(1.0));
}

#[test]
fn dimension_mismatch_is_reported() {
    let m = double_integrator_maneuver(0.0, 1.0, 1.0).unwrap();
    let sys = LinearSystem { a: DMatrix::zeros(3, 3), b: DMatrix::zeros(3, 1) };
    assert!(matches!(m.validate(&sys, 50), Err(ManeuverError::DimensionMismatch(_))));
}

#[test]
fn mismatched_domains_are_rejected() {
    let m = double_integrator_maneuver(0.0, 1.0, 1.0).unwrap();
    let rho = Curve::scalar_polynomial(Interval::new(0.0, 2.0).unwrap(), &[0.0]).unwrap();
    assert!(matches!(Maneuver::new(m.x_star.clone(), m.u_star.clone(), rho), Err(ManeuverError::DomainMismatch)));
}

#[test]
fn speed_profile_values() {
    let m = double_integrator_maneuver(0.0, 1.0, 1.0).unwrap();
    assert_eq!(m.s_dynamics(0.0).unwrap(), 0.0);
    assert_eq!(m.s_dynamics(1.0).unwrap(), 0.0);
    assert!((m.s_dynamics(0.5).unwrap() - 0.125).abs() < 1e-15);
    assert!(m.s_dynamics(1.5).is_err());
}

#[test]
fn straight_line_length() {
    let d = Interval::new(0.0, 1.0).unwrap();
    let x = Curve::polynomial(d, vec![DMatrix::zeros(2, 1), DMatrix::from_column_slice(2, 1, &[3.0, 4.0])]).unwrap();
    let u = Curve::constant(d, DMatrix::zeros(1, 1));
    let rho = Curve::scalar_polynomial(d, &[0.0, 1.0, -1.0]).unwrap();
    let m = Maneuver::new(x, u, rho).unwrap();
    assert!((m.arc_length() - 5.0).abs() < 1e-12);
}

#[test]
fn curved_length_matches_simpson() {
    let m = double_integrator_maneuver(0.0, 1.0, 1.0).unwrap();
    let n = 200_000;
    let h = 1.0 / n as f64;
    let g = |s: f64| (1.0 + drho1(s).powi(2)).sqrt();
    let mut acc = g(0.0) + g(1.0);
    for k in 1..n {
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * g(k as f64 * h);
    }
    let oracle = acc * h / 3.0;
    assert!((m.arc_length() - oracle).abs() < 1e-10, "{} vs {oracle}", m.arc_length());
}

#[test]
fn collapsed_domain_has_no_length() {
    let m = double_integrator_maneuver(0.3, 0.3 + 1e-12, 1.0).unwrap();
    assert!(m.arc_length().abs() < 1e-10);
}

#[test]
fn length_is_invariant_under_affine_reparameterization() {
    let m = double_integrator_maneuver(0.0, 1.0, 1.0).unwrap();
    // s̃ = 2s + 1 on [1, 3].
    let d = Interval::new(1.0, 3.0).unwrap();
    let samples: Vec<(f64, DMatrix<f64>)> = d
        .uniform(12)
        .into_iter()
        .map(|t| (t, DMatrix::from_column_slice(2, 1, m.state((t - 1.0) / 2.0).unwrap().as_slice())))
        .collect();
    let x = Curve::fit_polynomial(&samples, 3).unwrap();
    assert!(x.max_residual < 1e-12);
    let u = Curve::constant(d, DMatrix::zeros(1, 1));
    let rho = Curve::constant(d, DMatrix::zeros(1, 1));
    let m2 = Maneuver::new(x.curve, u, rho).unwrap();
    assert!((m.arc_length() - m2.arc_length()).abs() < 1e-8);
}

#[test]
fn self_intersecting_curve_detected() {
    let d = Interval::new(0.0, 1.0).unwrap();
    // Figure-eight through the origin at s = 0, 0.5, 1.
    let pts: Vec<(f64, DMatrix<f64>)> = d
        .uniform(400)
        .into_iter()
        .map(|s| {
            let t = std::f64::consts::TAU * s;
            (s, DMatrix::from_column_slice(2, 1, &[t.sin(), (2.0 * t).sin()]))
        })
        .collect();
    let x = Curve::fit_hermite(&pts).unwrap().curve;
    let u = Curve::constant(d, DMatrix::zeros(1, 1));
    let rho = Curve::scalar_polynomial(d, &[0.0, 1.0, -1.0]).unwrap();
    let m = Maneuver::new(x, u, rho).unwrap();
    let r = m.validate(&di(), 200).unwrap();
    assert!(!r.no_self_intersection);
}

#[test]
fn document_round_trip() {
    let m = double_integrator_maneuver(0.0, 1.0, 2.0).unwrap();
    let doc = m.to_document();
    let text = serde_json::to_string(&doc).unwrap();
    let back = Maneuver::from_document(&serde_json::from_str(&text).unwrap()).unwrap();
    for s in m.domain().uniform(17) {
        assert!((m.state(s).unwrap() - back.state(s).unwrap()).norm() < 1e-14);
        assert!((m.rho(s).unwrap() - back.rho(s).unwrap()).abs() < 1e-14);
        assert!((m.control(s).unwrap() - back.control(s).unwrap()).norm() < 1e-14);
    }
}

#[test]
fn distance_to_orbit() {
    let m = double_integrator_maneuver(0.0, 1.0, 1.0).unwrap();
    let x = m.state(0.4).unwrap();
    assert!(m.dist_to_orbit(&x) < 1e-12);
    let far = DVector::from_vec(vec![2.0, 0.0]);
    assert!((m.dist_to_orbit(&far) - 1.0).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn example_family_always_validates(qa in -2.0f64..2.0, w in 0.2f64..3.0, kappa in 0.1f64..5.0) {
        let m = double_integrator_maneuver(qa, qa + w, kappa).unwrap();
        let r = m.validate(&di(), 100).unwrap();
        prop_assert!(r.passes(1e-9 * (1.0 + kappa * kappa * w.powi(5))), "{:?}", r);
    }
}
