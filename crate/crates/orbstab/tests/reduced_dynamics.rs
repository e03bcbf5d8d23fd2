use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use orbstab::curves::{Curve, Interval};
use orbstab::mechanics::{ButterflyModel, ButterflyParams, DoubleIntegrator, MechanicalModel, MechanicalSystem};
use orbstab::numerics::derivative5;
use orbstab::reduced_dynamics::*;

fn model() -> ButterflyModel {
    ButterflyModel::new(ButterflyParams::default()).unwrap()
}

fn task() -> Interval {
    Interval::new(0.0, 2.0).unwrap()
}

fn planner(s_e: f64) -> ReducedDynamics {
    let prof = ButterflyProfile::standard(model(), 0.01, task(), s_e);
    ReducedDynamics::new(model().system(), Arc::new(prof)).unwrap()
}

fn solved() -> (f64, ReducedDynamics) {
    let s_e = solve_center_location(model(), 0.01, task()).unwrap();
    (s_e, planner(s_e))
}

#[test]
fn gamma_matches_slope_angle_form() {
    let rd = planner(0.707);
    let prof = ButterflyProfile::standard(model(), 0.01, task(), 0.707);
    let p = ButterflyParams::default();
    for k in 0..=20 {
        let s = 0.1 * k as f64;
        let g = model().geometry(s).unwrap();
        let expected = p.m_ball * p.g * g.zeta_p * prof.slope_angle(s)[0].sin();
        assert!((rd.gamma(s) - expected).abs() < 1e-14, "s = {s}");
    }
}

#[test]
fn alpha_matches_closed_form() {
    let rd = planner(0.707);
    let prof = ButterflyProfile::standard(model(), 0.01, task(), 0.707);
    let p = ButterflyParams::default();
    for k in 0..=20 {
        let s = 0.1 * k as f64;
        let g = model().geometry(s).unwrap();
        let sn = g.sigma_dot_n();
        let th1 = prof.slope_angle(s)[1];
        let expected = (p.j_b / p.r_b * (g.kappa + 1.0 / p.r_b) + p.m_ball * (1.0 + g.kappa * sn)) * g.zeta_p * g.zeta_p
            - (p.m_ball * sn + p.j_b / p.r_b) * g.zeta_p * th1;
        let a = rd.alpha(s);
        assert!((a - expected).abs() < 1e-12 * a.abs(), "s = {s}: {a} vs {expected}");
    }
}

#[test]
fn flat_slope_has_no_gamma_and_fails_existence() {
    let prof = ButterflyProfile::new(model(), vec![], task());
    let rd = ReducedDynamics::new(model().system(), Arc::new(prof)).unwrap();
    for s in task().uniform(11) {
        assert!(rd.gamma(s).abs() < 1e-14);
    }
    let r = rd.check_ptp_existence();
    assert!(!r.single_center);
    assert!(!r.passes());
    assert!(matches!(rd.construct_maneuver(50), Err(ReducedError::ExistenceCheckFailed(_))));
}

#[test]
fn single_dof_systems_are_rejected() {
    let sys = MechanicalSystem::new(Arc::new(DoubleIntegrator));
    let phi = Curve::polynomial(task(), vec![DMatrix::zeros(1, 1), DMatrix::identity(1, 1)]).unwrap();
    let r = ReducedDynamics::new(sys, Arc::new(CurveProfile { phi }));
    assert!(matches!(r, Err(ReducedError::DimensionError(_))));
}

#[test]
fn beta_splits_into_alpha_slope_and_beta_hat() {
    let rd = planner(0.707);
    for k in 1..20 {
        let s = 0.1 * k as f64;
        let c = rd.coefficients(s);
        let da = derivative5(|t| rd.alpha(t), s, 1e-4);
        assert!((c.beta - da - c.beta_hat).abs() < 1e-6 * c.alpha.abs(), "s = {s}");
    }
}

#[test]
fn constant_inertia_has_unit_integrating_factor() {
    struct Cart;
    impl MechanicalModel for Cart {
        fn dof(&self) -> usize {
            2
        }
        fn inertia(&self, _q: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])
        }
        fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![0.0, q[1].sin()])
        }
        fn input_matrix(&self) -> DMatrix<f64> {
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0])
        }
    }
    let phi = Curve::polynomial(
        task(),
        vec![DMatrix::from_column_slice(2, 1, &[0.0, 0.0]), DMatrix::from_column_slice(2, 1, &[0.3, 1.0]), DMatrix::from_column_slice(2, 1, &[0.1, 0.0])],
    )
    .unwrap();
    let rd = ReducedDynamics::new(MechanicalSystem::new(Arc::new(Cart)), Arc::new(CurveProfile { phi })).unwrap();
    for s in task().uniform(21) {
        assert!(rd.coefficients(s).beta_hat.abs() < 1e-10);
    }
    assert!((rd.integrating_factor(0.0, 2.0).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn integrating_factor_is_a_cocycle() {
    let rd = planner(0.707);
    assert_eq!(rd.integrating_factor(0.4, 0.4).unwrap(), 1.0);
    let p02 = rd.integrating_factor(0.0, 2.0).unwrap();
    let p01 = rd.integrating_factor(0.0, 1.0).unwrap();
    let p12 = rd.integrating_factor(1.0, 2.0).unwrap();
    assert!(p02 > 0.0);
    assert!((p02 - p01 * p12).abs() < 1e-8 * p02);
}

#[test]
fn level_curve_trivial_cases() {
    let rd = planner(0.707);
    assert_eq!(rd.rho_from_level_curve(0.8, 0.3, 0.8).unwrap(), 0.09);
}

#[test]
fn boundary_slope_signs() {
    let d = task();
    assert_eq!(boundary_slope_from_nu(-4.0, 0.0, d).unwrap(), 2.0);
    assert_eq!(boundary_slope_from_nu(-4.0, 2.0, d).unwrap(), -2.0);
    assert!(matches!(boundary_slope_from_nu(0.0, 2.0, d), Err(ReducedError::NotHyperbolic { .. })));
}

#[test]
fn butterfly_existence_conditions() {
    let (s_e, rd) = solved();
    assert!((s_e - 0.707).abs() < 0.01, "s_e = {s_e}");
    let r = rd.check_ptp_existence();
    assert!(r.alpha_nonvanishing && r.single_center && r.integral_ok && r.boundary_equilibria, "{r:?}");
    assert!((r.center().unwrap() - s_e).abs() < 1e-8);
    assert_eq!(rd.classify_equilibrium(s_e).unwrap(), EquilibriumKind::Center);
    assert_eq!(rd.classify_equilibrium(0.0).unwrap(), EquilibriumKind::Saddle);
    // The double root of Θ at s_ω makes that end degenerate.
    assert_eq!(rd.classify_equilibrium(2.0).unwrap(), EquilibriumKind::Degenerate);
    assert!(r.alpha_hyperbolic && !r.omega_hyperbolic);
    assert!(r.passes());
}

#[test]
fn flipped_slope_swaps_classification() {
    let s_e = solve_center_location(model(), 0.01, task()).unwrap();
    let theta: Vec<f64> = slope_polynomial(-0.01, 0.0, s_e, 2.0);
    let rd = ReducedDynamics::new(model().system(), Arc::new(ButterflyProfile::new(model(), theta, task()))).unwrap();
    let r = rd.check_ptp_existence();
    assert_eq!(r.interior_equilibria.len(), 1);
    assert_eq!(r.interior_equilibria[0].kind, EquilibriumKind::Saddle);
    assert!(!r.passes());
}

#[test]
fn separatrix_reaches_the_far_end() {
    let (_, rd) = solved();
    let r2 = rd.rho_from_level_curve(0.0, 0.0, 2.0).unwrap();
    let scale = rd.rho_from_level_curve(0.0, 0.0, 0.4).unwrap();
    assert!(r2.abs() < 1e-6 * scale.max(1.0), "ρ²(s_ω) = {r2}");
}

#[test]
fn constructed_maneuver_satisfies_reduced_equation() {
    let (_, rd) = solved();
    let man = rd.construct_maneuver(401).unwrap();
    let d = man.domain();
    assert_eq!(man.rho(0.0).unwrap(), 0.0);
    assert_eq!(man.rho(2.0).unwrap(), 0.0);
    let mut worst: f64 = 0.0;
    let scale = d.uniform(101).iter().map(|&s| rd.gamma(s).abs()).fold(0.0, f64::max);
    for k in 1..500 {
        let s = d.s_alpha + d.width() * k as f64 / 500.0;
        let rho = man.rho(s).unwrap();
        assert!(rho > 0.0);
        let c = rd.coefficients(s);
        let res = c.alpha * man.rho_prime(s).unwrap() * rho + c.beta * rho * rho + c.gamma;
        worst = worst.max(res.abs());
    }
    assert!(worst < 1e-6 * scale, "worst {worst:e} vs scale {scale:e}");
    // Boundary slope agrees with the slope of the constructed ρ.
    let h = 1e-4;
    let fd = man.rho(h).unwrap() / h;
    let exact = rd.boundary_slope(0.0).unwrap();
    assert!((fd - exact).abs() < 0.01 * exact);
    let sys = model().system().to_control_affine().unwrap();
    let rep = man.validate(&sys, 200).unwrap();
    assert!(rep.passes(1e-6), "{rep:?}");
}

#[test]
fn quadrature_and_reduced_ode_agree() {
    let (_, rd) = solved();
    let man = rd.construct_maneuver(401).unwrap();
    for k in 0..20 {
        let s1 = 0.1 + 0.08 * k as f64;
        let s2 = s1 + 0.2;
        let r1 = man.rho(s1).unwrap();
        let quad = rd.rho_from_level_curve(s1, r1, s2).unwrap().sqrt();
        let ode = rd.reduced_ode_speed(s1, r1, s2).unwrap();
        assert!((quad - ode).abs() < 1e-5, "s1 = {s1}: {quad} vs {ode}");
    }
}
