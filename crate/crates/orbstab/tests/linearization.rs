use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use orbstab::linearization::*;
use orbstab::maneuver::double_integrator_maneuver;
use orbstab::mechanics::{ButterflyModel, ButterflyParams, DoubleIntegrator, MechanicalSystem};
use orbstab::projection::ProjectionOperator;
use proptest::prelude::*;

fn di() -> LinearSystem {
    LinearSystem {
        a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        b: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
    }
}

fn setup() -> (LinearSystem, Arc<orbstab::maneuver::Maneuver>, ProjectionOperator, ProjectionOperator) {
    let m = Arc::new(double_integrator_maneuver(0.0, 1.0, 1.0).unwrap());
    let sat = ProjectionOperator::coordinate_saturation(m.clone(), 0, 1.0, 0.0).unwrap();
    let euc = ProjectionOperator::identity_lambda(m.clone()).unwrap();
    (di(), m, sat, euc)
}

fn gain() -> DMatrix<f64> {
    DMatrix::from_row_slice(1, 2, &[-1.0, -1.5])
}

#[test]
fn double_integrator_jacobian() {
    let sys = di();
    let mech = MechanicalSystem::new(Arc::new(DoubleIntegrator)).to_control_affine().unwrap();
    let x = DVector::from_vec(vec![0.3, -0.7]);
    let u = DVector::from_vec(vec![2.0]);
    assert_eq!(jacobian_a(&sys, &x, &u).unwrap(), sys.a);
    assert!((jacobian_a_fd(&mech, &x, &u).unwrap() - &sys.a).norm() < 1e-9);
}

#[test]
fn linear_jacobian_is_the_matrix() {
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0, 0.0, 0.2, -4.0]);
    let sys = LinearSystem { a: a.clone(), b: DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]) };
    let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
    let u = DVector::from_vec(vec![5.0]);
    assert!((jacobian_a_fd(&sys, &x, &u).unwrap() - a).norm() < 1e-8);
    assert!(jacobian_cross_check(&sys, &x, &u).unwrap() < 1e-9);
}

#[test]
fn butterfly_jacobian_cross_check() {
    let sys = ButterflyModel::new(ButterflyParams::default()).unwrap().system();
    let ca = sys.to_control_affine().unwrap();
    for phi in [0.0, 0.7, 2.0] {
        let g = ButterflyModel::new(ButterflyParams::default()).unwrap().geometry(phi).unwrap();
        let q = DVector::from_vec(vec![-g.psi, phi]);
        let (u, _) = sys.equilibrium_control(&q);
        let x = DVector::from_vec(vec![q[0], q[1], 0.0, 0.0]);
        assert!(jacobian_cross_check(&ca, &x, &u).unwrap() < 1e-5);
    }
}

#[test]
fn equilibrium_linearization() {
    let sys = di();
    let lin = linearize_equilibrium(&sys, &DVector::zeros(2), &DVector::zeros(1)).unwrap();
    assert_eq!(lin.a, sys.a);
    assert_eq!(lin.b, sys.b);
    assert!(lin.controllable);
    assert_eq!(lin.controllability_rank, 2);
    let r = linearize_equilibrium(&sys, &DVector::from_vec(vec![0.0, 1e-2]), &DVector::zeros(1));
    assert!(matches!(r, Err(LinearizationError::NotAnEquilibrium(_))));
}

#[test]
fn uncontrollable_pair_is_detected() {
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
    let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
    assert_eq!(controllability_rank(&a, &b), 1);
}

#[test]
fn saturation_transverse_matrix_drops_the_hessian_term() {
    let (sys, m, sat, _) = setup();
    for s in [0.2, 0.5, 0.8] {
        let (ap, bp) = transverse_matrices(&sys, &m, &sat, s).unwrap();
        let e = sat.e_perp(s).unwrap();
        assert!((&ap - &e * &sys.a).norm() < 1e-12);
        assert!((&bp - &e * &sys.b).norm() < 1e-12);
    }
}

#[test]
fn hand_assembled_transverse_matrix() {
    let (sys, m, _, euc) = setup();
    let s = 0.5;
    // F = (1, ρ′), ρ′(0.5) = −0.25, ρ(0.5) = 0.125.
    let f = DVector::from_vec(vec![1.0, -0.25]);
    let p = f.transpose() / f.norm_squared();
    let e = DMatrix::identity(2, 2) - &f * &p;
    let fp = DVector::from_vec(vec![0.0, -6.0 * s + 4.0 - 2.0]);
    let n2: f64 = f.norm_squared();
    let dp = fp.transpose() / n2 - f.transpose() * (2.0 * f.dot(&fp) / (n2 * n2));
    let expected = &e * &sys.a - (&f * &dp * &e) * 0.125;
    let (ap, _) = transverse_matrices(&sys, &m, &euc, s).unwrap();
    assert!((ap - expected).norm() < 1e-12);
}

#[test]
fn boundary_transverse_matrix_is_projected_jacobian() {
    let (sys, m, _, euc) = setup();
    assert!(transverse_matrices(&sys, &m, &euc, 0.0).is_err());
    for s in [0.0, 1.0] {
        let pt = orbit_point(&sys, &m, &euc, s).unwrap();
        assert_eq!(pt.rho, 0.0);
        assert!((&pt.a_perp - &pt.e_perp * &pt.a_s).norm() < 1e-15);
    }
}

#[test]
fn transverse_rhs_constraint() {
    let (sys, m, _, euc) = setup();
    let pt = orbit_point(&sys, &m, &euc, 0.4).unwrap();
    assert_eq!(transverse_rhs(&pt, &gain(), &DVector::zeros(2)).unwrap(), DVector::zeros(2));
    let bad = &pt.f * 0.3;
    assert!(matches!(transverse_rhs(&pt, &gain(), &bad), Err(LinearizationError::ConstraintViolated(_))));
}

#[test]
fn variational_rhs_special_cases() {
    let (sys, m, _, euc) = setup();
    let pt = orbit_point(&sys, &m, &euc, 0.4).unwrap();
    assert!((&pt.e_perp * &pt.f).norm() < 1e-14);
    // K = 0 and B = 0 reduce to χ̇ = A_s χ.
    let mut pt0 = pt.clone();
    pt0.b_s = DMatrix::zeros(2, 1);
    let chi = DVector::from_vec(vec![0.3, -1.0]);
    let k0 = DMatrix::zeros(1, 2);
    assert!((variational_rhs(&pt0, &k0, &chi) - &pt.a_s * &chi).norm() < 1e-15);
}

#[test]
fn transverse_flow_keeps_the_constraint() {
    let (sys, m, _, euc) = setup();
    let k = gain();
    let s0 = 0.1;
    let z0 = euc.e_perp(s0).unwrap() * DVector::from_vec(vec![0.02, 0.05]);
    let traj = propagate(&sys, &m, &euc, &|_| k.clone(), LinearFlow::Transverse, s0, &z0, 20.0, 0.01).unwrap();
    for smp in &traj {
        let p = euc.tube_jacobian(smp.s).unwrap();
        assert!((&p * &smp.v)[0].abs() < 1e-6);
    }
}

#[test]
fn variational_and_transverse_flows_agree() {
    let (sys, m, _, euc) = setup();
    let k = gain();
    let s0 = 0.1;
    let chi0 = DVector::from_vec(vec![0.03, -0.02]);
    let z0 = euc.e_perp(s0).unwrap() * &chi0;
    // Time for s to cover the middle 80%.
    let t = traverse_time(&m, 0.1, 0.9);
    let var = propagate(&sys, &m, &euc, &|_| k.clone(), LinearFlow::Variational, s0, &chi0, t, 1e-3).unwrap();
    let tra = propagate(&sys, &m, &euc, &|_| k.clone(), LinearFlow::Transverse, s0, &z0, t, 1e-3).unwrap();
    assert_eq!(var.len(), tra.len());
    for (a, b) in var.iter().zip(&tra) {
        let z = euc.tube_e_perp(a.s).unwrap() * &a.v;
        assert!((z - &b.v).norm() < 1e-5, "t = {}", a.t);
    }
    assert!((var.last().unwrap().s - 0.9).abs() < 1e-3);
}

fn traverse_time(m: &orbstab::maneuver::Maneuver, a: f64, b: f64) -> f64 {
    orbstab::numerics::integrate(|s| 1.0 / m.rho(s).unwrap(), a, b, 1e-12, 1e-14).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn butterfly_analytic_jacobian_matches_fd(
        q1 in -3.0f64..3.0, phi in -0.4f64..2.4, v1 in -2.0f64..2.0, v2 in -2.0f64..2.0, u in -1.0f64..1.0,
    ) {
        let ca = ButterflyModel::new(ButterflyParams::default()).unwrap().system().to_control_affine().unwrap();
        let x = DVector::from_vec(vec![q1, phi, v1, v2]);
        let u = DVector::from_vec(vec![u]);
        prop_assert!(jacobian_cross_check(&ca, &x, &u).unwrap() < 1e-5);
    }
}
