use nalgebra::{DMatrix, DVector};
use orbstab::linearization::{jacobian_a_fd, linearize_equilibrium, ControlAffine};
use orbstab::mechanics::*;
use orbstab::numerics::integrate;
use proptest::prelude::*;

fn butterfly() -> ButterflyModel {
    ButterflyModel::new(ButterflyParams::default()).unwrap()
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-12)
}

#[test]
fn constant_inertia_has_no_coriolis() {
    let sys = MechanicalSystem::new(std::sync::Arc::new(DoubleIntegrator));
    let q = DVector::from_element(1, 0.3);
    let qd = DVector::from_element(1, -2.0);
    let (c1, c2) = sys.coriolis_parts(&q, &qd);
    assert_eq!(c1[(0, 0)], 0.0);
    assert_eq!(c2[(0, 0)], 0.0);
}

#[test]
fn double_integrator_first_order_form() {
    let sys = MechanicalSystem::new(std::sync::Arc::new(DoubleIntegrator)).to_control_affine().unwrap();
    let x = DVector::from_vec(vec![0.4, -1.5]);
    assert_eq!(sys.drift(&x), DVector::from_vec(vec![-1.5, 0.0]));
    assert_eq!(sys.input(&x), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
}

#[test]
fn disk_limit_has_constant_curvature() {
    let mut p = ButterflyParams::default();
    p.shape = FrameShape::Circle { radius: 0.1 };
    let m = ButterflyModel::new(p).unwrap();
    let k0 = m.geometry(0.0).unwrap();
    for phi in [-0.4, 0.3, 1.1, 2.2] {
        let g = m.geometry(phi).unwrap();
        assert!((g.kappa - k0.kappa).abs() < 1e-14);
        assert!((g.psi + phi - (k0.psi)).abs() < 1e-14);
    }
}

#[test]
fn beam_limit_has_zero_tangential_angle() {
    let mut p = ButterflyParams::default();
    p.shape = FrameShape::Line { height: 0.1 };
    p.arc = [-1.0, 1.0];
    let m = ButterflyModel::new(p).unwrap();
    for phi in [-0.9, -0.2, 0.0, 0.5, 0.95] {
        let g = m.geometry(phi).unwrap();
        assert!(g.psi.abs() < 1e-12, "ψ({phi}) = {}", g.psi);
        assert!(g.dpsi.abs() < 1e-10);
    }
}

#[test]
fn curvature_is_tangential_angle_rate() {
    let mut p = ButterflyParams::default();
    p.shape = FrameShape::Butterfly { a: 0.1095, b: 0.0405 };
    let m = ButterflyModel::new(p).unwrap();
    let g = m.geometry(0.0).unwrap();
    assert!((g.dpsi / g.zeta_p - g.kappa).abs() < 1e-8);
}

#[test]
fn geometry_derivatives_match_finite_differences() {
    let m = butterfly();
    for k in 0..40 {
        let phi = -0.45 + 2.9 * k as f64 / 39.0;
        let g = m.geometry(phi).unwrap();
        let (zpp, dpsi, ddpsi, dsig) = geometry_fd(&m, phi);
        assert!((zpp - g.zeta_pp).abs() < 1e-6 * (1.0 + g.zeta_pp.abs()), "ζ″ at {phi}");
        assert!((dpsi - g.dpsi).abs() < 1e-6 * (1.0 + g.dpsi.abs()), "ψ′ at {phi}");
        assert!((ddpsi - g.ddpsi).abs() < 1e-6 * (1.0 + g.ddpsi.abs()), "ψ″ at {phi}");
        assert!(dsig.abs() < 1e-7, "σ′·τ − ζ′ at {phi}");
    }
}

#[test]
fn arc_length_rate_integrates_to_chord_sum() {
    let m = butterfly();
    let (a, b) = (0.0, 2.0);
    let len = integrate(|p| m.geometry(p).unwrap().zeta_p, a, b, 1e-12, 1e-15).unwrap();
    let n = 20000;
    let mut chord = 0.0;
    let mut prev = m.geometry(a).unwrap().sigma;
    for k in 1..=n {
        let cur = m.geometry(a + (b - a) * k as f64 / n as f64).unwrap().sigma;
        chord += (cur - prev).norm();
        prev = cur;
    }
    assert!((len - chord).abs() < 1e-7 * len, "{len} vs {chord}");
    let turn = integrate(|p| { let g = m.geometry(p).unwrap(); g.kappa * g.zeta_p }, a, b, 1e-12, 1e-15).unwrap();
    let dpsi = m.geometry(b).unwrap().psi - m.geometry(a).unwrap().psi;
    assert!((turn - dpsi).abs() < 1e-7);
}

#[test]
fn inertia_is_symmetric_positive_definite() {
    let m = butterfly();
    let sys = m.system();
    let q0 = DVector::zeros(2);
    let mq = sys.inertia(&q0);
    assert_eq!(mq[(0, 1)], mq[(1, 0)]);
    assert!(mq.clone().symmetric_eigenvalues().min() > 0.0);
    let mut rng = 0.3f64;
    for _ in 0..100 {
        rng = (rng * 7.31 + 0.17).fract();
        let q = DVector::from_vec(vec![6.0 * rng - 3.0, -0.5 + 3.0 * (rng * 3.7).fract()]);
        let mq = sys.inertia(&q);
        assert!(mq.symmetric_eigenvalues().min() > 0.0);
    }
}

#[test]
fn input_matrix_actuates_frame_only() {
    assert_eq!(butterfly().system().input_matrix(), DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
}

#[test]
fn normal_force_at_rest_on_horizontal_tangent() {
    let m = butterfly();
    // At φ = 0 the tangent of the ball-centre curve is horizontal when θ = 0.
    let g = m.geometry(0.0).unwrap();
    assert!(g.tau.y.abs() < 1e-14);
    let q = DVector::zeros(2);
    let z = DVector::zeros(2);
    let fneg = m.normal_force(&q, &z, &z);
    assert!((fneg - m.params.m_ball * m.params.g).abs() < 1e-12);
    // Upside down the ball would need to be pulled: the sign flags loss of contact.
    let q = DVector::from_vec(vec![std::f64::consts::PI, 0.0]);
    assert!(m.normal_force(&q, &z, &z) < 0.0);
}

#[test]
fn balanced_configuration_has_zero_ball_gravity() {
    let m = butterfly();
    // With θ = ψ(φ) the tangent is rotated to horizontal, so G₂ vanishes.
    for phi in [0.2, 0.9, 1.7] {
        let psi = m.geometry(phi).unwrap().psi;
        let q = DVector::from_vec(vec![-psi, phi]);
        assert!(m.gravity(&q)[1].abs() < 1e-14);
    }
}

#[test]
fn boundary_equilibria_are_consistent() {
    let m = butterfly();
    let sys = m.system();
    for phi in [0.0, 2.0] {
        let psi = m.geometry(phi).unwrap().psi;
        let q = DVector::from_vec(vec![-psi, phi]);
        let (u, r) = sys.equilibrium_control(&q);
        assert!(r < 1e-8);
        let ca = sys.to_control_affine().unwrap();
        let x = DVector::from_vec(vec![q[0], q[1], 0.0, 0.0]);
        let lin = linearize_equilibrium(&ca, &x, &u).unwrap();
        assert_eq!(lin.controllability_rank, 4);
    }
}

#[test]
fn equilibrium_residual_rejects_non_equilibria() {
    let sys = butterfly().system().to_control_affine().unwrap();
    let x = DVector::from_vec(vec![0.3, 0.5, 0.0, 0.0]);
    let u = DVector::zeros(1);
    assert!(linearize_equilibrium(&sys, &x, &u).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn closed_form_coriolis_matches_generic(th in -3.0..3.0f64, ph in -0.45..2.45f64, td in -5.0..5.0f64, pd in -5.0..5.0f64) {
        let m = butterfly();
        let sys = m.system();
        let q = DVector::from_vec(vec![th, ph]);
        let qd = DVector::from_vec(vec![td, pd]);
        let closed = sys.coriolis(&q, &qd).unwrap() * &qd;
        let generic = sys.coriolis_generic(&q, &qd).unwrap() * &qd;
        let denom = generic.amax().max(1e-9);
        prop_assert!((&closed - &generic).amax() / denom < 1e-6);
    }

    #[test]
    fn coriolis_quadratic_form_identity(th in -3.0..3.0f64, ph in -0.45..2.45f64, td in -5.0..5.0f64, pd in -5.0..5.0f64) {
        let sys = butterfly().system();
        let q = DVector::from_vec(vec![th, ph]);
        let qd = DVector::from_vec(vec![td, pd]);
        let (c1, c2) = sys.coriolis_parts(&q, &qd);
        let a = qd.dot(&(&c2 * &qd));
        let b = -0.5 * qd.dot(&(&c1 * &qd));
        prop_assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
    }

    #[test]
    fn analytic_partials_match_finite_differences(th in -3.0..3.0f64, ph in -0.45..2.45f64) {
        let m = butterfly();
        let sys = m.system();
        let q = DVector::from_vec(vec![th, ph]);
        let an = m.inertia_partials(&q).unwrap();
        let fd = sys.inertia_partials_fd(&q);
        prop_assert!(rel(&an[1], &fd[1]) < 1e-5);
        let gj = m.gravity_jacobian(&q).unwrap();
        let gfd = orbstab::numerics::jacobian5(|p| m.gravity(p), &q, 1e-6 * (1.0 + q.norm()));
        prop_assert!(rel(&gj, &gfd) < 1e-5);
    }

    #[test]
    fn drift_jacobian_is_finite(th in -1.0..1.0f64, ph in 0.0..2.0f64, td in -1.0..1.0f64, pd in -1.0..1.0f64) {
        let sys = butterfly().system().to_control_affine().unwrap();
        let x = DVector::from_vec(vec![th, ph, td, pd]);
        let a = jacobian_a_fd(&sys, &x, &DVector::from_element(1, 0.01)).unwrap();
        prop_assert!(a.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn normal_force_matches_differentiated_ball_position() {
    let m = butterfly();
    let traj = |t: f64| (0.3 - 0.7 * t + 0.4 * t * t, 0.8 + 0.5 * t - 0.9 * t * t);
    let pos = |t: f64| {
        let (th, ph) = traj(t);
        let sg = m.geometry(ph).unwrap().sigma;
        let (s, c) = th.sin_cos();
        nalgebra::Vector2::new(c * sg.x - s * sg.y, s * sg.x + c * sg.y)
    };
    let t = 0.37;
    let h = 1e-4;
    let acc = (pos(t + h) - pos(t) * 2.0 + pos(t - h)) / (h * h);
    let (th, ph) = traj(t);
    let n = m.geometry(ph).unwrap().normal;
    let (s, c) = th.sin_cos();
    let nw = nalgebra::Vector2::new(c * n.x - s * n.y, s * n.x + c * n.y);
    let expected = m.params.m_ball * (acc.dot(&nw) + m.params.g * nw.y);
    let q = DVector::from_vec(vec![th, ph]);
    let qd = DVector::from_vec(vec![-0.7 + 0.8 * t, 0.5 - 1.8 * t]);
    let qdd = DVector::from_vec(vec![0.8, -1.8]);
    let fnorm = m.normal_force(&q, &qd, &qdd);
    assert!((fnorm - expected).abs() < 1e-6 * expected.abs(), "{fnorm} vs {expected}");
}

#[test]
fn unforced_motion_conserves_energy() {
    let m = butterfly();
    let sys = m.system().to_control_affine().unwrap();
    let energy = |x: &DVector<f64>| {
        let q = x.rows(0, 2).into_owned();
        let qd = x.rows(2, 2).into_owned();
        let sg = m.geometry(q[1]).unwrap().sigma;
        let (s, c) = q[0].sin_cos();
        let height = s * sg.x + c * sg.y;
        0.5 * qd.dot(&(m.inertia(&q) * &qd)) + m.params.m_ball * m.params.g * height
    };
    let x0 = DVector::from_vec(vec![0.1, 0.6, 0.5, -0.8]);
    let mut h = 1e-3;
    let opts = orbstab::numerics::AdaptiveOptions { rtol: 1e-11, atol: 1e-13, ..Default::default() };
    let mut f = |_t: f64, x: &DVector<f64>| sys.drift(x);
    let x1 = orbstab::numerics::dopri45(&mut f, 0.0, 0.5, &x0, &mut h, &opts).unwrap();
    let (e0, e1) = (energy(&x0), energy(&x1));
    assert!((e1 - e0).abs() < 1e-8 * e0.abs().max(1e-3), "{e0} → {e1}");
}
