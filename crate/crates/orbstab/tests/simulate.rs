use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use orbstab::maneuver::{double_integrator_maneuver, Maneuver, ManeuverDocument};
use orbstab::pipeline::{simulate_scenario, ModelInstance};
use orbstab::projection::{ProjectionOperator, RegionLabel};
use orbstab::simulate::*;
use orbstab::synthesis::{GainSchedule, GainScheduleDocument};
use proptest::prelude::*;

const ARTIFACTS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../artifacts/butterfly");

struct Setup {
    inst: ModelInstance,
    man: Arc<Maneuver>,
    op: ProjectionOperator,
    gains: GainSchedule,
}

fn read<T: serde::de::DeserializeOwned>(name: &str) -> T {
    let text = std::fs::read_to_string(format!("{ARTIFACTS}/{name}")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn butterfly() -> Setup {
    let inst = ModelInstance::butterfly(Default::default()).unwrap();
    let man = Arc::new(Maneuver::from_document(&read::<ManeuverDocument>("maneuver.json")).unwrap());
    let op = ProjectionOperator::coordinate_saturation(man.clone(), 1, 1.0, 0.0).unwrap();
    let gains = GainSchedule::from_document(&read::<GainScheduleDocument>("gains.json")).unwrap();
    Setup { inst, man, op, gains }
}

/// Double integrator with the saturation operator and `K ≡ [k1, −k2]`, `R ≡ I`.
fn double_integrator(k1: f64, k2: f64) -> Setup {
    let inst = ModelInstance::double_integrator().unwrap();
    let man = Arc::new(double_integrator_maneuver(0.0, 1.0, 1.0).unwrap());
    let op = ProjectionOperator::coordinate_saturation(man.clone(), 0, 1.0, 0.0).unwrap();
    let k = DMatrix::from_row_slice(1, 2, &[k1, -k2]);
    let gains = GainSchedule::constant(man.domain(), &k, &DMatrix::identity(2, 2), 0.0).unwrap();
    Setup { inst, man, op, gains }
}

fn sim(s: &Setup, x0: &DVector<f64>, cfg: &SimConfig) -> SimTrace {
    run(&Plant::new(&s.inst.sys), &s.gains, &s.op, &s.man, x0, cfg).unwrap()
}

fn dist(a: &[f64], b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn on_orbit_the_law_is_the_feedforward() {
    for s in [butterfly(), double_integrator(-1.0, 2.0)] {
        let d = s.man.domain();
        for k in 1..10 {
            let sv = d.s_alpha + d.width() * k as f64 / 10.0;
            let u = control_law(&s.gains, &s.op, &s.man, &s.man.state(sv).unwrap()).unwrap();
            assert!((u - s.man.control(sv).unwrap()).norm() < 1e-10);
        }
    }
}

#[test]
fn beyond_the_end_the_law_is_the_terminal_lqr() {
    let s = butterfly();
    let mut x = s.man.x_omega.clone();
    x[1] += 0.05;
    x[0] -= 0.02;
    let ev = Controller { maneuver: &s.man, op: &s.op, gains: &s.gains }.evaluate(&x, 0.0).unwrap();
    assert_eq!(ev.region, RegionLabel::HOmega);
    let expected = s.man.control(2.0).unwrap() + &s.gains.k_omega * (&x - &s.man.x_omega);
    assert!((ev.u - expected).norm() < 1e-10);
}

#[test]
fn double_integrator_closed_form_law() {
    let k2 = 2.0;
    let s = double_integrator(-0.7, k2);
    let rho = s.man.rho(0.5).unwrap();
    let drho = s.man.rho_prime(0.5).unwrap();
    for delta in [-0.03, 0.0, 0.01, 0.2] {
        let u = control_law(&s.gains, &s.op, &s.man, &DVector::from_vec(vec![0.5, rho + delta])).unwrap();
        assert!((u[0] - (drho * rho - k2 * delta)).abs() < 1e-12);
    }
}

#[test]
fn equilibrium_start_stays_put() {
    let s = butterfly();
    let cfg = SimConfig { t_final: 2.0, ..Default::default() };
    let tr = sim(&s, &s.man.x_omega.clone(), &cfg);
    let u_omega = s.man.control(2.0).unwrap();
    for smp in &tr.samples {
        assert!(dist(&smp.x, &s.man.x_omega) < 1e-9, "t = {}", smp.t);
        assert!((smp.u[0] - u_omega[0]).abs() < 1e-12);
    }
}

#[test]
fn orbit_is_invariant_under_the_feedforward() {
    let s = butterfly();
    let s0 = 0.4;
    let cfg = SimConfig { t_final: 3.0, output_dt: 1e-2, stop_tolerance: 0.0, ..Default::default() };
    let tr = sim(&s, &s.man.state(s0).unwrap(), &cfg);
    // Reference phase from ṡ = ρ(s).
    let mut sr = s0;
    let h = 1e-3;
    let mut t = 0.0;
    let f = |v: f64| s.man.rho(v).unwrap();
    for smp in &tr.samples {
        while t < smp.t - 1e-12 {
            let k1 = f(sr);
            let k2 = f(sr + 0.5 * h * k1);
            let k3 = f(sr + 0.5 * h * k2);
            let k4 = f(sr + h * k3);
            sr += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        let xr = s.man.state(sr).unwrap();
        assert!(dist(&smp.x, &xr) < 1e-5, "t = {}: {}", smp.t, dist(&smp.x, &xr));
    }
    assert!(tr.samples.last().unwrap().s > 1.0);
}

#[test]
fn halving_the_step_is_consistent() {
    let s = double_integrator(-1.0, 2.0);
    let x0 = DVector::from_vec(vec![0.1, 0.05]);
    let base = SimConfig { t_final: 5.0, ..Default::default() };
    let a = sim(&s, &x0, &SimConfig { integrator: Integrator::Rk4 { step: 1e-3 }, ..base.clone() });
    let b = sim(&s, &x0, &SimConfig { integrator: Integrator::Rk4 { step: 5e-4 }, ..base });
    let xa = DVector::from_column_slice(&a.last().x);
    assert!(dist(&b.last().x, &xa) < 1e-6);
}

#[test]
fn fixed_and_adaptive_integrators_agree() {
    let s = butterfly();
    let x0 = s.man.x_alpha.clone() + DVector::from_vec(vec![0.1, -0.3, 0.0, 0.0]);
    let guard = Some(orbstab::projection::EpsilonGuard::new(1e-3, 1e-3, 1e-3));
    let base = SimConfig { t_final: 15.0, guard, ..Default::default() };
    let a = sim(&s, &x0, &base);
    let b = sim(&s, &x0, &SimConfig { integrator: Integrator::DormandPrince { rtol: 1e-10, atol: 1e-12 }, ..base });
    let xa = DVector::from_column_slice(&a.last().x);
    assert!(dist(&b.last().x, &xa) < 1e-5, "{}", dist(&b.last().x, &xa));
}

#[test]
fn csv_has_the_documented_columns() {
    let s = double_integrator(-1.0, 2.0);
    let tr = sim(&s, &DVector::from_vec(vec![0.3, 0.2]), &SimConfig { t_final: 0.1, ..Default::default() });
    let csv = tr.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,x0,x1,u0,s,region,e0,e1,V,dist,F_n");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), 11);
    assert_eq!(first[5], "tube");
    assert_eq!(csv.lines().count(), tr.samples.len() + 1);
}

#[test]
fn trace_times_are_monotone_and_controls_finite() {
    let s = butterfly();
    let x0 = s.man.x_omega.clone() + DVector::from_vec(vec![0.1, 0.1, 0.0, 0.0]);
    let tr = sim(&s, &x0, &SimConfig { t_final: 3.0, ..Default::default() });
    assert!(tr.samples.windows(2).all(|w| w[1].t > w[0].t));
    assert!(tr.samples.iter().all(|smp| smp.u.iter().all(|u| u.is_finite())));
}

#[test]
fn lyapunov_monitor_on_orbit_is_zero() {
    let s = double_integrator(-1.0, 2.0);
    let tr = sim(&s, &s.man.state(0.2).unwrap(), &SimConfig { t_final: 2.0, ..Default::default() });
    let rep = lyapunov_monitor(&tr, &s.gains, 0.01).unwrap();
    assert!(rep.max_v < 1e-20);
    assert_eq!(rep.samples_used, 0);
}

#[test]
fn lyapunov_monitor_near_orbit_decreases() {
    let s = butterfly();
    let x0 = s.man.state(0.5).unwrap() + DVector::from_vec(vec![0.01, 0.0, 0.0, 0.005]);
    let tr = sim(&s, &x0, &SimConfig { t_final: 4.0, stop_tolerance: 0.0, ..Default::default() });
    let rep = lyapunov_monitor(&tr, &s.gains, 0.01).unwrap();
    assert!(rep.mu_hat > 0.0, "{rep:?}");
    assert!(rep.violation_fraction < 0.01);
}

#[test]
fn lyapunov_monitor_flags_a_destabilized_gain() {
    let s = double_integrator(-1.0, 2.0);
    let mut bad = s;
    let k = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
    bad.gains = GainSchedule::constant(bad.man.domain(), &k, &DMatrix::identity(2, 2), 0.0).unwrap();
    let x0 = bad.man.state(0.3).unwrap() + DVector::from_vec(vec![0.0, 1e-3]);
    let tr = sim(&bad, &x0, &SimConfig { t_final: 1.0, ..Default::default() });
    let rep = lyapunov_monitor(&tr, &bad.gains, 0.01).unwrap();
    assert!(rep.mu_hat <= 0.0, "{rep:?}");
    assert!(tr.events.iter().any(|e| matches!(e, SimEvent::VIncrease { .. })));
}

#[test]
fn invalid_configurations_are_rejected() {
    let s = double_integrator(-1.0, 2.0);
    let x0 = DVector::from_vec(vec![0.3, 0.2]);
    for cfg in [
        SimConfig { t_final: 0.0, ..Default::default() },
        SimConfig { integrator: Integrator::Rk4 { step: -1e-3 }, ..Default::default() },
        SimConfig { noise_std: vec![1e-3], ..Default::default() },
    ] {
        let r = run(&Plant::new(&s.inst.sys), &s.gains, &s.op, &s.man, &x0, &cfg);
        assert!(matches!(r, Err(SimError::InvalidConfig(_))));
    }
}

#[test]
fn noise_is_reproducible_from_the_seed() {
    let s = double_integrator(-1.0, 2.0);
    let x0 = DVector::from_vec(vec![0.3, 0.2]);
    let cfg = SimConfig { t_final: 1.0, noise_std: vec![1e-3, 1e-3], seed: 7, ..Default::default() };
    let a = sim(&s, &x0, &cfg);
    let b = sim(&s, &x0, &cfg);
    let c = sim(&s, &x0, &SimConfig { seed: 8, ..cfg });
    assert_eq!(a.last().x, b.last().x);
    assert_ne!(a.last().x, c.last().x);
}

#[test]
fn perturbation_names_are_checked() {
    let mut scales = std::collections::BTreeMap::new();
    scales.insert("m_ball".to_string(), 1.1);
    let p = perturbed_butterfly(Default::default(), &scales).unwrap();
    assert!((p.m_ball - 3.3e-3).abs() < 1e-15);
    scales.insert("mass".to_string(), 2.0);
    assert!(perturbed_butterfly(Default::default(), &scales).is_err());
}

#[test]
fn butterfly_scenarios_converge_with_positive_contact_force() {
    let s = butterfly();
    for name in ["fig5", "fig8"] {
        let sc = Scenario::standard(name, 0).unwrap();
        let (tr, summary) = simulate_scenario(&s.inst, &s.man, &s.op, &s.gains, &sc).unwrap();
        assert!(summary.converged, "{summary:?}");
        assert!(summary.min_normal_force.unwrap() > 0.0);
        assert!(!tr.events.iter().any(|e| matches!(e, SimEvent::NormalForceSign { .. })));
    }
}

#[test]
fn fig5_first_settles_near_the_start() {
    let s = butterfly();
    let sc = Scenario::standard("fig5", 0).unwrap();
    let (tr, _) = simulate_scenario(&s.inst, &s.man, &s.op, &s.gains, &sc).unwrap();
    // The state approaches x_α before s leaves the start region.
    let first_move = tr.samples.iter().position(|smp| smp.s > 0.05).unwrap();
    let near = tr.samples[..first_move].iter().map(|smp| dist(&smp.x, &s.man.x_alpha)).fold(f64::INFINITY, f64::min);
    assert!(near < 1e-2, "{near}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn double_integrator_transverse_error_decays(q in 0.1f64..0.8, delta in -0.05f64..0.05) {
        let k2 = 2.0;
        let s = double_integrator(-1.0, k2);
        let x0 = DVector::from_vec(vec![q, s.man.rho(q).unwrap() + delta]);
        let tr = sim(&s, &x0, &SimConfig { t_final: 2.0, ..Default::default() });
        for smp in tr.samples.iter().filter(|smp| smp.region == RegionLabel::Tube) {
            let bound = delta.abs() * (-(k2 - 1.0) * smp.t).exp() + 1e-9;
            prop_assert!(smp.e[1].abs() <= bound);
        }
    }
}
