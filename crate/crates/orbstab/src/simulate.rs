//! Closed-loop simulation of `ẋ = f(x) + B(x)(u + d)` under the feedback
//! `u = u⋆(p(x̃)) + K(p(x̃))(x̃ − x⋆(p(x̃)))`, where `x̃` is the measured state.
//!
//! Time advances in control ticks of `1/sample_rate` seconds. Noise and the
//! ε-guard are updated once per tick; the control is either re-evaluated at
//! every integrator stage (continuous) or held over the tick.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::CurveError;
use crate::linearization::ControlAffine;
use crate::maneuver::Maneuver;
use crate::mechanics::ButterflyParams;
use crate::numerics::{dopri45, rk4_step, AdaptiveOptions};
use crate::projection::{EpsilonGuard, ProjectionError, ProjectionOperator, RegionLabel};
use crate::synthesis::{GainSchedule, SynthesisError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("integration failed at t = {t}")]
    IntegrationFailure { t: f64 },
    #[error("state left the operator domain at t = {t} (distance {distance:.3e})")]
    LeftDomain { t: f64, distance: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Integrator {
    Rk4 { step: f64 },
    DormandPrince { rtol: f64, atol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlUpdate {
    /// Re-evaluate the feedback at every integrator stage.
    Continuous,
    /// Evaluate once per tick and hold.
    SampleHold,
}

/// `d(t) = amplitude·sin(frequency·t)` added to every input channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedDisturbance {
    pub amplitude: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub t_final: f64,
    pub integrator: Integrator,
    pub control: ControlUpdate,
    /// Control/noise/guard update rate in Hz.
    pub sample_rate: f64,
    /// Trace output interval; rounded to a whole number of ticks.
    pub output_dt: f64,
    /// Per-state measurement noise standard deviations; empty disables noise.
    #[serde(default)]
    pub noise_std: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Scale factors applied to named plant parameters (informational here;
    /// see [`perturbed_butterfly`]).
    #[serde(default)]
    pub param_scales: BTreeMap<String, f64>,
    #[serde(default)]
    pub disturbance: Option<MatchedDisturbance>,
    #[serde(default)]
    pub guard: Option<EpsilonGuard>,
    /// Stop once `‖x − x_ω‖` stays below this value for `stop_hold` seconds.
    pub stop_tolerance: f64,
    pub stop_hold: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_final: 10.0,
            integrator: Integrator::Rk4 { step: 1e-3 },
            control: ControlUpdate::Continuous,
            sample_rate: 1000.0,
            output_dt: 1e-2,
            noise_std: Vec::new(),
            seed: 0,
            param_scales: BTreeMap::new(),
            disturbance: None,
            guard: None,
            stop_tolerance: 1e-6,
            stop_hold: 0.5,
        }
    }
}

impl SimConfig {
    pub fn check(&self, n: usize) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        if !(self.t_final > 0.0) {
            return bad("t_final must be positive");
        }
        if !(self.sample_rate > 0.0) || !(self.output_dt > 0.0) {
            return bad("sample rate and output interval must be positive");
        }
        match self.integrator {
            Integrator::Rk4 { step } if !(step > 0.0) => return bad("RK4 step must be positive"),
            Integrator::DormandPrince { rtol, atol } if !(rtol > 0.0) || !(atol > 0.0) => {
                return bad("tolerances must be positive")
            }
            _ => {}
        }
        if !self.noise_std.is_empty() && (self.noise_std.len() != n || self.noise_std.iter().any(|s| !(*s >= 0.0))) {
            return bad("noise_std needs one nonnegative entry per state");
        }
        Ok(())
    }
}

/// Plant integrated by the simulator, optionally with a contact-force monitor
/// `F_n(x, ẋ)`.
pub struct Plant<'a> {
    pub sys: &'a dyn ControlAffine,
    pub normal_force: Option<&'a (dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Sync)>,
}

impl<'a> Plant<'a> {
    pub fn new(sys: &'a dyn ControlAffine) -> Self {
        Self { sys, normal_force: None }
    }
}

/// Feedback evaluation at one measured state.
#[derive(Debug, Clone)]
pub struct ControlEval {
    pub u: DVector<f64>,
    pub s: f64,
    pub region: RegionLabel,
    pub e: DVector<f64>,
}

pub struct Controller<'a> {
    pub maneuver: &'a Maneuver,
    pub op: &'a ProjectionOperator,
    pub gains: &'a GainSchedule,
}

impl Controller<'_> {
    /// Step 1: `p = p(x)` (with the guard offset); step 2: `u⋆(p)`, `K(p)`,
    /// `x⋆(p)`; step 3: `u = u⋆ + K e`.
    pub fn evaluate(&self, x: &DVector<f64>, eps: f64) -> Result<ControlEval, SimError> {
        let p = self.op.project_guarded(x, eps)?;
        let e = x - self.maneuver.state(p.s)?;
        let u = self.maneuver.control(p.s)? + self.gains.k(p.s)? * &e;
        Ok(ControlEval { u, s: p.s, region: p.region, e })
    }
}

pub fn control_law(
    gains: &GainSchedule,
    op: &ProjectionOperator,
    maneuver: &Maneuver,
    x: &DVector<f64>,
) -> Result<DVector<f64>, SimError> {
    Ok(Controller { maneuver, op, gains }.evaluate(x, 0.0)?.u)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub s: f64,
    pub region: RegionLabel,
    pub e: Vec<f64>,
    pub v: f64,
    pub dist_to_orbit: f64,
    pub normal_force: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimEvent {
    RegionChange { t: f64, from: RegionLabel, to: RegionLabel },
    GuardActive { t: f64 },
    GuardInactive { t: f64 },
    NormalForceSign { t: f64, value: f64 },
    /// Interval on which the recorded `V` increased, with the total rise.
    VIncrease { t_start: f64, t_end: f64, rise: f64 },
    EarlyStop { t: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTrace {
    pub samples: Vec<Sample>,
    /// Control applied at each tick (start of tick), for smoothness checks.
    pub tick_times: Vec<f64>,
    pub tick_controls: Vec<Vec<f64>>,
    pub events: Vec<SimEvent>,
    pub x_omega: Vec<f64>,
}

impl SimTrace {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trace has at least the initial sample")
    }

    pub fn final_error_to_omega(&self) -> f64 {
        let x = &self.last().x;
        x.iter().zip(&self.x_omega).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    pub fn min_normal_force(&self) -> Option<f64> {
        self.samples.iter().filter_map(|s| s.normal_force).reduce(f64::min)
    }

    /// First time after which `dist_to_orbit` stays below `tol`.
    pub fn settling_time(&self, tol: f64) -> Option<f64> {
        let last_bad = self.samples.iter().rposition(|s| s.dist_to_orbit >= tol);
        match last_bad {
            None => Some(self.samples[0].t),
            Some(k) if k + 1 < self.samples.len() => Some(self.samples[k + 1].t),
            Some(_) => None,
        }
    }

    /// Columns: `t, x_0..x_{n-1}, u_0..u_{m-1}, s, region, e_0..e_{n-1}, V, dist, F_n`.
    pub fn to_csv(&self) -> String {
        let n = self.samples.first().map_or(0, |s| s.x.len());
        let m = self.samples.first().map_or(0, |s| s.u.len());
        let mut out = String::from("t");
        for i in 0..n {
            let _ = write!(out, ",x{i}");
        }
        for i in 0..m {
            let _ = write!(out, ",u{i}");
        }
        out.push_str(",s,region");
        for i in 0..n {
            let _ = write!(out, ",e{i}");
        }
        out.push_str(",V,dist,F_n\n");
        for smp in &self.samples {
            let _ = write!(out, "{:e}", smp.t);
            for v in smp.x.iter().chain(&smp.u) {
                let _ = write!(out, ",{v:e}");
            }
            let _ = write!(out, ",{:e},{}", smp.s, region_name(smp.region));
            for v in &smp.e {
                let _ = write!(out, ",{v:e}");
            }
            let _ = write!(out, ",{:e},{:e},", smp.v, smp.dist_to_orbit);
            if let Some(f) = smp.normal_force {
                let _ = write!(out, "{f:e}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn region_name(r: RegionLabel) -> &'static str {
    match r {
        RegionLabel::HAlpha => "H_alpha",
        RegionLabel::Tube => "tube",
        RegionLabel::HOmega => "H_omega",
    }
}

fn lyapunov_value(gains: &GainSchedule, s: f64, e: &DVector<f64>) -> Result<f64, SimError> {
    let (r, _) = gains.r_jet(s)?;
    Ok((e.transpose() * r * e)[(0, 0)])
}

/// Integrates the closed loop from `x0` and records the trace.
pub fn run(
    plant: &Plant,
    gains: &GainSchedule,
    op: &ProjectionOperator,
    maneuver: &Maneuver,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<SimTrace, SimError> {
    let sys = plant.sys;
    let n = sys.n();
    cfg.check(n)?;
    if x0.len() != n || maneuver.n() != n || gains.n() != n {
        return Err(SimError::InvalidConfig("dimension mismatch between plant, maneuver, gains and x0".into()));
    }
    let ctl = Controller { maneuver, op, gains };
    let tick = 1.0 / cfg.sample_rate;
    let n_ticks = (cfg.t_final / tick).round().max(1.0) as usize;
    let out_every = ((cfg.output_dt / tick).round() as usize).max(1);
    let substeps = match cfg.integrator {
        Integrator::Rk4 { step } => ((tick / step).round() as usize).max(1),
        Integrator::DormandPrince { .. } => 1,
    };
    let adaptive = match cfg.integrator {
        Integrator::DormandPrince { rtol, atol } => AdaptiveOptions { rtol, atol, h_init: tick, h_max: tick, ..Default::default() },
        Integrator::Rk4 { .. } => AdaptiveOptions::default(),
    };
    let mut h_adapt = tick;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normals: Vec<Normal<f64>> = cfg.noise_std.iter().map(|&s| Normal::new(0.0, s).expect("checked std")).collect();
    let draw = |rng: &mut ChaCha8Rng| DVector::from_iterator(n, (0..n).map(|i| normals.get(i).map_or(0.0, |d| d.sample(rng))));

    let mut guard = cfg.guard;
    let disturbance = |t: f64| cfg.disturbance.map_or(0.0, |d| d.amplitude * (d.frequency * t).sin());
    let closed_rhs = |t: f64, x: &DVector<f64>, u: &DVector<f64>| {
        let mut w = u.clone();
        w.add_scalar_mut(disturbance(t));
        sys.rhs(x, &w)
    };

    let mut x = x0.clone();
    let mut trace = SimTrace {
        samples: Vec::new(),
        tick_times: Vec::with_capacity(n_ticks),
        tick_controls: Vec::with_capacity(n_ticks),
        events: Vec::new(),
        x_omega: maneuver.x_omega.as_slice().to_vec(),
    };
    let mut last_region: Option<RegionLabel> = None;
    let mut last_fn: Option<f64> = None;
    let mut guard_on = false;
    let mut near_since: Option<f64> = None;

    for k in 0..=n_ticks {
        let t = k as f64 * tick;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::IntegrationFailure { t });
        }
        let noise = draw(&mut rng);
        let xm = &x + &noise;
        if let Some(g) = guard.as_mut() {
            g.update((&xm - &maneuver.x_alpha).norm(), if k == 0 { 0.0 } else { tick });
            let on = g.eps > 0.0;
            if on != guard_on {
                trace.events.push(if on { SimEvent::GuardActive { t } } else { SimEvent::GuardInactive { t } });
                guard_on = on;
            }
        }
        let eps = guard.map_or(0.0, |g| g.eps);
        let eval = ctl.evaluate(&xm, eps).map_err(|e| match e {
            SimError::Projection(ProjectionError::NotInDomain { distance, .. }) => SimError::LeftDomain { t, distance },
            other => other,
        })?;
        if last_region.is_some_and(|r| r != eval.region) {
            trace.events.push(SimEvent::RegionChange { t, from: last_region.unwrap(), to: eval.region });
        }
        last_region = Some(eval.region);
        trace.tick_times.push(t);
        trace.tick_controls.push(eval.u.as_slice().to_vec());

        let fnorm = plant.normal_force.map(|f| f(&x, &closed_rhs(t, &x, &eval.u)));
        if let (Some(prev), Some(now)) = (last_fn, fnorm) {
            if prev.signum() != now.signum() {
                trace.events.push(SimEvent::NormalForceSign { t, value: now });
            }
        }
        if fnorm.is_some() {
            last_fn = fnorm;
        }

        if k % out_every == 0 || k == n_ticks {
            let e_true = &x - maneuver.state(eval.s)?;
            trace.samples.push(Sample {
                t,
                x: x.as_slice().to_vec(),
                u: eval.u.as_slice().to_vec(),
                s: eval.s,
                region: eval.region,
                v: lyapunov_value(gains, eval.s, &eval.e)?,
                e: e_true.as_slice().to_vec(),
                dist_to_orbit: maneuver.dist_to_orbit(&x),
                normal_force: fnorm,
            });
        }

        if (&x - &maneuver.x_omega).norm() < cfg.stop_tolerance {
            let since = *near_since.get_or_insert(t);
            if t - since >= cfg.stop_hold {
                trace.events.push(SimEvent::EarlyStop { t });
                if trace.samples.last().map_or(true, |s| s.t < t) {
                    let e_true = &x - maneuver.state(eval.s)?;
                    trace.samples.push(Sample {
                        t,
                        x: x.as_slice().to_vec(),
                        u: eval.u.as_slice().to_vec(),
                        s: eval.s,
                        region: eval.region,
                        v: lyapunov_value(gains, eval.s, &eval.e)?,
                        e: e_true.as_slice().to_vec(),
                        dist_to_orbit: maneuver.dist_to_orbit(&x),
                        normal_force: fnorm,
                    });
                }
                break;
            }
        } else {
            near_since = None;
        }
        if k == n_ticks {
            break;
        }

        // Advance one tick with the measurement noise and ε held.
        let held = eval.u.clone();
        let mut fail = None;
        let mut f = |tt: f64, y: &DVector<f64>| -> DVector<f64> {
            let u = match cfg.control {
                ControlUpdate::SampleHold => held.clone(),
                ControlUpdate::Continuous => match ctl.evaluate(&(y + &noise), eps) {
                    Ok(c) => c.u,
                    Err(e) => {
                        fail.get_or_insert(e);
                        held.clone()
                    }
                },
            };
            closed_rhs(tt, y, &u)
        };
        match cfg.integrator {
            Integrator::Rk4 { .. } => {
                let h = tick / substeps as f64;
                for j in 0..substeps {
                    x = rk4_step(&mut f, t + j as f64 * h, &x, h);
                }
            }
            Integrator::DormandPrince { .. } => {
                x = dopri45(&mut f, t, t + tick, &x, &mut h_adapt, &adaptive).map_err(|e| SimError::IntegrationFailure { t: e.t })?;
            }
        }
        if let Some(e) = fail {
            return Err(match e {
                SimError::Projection(ProjectionError::NotInDomain { distance, .. }) => SimError::LeftDomain { t, distance },
                other => other,
            });
        }
    }
    trace.events.extend(v_increase_episodes(&trace.samples));
    Ok(trace)
}

fn v_increase_episodes(samples: &[Sample]) -> Vec<SimEvent> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for k in 1..=samples.len() {
        let rising = k < samples.len() && samples[k].v > samples[k - 1].v;
        match (rising, start) {
            (true, None) => start = Some(k - 1),
            (false, Some(a)) => {
                out.push(SimEvent::VIncrease { t_start: samples[a].t, t_end: samples[k - 1].t, rise: samples[k - 1].v - samples[a].v });
                start = None;
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// `q`-quantile of the pointwise decay rates `−V̇/V`.
    pub mu_hat: f64,
    /// Fraction of used samples with `V̇ > −μ̂ V`.
    pub violation_fraction: f64,
    /// Fraction of used samples with `V̇ > 0`.
    pub increase_fraction: f64,
    pub samples_used: usize,
    pub max_v: f64,
}

/// `V(t) = eᵀR(p)e` with `R = W⁻¹`; `V̇` by central differences on the trace.
/// Samples with `‖e‖ < 1e-9` are excluded.
pub fn lyapunov_monitor(trace: &SimTrace, gains: &GainSchedule, quantile: f64) -> Result<LyapunovReport, SimError> {
    let v: Vec<f64> = trace
        .samples
        .iter()
        .map(|s| lyapunov_value(gains, s.s, &DVector::from_column_slice(&s.e)))
        .collect::<Result<_, _>>()?;
    let mut rates = Vec::new();
    let mut increases = 0;
    for k in 1..v.len().saturating_sub(1) {
        let e = DVector::from_column_slice(&trace.samples[k].e).norm();
        if e < 1e-9 || v[k] <= 0.0 {
            continue;
        }
        let dv = (v[k + 1] - v[k - 1]) / (trace.samples[k + 1].t - trace.samples[k - 1].t);
        if dv > 0.0 {
            increases += 1;
        }
        rates.push(-dv / v[k]);
    }
    let max_v = v.iter().copied().fold(0.0, f64::max);
    if rates.is_empty() {
        return Ok(LyapunovReport { mu_hat: f64::INFINITY, violation_fraction: 0.0, increase_fraction: 0.0, samples_used: 0, max_v });
    }
    let mut sorted = rates.clone();
    sorted.sort_by(f64::total_cmp);
    let idx = ((quantile.clamp(0.0, 1.0) * (sorted.len() - 1) as f64).floor()) as usize;
    let mu_hat = sorted[idx];
    let viol = rates.iter().filter(|&&r| r < mu_hat).count();
    Ok(LyapunovReport {
        mu_hat,
        violation_fraction: viol as f64 / rates.len() as f64,
        increase_fraction: increases as f64 / rates.len() as f64,
        samples_used: rates.len(),
        max_v,
    })
}

/// Finite-difference slopes of the tick-level control: the largest
/// `‖Δu‖/Δt` within `window` seconds of `t_event`, and the largest outside it
/// but within `4·window`.
pub fn control_slopes_near(trace: &SimTrace, t_event: f64, window: f64) -> (f64, f64) {
    let mut near: f64 = 0.0;
    let mut around: f64 = 0.0;
    for k in 1..trace.tick_times.len() {
        let t = trace.tick_times[k];
        let dt = t - trace.tick_times[k - 1];
        let du = trace.tick_controls[k].iter().zip(&trace.tick_controls[k - 1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let slope = du / dt;
        let d = (t - t_event).abs();
        if d <= window {
            near = near.max(slope);
        } else if d <= 4.0 * window {
            around = around.max(slope);
        }
    }
    (near, around)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSummary {
    pub scenario: String,
    pub t_end: f64,
    pub final_dist_to_orbit: f64,
    pub final_error_to_omega: f64,
    pub settling_time_1e3: Option<f64>,
    pub min_normal_force: Option<f64>,
    pub region_changes: usize,
    pub converged: bool,
}

impl SimSummary {
    /// Convergence means `dist(𝒪, x) < 1e-3` at the end and `‖x(T) − x_ω‖ < omega_tol`.
    pub fn from_trace(name: &str, trace: &SimTrace, omega_tol: f64) -> Self {
        let last = trace.last();
        let fe = trace.final_error_to_omega();
        Self {
            scenario: name.to_string(),
            t_end: last.t,
            final_dist_to_orbit: last.dist_to_orbit,
            final_error_to_omega: fe,
            settling_time_1e3: trace.settling_time(1e-3),
            min_normal_force: trace.min_normal_force(),
            region_changes: trace.events.iter().filter(|e| matches!(e, SimEvent::RegionChange { .. })).count(),
            converged: last.dist_to_orbit < 1e-3 && fe < omega_tol,
        }
    }
}

/// Plant parameters with named scale factors applied.
pub fn perturbed_butterfly(base: ButterflyParams, scales: &BTreeMap<String, f64>) -> Result<ButterflyParams, SimError> {
    let mut p = base;
    for (name, &f) in scales {
        let slot = match name.as_str() {
            "m_ball" => &mut p.m_ball,
            "r_b" => &mut p.r_b,
            "j_b" => &mut p.j_b,
            "j_f" => &mut p.j_f,
            "g" => &mut p.g,
            other => return Err(SimError::InvalidConfig(format!("unknown parameter '{other}'"))),
        };
        *slot *= f;
    }
    Ok(p)
}

/// One of the standard closed-loop experiments on the butterfly maneuver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Start at `x_α + offset` (`from_omega = false`) or `x_ω + offset`.
    pub from_omega: bool,
    pub offset: Vec<f64>,
    #[serde(default)]
    pub config: SimConfig,
    /// Acceptance bound on `‖x(T) − x_ω‖`.
    pub omega_tolerance: f64,
}

impl Scenario {
    /// `fig5`: nominal start near `x_α`; `fig7`: same start with +10% ball
    /// mass, measurement noise and a matched disturbance; `fig8`: start near
    /// `x_ω`.
    pub fn standard(name: &str, seed: u64) -> Option<Self> {
        let guard = EpsilonGuard::new(1e-3, 1e-3, 1e-3);
        let base = SimConfig { t_final: 60.0, guard: Some(guard), seed, ..Default::default() };
        let s = match name {
            "fig5" => Scenario {
                name: name.into(),
                from_omega: false,
                offset: vec![0.1, -0.3, 0.0, 0.0],
                config: base,
                omega_tolerance: 1e-2,
            },
            "fig7" => Scenario {
                name: name.into(),
                from_omega: false,
                offset: vec![0.1, -0.3, 0.0, 0.0],
                config: SimConfig {
                    noise_std: vec![1e-3; 4],
                    param_scales: BTreeMap::from([("m_ball".to_string(), 1.1)]),
                    disturbance: Some(MatchedDisturbance { amplitude: 1e-4, frequency: 1.0 }),
                    ..base
                },
                omega_tolerance: 5e-2,
            },
            "fig8" => Scenario {
                name: name.into(),
                from_omega: true,
                offset: vec![0.1, 0.1, 0.0, 0.0],
                config: base,
                omega_tolerance: 1e-2,
            },
            _ => return None,
        };
        Some(s)
    }

    pub fn names() -> [&'static str; 3] {
        ["fig5", "fig7", "fig8"]
    }

    pub fn initial_state(&self, m: &Maneuver) -> Result<DVector<f64>, SimError> {
        let base = if self.from_omega { &m.x_omega } else { &m.x_alpha };
        if self.offset.len() != base.len() {
            return Err(SimError::InvalidConfig("offset dimension".into()));
        }
        Ok(base + DVector::from_column_slice(&self.offset))
    }
}
