//! Project configuration and the plan → synth → verify → simulate stages
//! shared by the command-line front end and the acceptance suite.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::Interval;
use crate::linearization::{orbit_point, ControlAffine};
use crate::maneuver::{double_integrator_maneuver, Maneuver, ValidationReport};
use crate::mechanics::{ButterflyModel, ButterflyParams, DoubleIntegrator, FrameShape, MechanicalControlAffine, MechanicalSystem};
use crate::projection::ProjectionOperator;
use crate::reduced_dynamics::{solve_center_location, ButterflyProfile, ExistenceReport, ReducedDynamics};
use crate::simulate::{perturbed_butterfly, run, Plant, Scenario, SimError, SimSummary, SimTrace};
use crate::synthesis::{
    assemble_dlmi, certify_design, lqr_boundary, reduced_uniqueness_check, solve_sdp, BoundaryHandling, Certificate,
    CertifyOptions, DlmiConfig, GainSchedule, ReducedCheck, SynthesisError,
};
use orbstab_sdp::{BarrierOptions, BarrierSolver};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("existence check failed: {0}")]
    Existence(String),
    #[error("synthesis infeasible: {0}")]
    Infeasible(String),
    #[error("certification failed: {}", .0.join("; "))]
    Certification(Vec<String>),
    #[error("not converged: {0}")]
    NotConverged(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Existence(_) => 2,
            PipelineError::Config(_) => 3,
            PipelineError::Infeasible(_) => 4,
            PipelineError::Certification(_) => 5,
            PipelineError::NotConverged(_) => 6,
        }
    }
}

impl From<SynthesisError> for PipelineError {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::GridTooCoarse { .. } | SynthesisError::InconsistentDimensions(_) => {
                PipelineError::Config(e.to_string())
            }
            SynthesisError::Infeasible(_)
            | SynthesisError::BackendFailure(_)
            | SynthesisError::NotStabilizable(_)
            | SynthesisError::RiccatiDivergence(_) => PipelineError::Infeasible(e.to_string()),
            SynthesisError::CertificationFailed(v) => PipelineError::Certification(v),
            other => PipelineError::Certification(vec![other.to_string()]),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(e.to_string())
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub model: ModelSpec,
    pub profile: ProfileSpec,
    pub projection: ProjectionSpec,
    #[serde(default)]
    pub synthesis: SynthesisSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Unset fields keep their default values.
    Butterfly {
        #[serde(default)]
        a: Option<f64>,
        #[serde(default)]
        b: Option<f64>,
        #[serde(default)]
        m_ball: Option<f64>,
        #[serde(default)]
        r_b: Option<f64>,
        #[serde(default)]
        j_b: Option<f64>,
        #[serde(default)]
        j_f: Option<f64>,
        #[serde(default)]
        g: Option<f64>,
    },
    DoubleIntegrator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    /// `Θ(s) = k(s − s_α)(s − s_e)(s_ω − s)²`; `s_e` is located automatically
    /// when omitted.
    SlopePolynomial {
        k: f64,
        s_alpha: f64,
        s_omega: f64,
        #[serde(default)]
        s_e: Option<f64>,
        #[serde(default = "default_knots")]
        knots: usize,
    },
    /// Ascending coefficients of `Θ`; empty means `Θ ≡ 0`.
    Polynomial {
        theta: Vec<f64>,
        s_alpha: f64,
        s_omega: f64,
        #[serde(default = "default_knots")]
        knots: usize,
    },
    /// Closed-form rest-to-rest motion `q: q_α → q_ω` of the double integrator.
    RestToRest { q_alpha: f64, q_omega: f64, kappa: f64 },
}

fn default_knots() -> usize {
    401
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProjectionSpec {
    /// `p(x) = sat(scale·x_index + offset)`.
    Saturation { index: usize, scale: f64, offset: f64 },
    /// Nearest point in the Euclidean metric.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryOption {
    /// `Y = K W` at both ends.
    Equality,
    /// Boundary DLMI blocks only; the end gains come out of the solve.
    Inline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSpec {
    pub lambda: f64,
    pub order: usize,
    pub grid: usize,
    pub boundary: BoundaryOption,
    /// LQR input weight `Γ = gamma·I`.
    pub gamma: f64,
    /// LQR state weight `Q = q_weight·I`.
    pub q_weight: f64,
    pub margin: f64,
    pub boundary_margin: f64,
    pub gain_weight: f64,
    pub certify_grid: usize,
    pub reduced_nodes: usize,
    pub reduced_tolerance: f64,
    /// Maneuver residual tolerance used by `verify`.
    pub maneuver_tolerance: f64,
}

impl Default for SynthesisSpec {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            order: 6,
            grid: 200,
            boundary: BoundaryOption::Equality,
            gamma: 1e5,
            q_weight: 1.0,
            margin: 1e-2,
            boundary_margin: 1e-6,
            gain_weight: 1.0,
            certify_grid: 1000,
            reduced_nodes: 2000,
            reduced_tolerance: 1e-4,
            maneuver_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    /// Names of built-in scenarios (see [`Scenario::standard`]).
    pub standard: Vec<String>,
    pub scenarios: Vec<Scenario>,
}

impl ProjectConfig {
    pub fn check(&self) -> Result<(), PipelineError> {
        let s = &self.synthesis;
        if !(s.lambda >= 0.0) || !s.lambda.is_finite() {
            return Err(config_err("lambda must be a nonnegative number"));
        }
        if s.order == 0 || s.grid < 2 {
            return Err(config_err("order must be positive and grid at least 2"));
        }
        if !(s.gamma > 0.0) || !(s.q_weight > 0.0) {
            return Err(config_err("LQR weights must be positive"));
        }
        match &self.profile {
            ProfileSpec::SlopePolynomial { s_alpha, s_omega, knots, .. } | ProfileSpec::Polynomial { s_alpha, s_omega, knots, .. } => {
                Interval::new(*s_alpha, *s_omega).map_err(config_err)?;
                if *knots < 8 {
                    return Err(config_err("profile needs at least 8 knots"));
                }
            }
            ProfileSpec::RestToRest { q_alpha, q_omega, kappa } => {
                Interval::new(*q_alpha, *q_omega).map_err(config_err)?;
                if !(*kappa > 0.0) {
                    return Err(config_err("kappa must be positive"));
                }
            }
        }
        match (&self.model, &self.profile) {
            (ModelSpec::DoubleIntegrator, ProfileSpec::RestToRest { .. }) => {}
            (ModelSpec::Butterfly { .. }, ProfileSpec::SlopePolynomial { .. } | ProfileSpec::Polynomial { .. }) => {}
            _ => return Err(config_err("profile kind does not fit the model")),
        }
        if let ProjectionSpec::Saturation { index, scale, .. } = self.projection {
            if index >= self.state_dim() {
                return Err(config_err(format!("saturation index {index} out of range")));
            }
            if !(scale != 0.0) {
                return Err(config_err("saturation scale must be nonzero"));
            }
        }
        for name in &self.simulation.standard {
            if Scenario::standard(name, 0).is_none() {
                return Err(config_err(format!("unknown scenario '{name}'")));
            }
        }
        for sc in &self.simulation.scenarios {
            if sc.offset.len() != self.state_dim() {
                return Err(config_err(format!("scenario '{}' offset has the wrong dimension", sc.name)));
            }
            sc.config.check(self.state_dim()).map_err(config_err)?;
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        match self.model {
            ModelSpec::Butterfly { .. } => 4,
            ModelSpec::DoubleIntegrator => 2,
        }
    }

    pub fn butterfly_params(&self) -> Option<ButterflyParams> {
        let ModelSpec::Butterfly { a, b, m_ball, r_b, j_b, j_f, g } = self.model else {
            return None;
        };
        let mut p = ButterflyParams::default();
        if let FrameShape::Butterfly { a: a0, b: b0 } = p.shape {
            p.shape = FrameShape::Butterfly { a: a.unwrap_or(a0), b: b.unwrap_or(b0) };
        }
        p.m_ball = m_ball.unwrap_or(p.m_ball);
        p.r_b = r_b.unwrap_or(p.r_b);
        p.j_b = j_b.unwrap_or(p.j_b);
        p.j_f = j_f.unwrap_or(p.j_f);
        p.g = g.unwrap_or(p.g);
        Some(p)
    }

    pub fn model(&self) -> Result<ModelInstance, PipelineError> {
        match self.butterfly_params() {
            Some(p) => ModelInstance::butterfly(p),
            None => ModelInstance::double_integrator(),
        }
    }

    /// Scenarios in configuration order: built-ins first, then custom ones.
    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out: Vec<Scenario> =
            self.simulation.standard.iter().filter_map(|n| Scenario::standard(n, 0)).collect();
        out.extend(self.simulation.scenarios.iter().cloned());
        out
    }
}

// ---------------------------------------------------------------------------
// Model

/// Plant built from a [`ModelSpec`].
#[derive(Clone)]
pub struct ModelInstance {
    pub sys: MechanicalControlAffine,
    pub butterfly: Option<ButterflyModel>,
}

impl ModelInstance {
    pub fn butterfly(p: ButterflyParams) -> Result<Self, PipelineError> {
        let model = ButterflyModel::new(p).map_err(config_err)?;
        let sys = model.system().to_control_affine().map_err(config_err)?;
        Ok(Self { sys, butterfly: Some(model) })
    }

    pub fn double_integrator() -> Result<Self, PipelineError> {
        let sys = MechanicalSystem::new(Arc::new(DoubleIntegrator)).to_control_affine().map_err(config_err)?;
        Ok(Self { sys, butterfly: None })
    }

    /// Same model with named parameters scaled.
    pub fn perturbed(&self, scales: &BTreeMap<String, f64>) -> Result<Self, PipelineError> {
        if scales.is_empty() {
            return Ok(self.clone());
        }
        match &self.butterfly {
            Some(m) => Self::butterfly(perturbed_butterfly(m.params, scales).map_err(config_err)?),
            None => Err(config_err("parameter perturbations are only defined for the butterfly model")),
        }
    }

    /// `F_n(x, ẋ)` for the butterfly; `None` otherwise.
    pub fn normal_force(&self) -> Option<impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + Sync + '_> {
        self.butterfly.as_ref().map(|m| {
            move |x: &DVector<f64>, xd: &DVector<f64>| {
                m.normal_force(&x.rows(0, 2).into_owned(), &x.rows(2, 2).into_owned(), &xd.rows(2, 2).into_owned())
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Stages

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanReport {
    pub existence: Option<ExistenceReport>,
    pub validation: ValidationReport,
}

pub struct PlanOutput {
    pub maneuver: Maneuver,
    pub report: PlanReport,
}

/// Plans the maneuver; `knots` overrides the profile's knot count.
pub fn plan(cfg: &ProjectConfig, knots: Option<usize>) -> Result<PlanOutput, PipelineError> {
    cfg.check()?;
    let inst = cfg.model()?;
    let (maneuver, existence) = match &cfg.profile {
        ProfileSpec::RestToRest { q_alpha, q_omega, kappa } => {
            (double_integrator_maneuver(*q_alpha, *q_omega, *kappa).map_err(config_err)?, None)
        }
        ProfileSpec::SlopePolynomial { k, s_alpha, s_omega, s_e, knots: kn } => {
            let model = inst.butterfly.expect("checked model");
            let task = Interval::new(*s_alpha, *s_omega).map_err(config_err)?;
            let s_e = match s_e {
                Some(v) => *v,
                None => solve_center_location(model, *k, task).map_err(|e| PipelineError::Existence(e.to_string()))?,
            };
            let prof = ButterflyProfile::standard(model, *k, task, s_e);
            reduce(model, prof, knots.unwrap_or(*kn))?
        }
        ProfileSpec::Polynomial { theta, s_alpha, s_omega, knots: kn } => {
            let model = inst.butterfly.expect("checked model");
            let task = Interval::new(*s_alpha, *s_omega).map_err(config_err)?;
            reduce(model, ButterflyProfile::new(model, theta.clone(), task), knots.unwrap_or(*kn))?
        }
    };
    let validation = maneuver.validate(&inst.sys, 200).map_err(config_err)?;
    Ok(PlanOutput { maneuver, report: PlanReport { existence, validation } })
}

fn reduce(model: ButterflyModel, prof: ButterflyProfile, knots: usize) -> Result<(Maneuver, Option<ExistenceReport>), PipelineError> {
    let rd = ReducedDynamics::new(model.system(), Arc::new(prof)).map_err(|e| PipelineError::Existence(e.to_string()))?;
    let report = rd.check_ptp_existence();
    let m = rd.construct_maneuver(knots).map_err(|e| PipelineError::Existence(e.to_string()))?;
    Ok((m, Some(report)))
}

pub fn operator(cfg: &ProjectConfig, maneuver: Arc<Maneuver>) -> Result<ProjectionOperator, PipelineError> {
    if maneuver.n() != cfg.state_dim() {
        return Err(config_err("maneuver dimension does not match the model"));
    }
    match cfg.projection {
        ProjectionSpec::Saturation { index, scale, offset } => {
            ProjectionOperator::coordinate_saturation(maneuver, index, scale, offset).map_err(config_err)
        }
        ProjectionSpec::Euclidean => ProjectionOperator::identity_lambda(maneuver).map_err(config_err),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryLqrReport {
    pub k_alpha: Vec<f64>,
    pub k_omega: Vec<f64>,
    pub residual_alpha: f64,
    pub residual_omega: f64,
    pub abscissa_alpha: f64,
    pub abscissa_omega: f64,
}

pub struct SynthOutput {
    pub gains: GainSchedule,
    pub certificate: Certificate,
    pub lqr: BoundaryLqrReport,
    pub vars: usize,
    pub blocks: usize,
}

/// Boundary LQR, DLMI assembly and solve, mandatory certification.
/// Returns the design even when certification fails; callers decide.
pub fn synthesize(
    cfg: &ProjectConfig,
    inst: &ModelInstance,
    maneuver: &Arc<Maneuver>,
    op: &ProjectionOperator,
    grid: Option<usize>,
) -> Result<SynthOutput, PipelineError> {
    let s = &cfg.synthesis;
    let sys: &dyn ControlAffine = &inst.sys;
    if maneuver.n() != sys.n() || maneuver.m() != sys.m() {
        return Err(config_err("maneuver dimension does not match the model"));
    }
    let d = maneuver.domain();
    let gamma = DMatrix::identity(sys.m(), sys.m()) * s.gamma;
    let q = DMatrix::identity(sys.n(), sys.n()) * s.q_weight;
    let pa = orbit_point(sys, maneuver, op, d.s_alpha).map_err(config_err)?;
    let pw = orbit_point(sys, maneuver, op, d.s_omega).map_err(config_err)?;
    let la = lqr_boundary(&pa.a_s, &pa.b_s, &gamma, &q)?;
    let lw = lqr_boundary(&pw.a_s, &pw.b_s, &gamma, &q)?;
    let lqr = BoundaryLqrReport {
        k_alpha: la.k.iter().copied().collect(),
        k_omega: lw.k.iter().copied().collect(),
        residual_alpha: la.residual,
        residual_omega: lw.residual,
        abscissa_alpha: la.abscissa,
        abscissa_omega: lw.abscissa,
    };
    let boundary = match s.boundary {
        BoundaryOption::Equality => BoundaryHandling::Equality { k_alpha: la.k, k_omega: lw.k },
        BoundaryOption::Inline => BoundaryHandling::InlineLmi,
    };
    let mut dc = DlmiConfig::new(d, s.lambda, boundary);
    dc.order = s.order;
    dc.grid = grid.unwrap_or(s.grid);
    dc.margin = s.margin;
    dc.boundary_margin = s.boundary_margin;
    dc.gain_weight = s.gain_weight;
    let problem = assemble_dlmi(sys, maneuver, op, &dc)?;
    let gains = solve_sdp(&problem, &BarrierSolver::new(BarrierOptions::default()))?;
    let certificate = certify_design(sys, maneuver, op, &gains, &certify_options(s, None))?;
    Ok(SynthOutput { gains, certificate, lqr, vars: problem.num_vars(), blocks: problem.problem.blocks.len() })
}

fn certify_options(s: &SynthesisSpec, grid: Option<usize>) -> CertifyOptions {
    CertifyOptions { dense_grid: grid.unwrap_or(s.certify_grid), ..Default::default() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub maneuver: ValidationReport,
    pub maneuver_ok: bool,
    pub certificate: Certificate,
    pub reduced: Option<ReducedCheck>,
    pub reduced_error: Option<String>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn failures(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !self.maneuver_ok {
            v.push(format!("maneuver residual {:.3e} or geometry checks failed", self.maneuver.max_p6_residual));
        }
        v.extend(self.certificate.violations.iter().cloned());
        if let Some(e) = &self.reduced_error {
            v.push(e.clone());
        }
        v
    }
}

/// Re-runs maneuver validation, certification and the reduced check on
/// denser grids than synthesis used.
pub fn verify(
    cfg: &ProjectConfig,
    inst: &ModelInstance,
    maneuver: &Arc<Maneuver>,
    op: &ProjectionOperator,
    gains: &GainSchedule,
    grid: Option<usize>,
) -> Result<VerifyReport, PipelineError> {
    let s = &cfg.synthesis;
    let sys: &dyn ControlAffine = &inst.sys;
    if gains.n() != sys.n() || gains.m() != sys.m() || maneuver.n() != sys.n() {
        return Err(config_err("gain schedule dimensions do not match the model"));
    }
    let gd = gains.domain();
    let md = maneuver.domain();
    if (gd.s_alpha - md.s_alpha).abs() > 1e-9 || (gd.s_omega - md.s_omega).abs() > 1e-9 {
        return Err(config_err("gain schedule domain does not match the maneuver"));
    }
    let validation = maneuver.validate(sys, 1000).map_err(config_err)?;
    let maneuver_ok = validation.passes(s.maneuver_tolerance);
    let certificate = certify_design(sys, maneuver, op, gains, &certify_options(s, grid))?;
    let (reduced, reduced_error) = match reduced_uniqueness_check(sys, maneuver, op, gains, s.reduced_nodes, s.reduced_tolerance) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let passed = maneuver_ok && certificate.passed() && reduced_error.is_none();
    Ok(VerifyReport { maneuver: validation, maneuver_ok, certificate, reduced, reduced_error, passed })
}

/// Runs one scenario against the nominal design, on the plant with the
/// scenario's parameter perturbations applied.
pub fn simulate_scenario(
    inst: &ModelInstance,
    maneuver: &Maneuver,
    op: &ProjectionOperator,
    gains: &GainSchedule,
    scenario: &Scenario,
) -> Result<(SimTrace, SimSummary), PipelineError> {
    let plant_model = inst.perturbed(&scenario.config.param_scales)?;
    let x0 = scenario.initial_state(maneuver).map_err(config_err)?;
    let nf = plant_model.normal_force();
    let plant = Plant {
        sys: &plant_model.sys,
        normal_force: nf.as_ref().map(|f| f as &(dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Sync)),
    };
    let trace = run(&plant, gains, op, maneuver, &x0, &scenario.config).map_err(|e| match e {
        SimError::InvalidConfig(m) => PipelineError::Config(m),
        other => PipelineError::NotConverged(other.to_string()),
    })?;
    let summary = SimSummary::from_trace(&scenario.name, &trace, scenario.omega_tolerance);
    Ok((trace, summary))
}
