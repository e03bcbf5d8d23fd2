//! Motion planning for mechanical systems with one degree of underactuation.
//!
//! Along synchronization functions `q = Φ(s)` with `ṡ = ρ(s)`, the unactuated
//! direction imposes `α ρ′ρ + β ρ² + γ = 0`. This module evaluates the
//! coefficients, checks the existence conditions for a rest-to-rest
//! heteroclinic solution, and builds the resulting maneuver.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::{stencil_slopes, Curve, CurveError, Interval};
use crate::maneuver::{Maneuver, ManeuverError};
use crate::mechanics::{pseudo_inverse, ButterflyModel, MechanicalSystem};
use crate::numerics::{brent_root, dopri45, gauss_kronrod15, integrate, AdaptiveOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReducedError {
    #[error("input matrix must have full rank n_q − 1")]
    RankDeficientBu,
    #[error("dimension error: {0}")]
    DimensionError(String),
    #[error("α vanishes near s = {0}")]
    AlphaVanishes(f64),
    #[error("s = {s} is not an equilibrium (γ = {gamma})")]
    NotAnEquilibrium { s: f64, gamma: f64 },
    #[error("boundary point s = {s} is not hyperbolic (ν = {nu})")]
    NotHyperbolic { s: f64, nu: f64 },
    #[error("existence conditions fail: {0}")]
    ExistenceCheckFailed(String),
    #[error("level curve gives ρ² = {value} < 0 at s = {s}")]
    NegativeRhoSquared { s: f64, value: f64 },
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("reduced dynamics integration failed at t = {0}")]
    Integration(f64),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Maneuver(#[from] ManeuverError),
}

/// Synchronization functions `Φ: S → ℝ^{n_q}` with two derivatives.
pub trait Synchronization: Send + Sync {
    fn domain(&self) -> Interval;
    fn dof(&self) -> usize;
    /// `[Φ(s), Φ′(s), Φ″(s)]`.
    fn jet(&self, s: f64) -> [DVector<f64>; 3];
}

/// Profile given directly by a vector curve.
#[derive(Debug, Clone)]
pub struct CurveProfile {
    pub phi: Curve,
}

impl Synchronization for CurveProfile {
    fn domain(&self) -> Interval {
        self.phi.domain()
    }
    fn dof(&self) -> usize {
        self.phi.shape().0
    }
    fn jet(&self, s: f64) -> [DVector<f64>; 3] {
        let j = self.phi.jet(s).expect("s inside profile domain");
        let col = |m: DMatrix<f64>| DVector::from_column_slice(m.as_slice());
        [col(j.value), col(j.d1), col(j.d2)]
    }
}

fn poly_eval(c: &[f64], s: f64) -> [f64; 3] {
    let (mut v, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for &a in c.iter().rev() {
        d2 = d2 * s + 2.0 * d1;
        d1 = d1 * s + v;
        v = v * s + a;
    }
    [v, d1, d2]
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            c[i + j] += x * y;
        }
    }
    c
}

/// `Θ(s) = k (s − s_α)(s − s_e)(s_ω − s)²` as ascending coefficients.
pub fn slope_polynomial(k: f64, s_alpha: f64, s_e: f64, s_omega: f64) -> Vec<f64> {
    let c = poly_mul(&[-s_alpha, 1.0], &[-s_e, 1.0]);
    let c = poly_mul(&c, &poly_mul(&[s_omega, -1.0], &[s_omega, -1.0]));
    c.into_iter().map(|v| v * k).collect()
}

/// Butterfly profile `Φ(s) = (Θ(s) − ψ(s), s)`: the frame tilt that holds
/// the ball-centre tangent at slope angle `Θ`.
#[derive(Debug, Clone)]
pub struct ButterflyProfile {
    pub model: ButterflyModel,
    /// Ascending polynomial coefficients of `Θ`.
    pub theta: Vec<f64>,
    pub domain: Interval,
}

impl ButterflyProfile {
    pub fn new(model: ButterflyModel, theta: Vec<f64>, domain: Interval) -> Self {
        Self { model, theta, domain }
    }

    pub fn standard(model: ButterflyModel, k: f64, domain: Interval, s_e: f64) -> Self {
        let theta = slope_polynomial(k, domain.s_alpha, s_e, domain.s_omega);
        Self { model, theta, domain }
    }

    /// `[Θ, Θ′, Θ″]` at `s`.
    pub fn slope_angle(&self, s: f64) -> [f64; 3] {
        if self.theta.is_empty() {
            return [0.0; 3];
        }
        poly_eval(&self.theta, s)
    }
}

impl Synchronization for ButterflyProfile {
    fn domain(&self) -> Interval {
        self.domain
    }
    fn dof(&self) -> usize {
        2
    }
    fn jet(&self, s: f64) -> [DVector<f64>; 3] {
        let g = self.model.geometry(s).expect("profile inside the working arc");
        let [t, t1, t2] = self.slope_angle(s);
        [
            DVector::from_vec(vec![t - g.psi, s]),
            DVector::from_vec(vec![t1 - g.dpsi, 1.0]),
            DVector::from_vec(vec![t2 - g.ddpsi, 0.0]),
        ]
    }
}

/// Everything the reduced dynamics needs at one `s`.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub beta_hat: f64,
    /// `γ′(s)`.
    pub d_gamma: f64,
    /// `𝔄 = MΦ′`, `𝔅 = MΦ″ + C(Φ, Φ′)Φ′`, `𝔊 = G(Φ)`.
    pub frak_a: DVector<f64>,
    pub frak_b: DVector<f64>,
    pub frak_g: DVector<f64>,
    pub phi: [DVector<f64>; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquilibriumKind {
    Center,
    Saddle,
    Degenerate,
}

/// Classification threshold on `ν`.
pub const NU_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteriorEquilibrium {
    pub s: f64,
    pub nu: f64,
    pub kind: EquilibriumKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExistenceReport {
    pub s_alpha: f64,
    pub s_omega: f64,
    pub tangent_nonvanishing: bool,
    pub boundary_equilibria: bool,
    pub alpha_min_abs: f64,
    pub alpha_nonvanishing: bool,
    pub interior_equilibria: Vec<InteriorEquilibrium>,
    pub single_center: bool,
    pub nu_alpha: f64,
    pub nu_omega: f64,
    /// `ν ≤ 0` at both ends.
    pub boundary_nu_ok: bool,
    /// Strict `ν < 0` at each end (hyperbolic saddle).
    pub alpha_hyperbolic: bool,
    pub omega_hyperbolic: bool,
    pub integral: f64,
    pub integral_scale: f64,
    pub integral_ok: bool,
    pub warnings: Vec<String>,
}

impl ExistenceReport {
    pub fn passes(&self) -> bool {
        self.tangent_nonvanishing
            && self.boundary_equilibria
            && self.alpha_nonvanishing
            && self.single_center
            && self.boundary_nu_ok
            && self.integral_ok
    }

    pub fn center(&self) -> Option<f64> {
        match self.interior_equilibria.as_slice() {
            [e] if e.kind == EquilibriumKind::Center => Some(e.s),
            _ => None,
        }
    }
}

#[derive(Clone)]
pub struct ReducedDynamics {
    pub sys: MechanicalSystem,
    pub profile: Arc<dyn Synchronization>,
    /// Unit left annihilator of `Bu`, first nonzero entry positive.
    pub bu_perp: DMatrix<f64>,
    pub bu_dagger: DMatrix<f64>,
}

impl std::fmt::Debug for ReducedDynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ReducedDynamics(n_q = {})", self.sys.dof())
    }
}

/// Unit left annihilator of a `n × (n−1)` matrix.
pub fn left_annihilator(bu: &DMatrix<f64>) -> Result<DMatrix<f64>, ReducedError> {
    let (n, m) = bu.shape();
    if n < 2 || m + 1 != n {
        return Err(ReducedError::DimensionError(format!("need m = n_q − 1, got n_q = {n}, m = {m}")));
    }
    let sv = bu.clone().singular_values();
    if sv.min() <= 1e-12 * sv.max().max(1e-300) {
        return Err(ReducedError::RankDeficientBu);
    }
    let eig = (bu * bu.transpose()).symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let mut v = eig.eigenvectors.column(k).into_owned();
    v /= v.norm();
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v = -v;
        }
    }
    Ok(DMatrix::from_row_slice(1, n, v.as_slice()))
}

fn dot_row(row: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (row * v)[0]
}

/// Cumulative level-curve integrals on a cell grid: `log Ψ(s_α, ·)` at the
/// cell edges and the per-cell integrals of `Ψ(s_α, τ) α γ`.
struct LevelTable {
    edges: Vec<f64>,
    log_psi: Vec<f64>,
    cells: Vec<f64>,
    /// `∫_{s_α}^{edge_k}`.
    head: Vec<f64>,
    /// `∫_{edge_k}^{s_ω}`.
    tail: Vec<f64>,
}

impl ReducedDynamics {
    pub fn new(sys: MechanicalSystem, profile: Arc<dyn Synchronization>) -> Result<Self, ReducedError> {
        if profile.dof() != sys.dof() {
            return Err(ReducedError::DimensionError("profile and system DOF differ".into()));
        }
        let bu = sys.input_matrix();
        let bu_perp = left_annihilator(&bu)?;
        Ok(Self { bu_dagger: pseudo_inverse(&bu), sys, profile, bu_perp })
    }

    pub fn domain(&self) -> Interval {
        self.profile.domain()
    }

    pub fn coefficients(&self, s: f64) -> Coefficients {
        let phi = self.profile.jet(s);
        let [q, dq, ddq] = &phi;
        let m = self.sys.inertia(q);
        let c = self.sys.coriolis(q, dq).expect("finite Coriolis matrix");
        let (_, c2) = self.sys.coriolis_parts(q, dq);
        let frak_a = &m * dq;
        let frak_b = &m * ddq + c * dq;
        let frak_g = self.sys.gravity(q);
        let d_gamma = dot_row(&self.bu_perp, &(self.sys.gravity_jacobian(q) * dq));
        Coefficients {
            s,
            alpha: dot_row(&self.bu_perp, &frak_a),
            beta: dot_row(&self.bu_perp, &frak_b),
            gamma: dot_row(&self.bu_perp, &frak_g),
            beta_hat: dot_row(&self.bu_perp, &(c2 * dq)),
            d_gamma,
            frak_a,
            frak_b,
            frak_g,
            phi,
        }
    }

    pub fn alpha(&self, s: f64) -> f64 {
        self.coefficients(s).alpha
    }

    pub fn gamma(&self, s: f64) -> f64 {
        let q = &self.profile.jet(s)[0];
        dot_row(&self.bu_perp, &self.sys.gravity(q))
    }

    /// `ν(s) = γ′(s)/α(s)`.
    pub fn nu(&self, s: f64) -> f64 {
        let c = self.coefficients(s);
        c.d_gamma / c.alpha
    }

    fn psi_integrand(&self, s: f64) -> f64 {
        let c = self.coefficients(s);
        2.0 * c.beta_hat / c.alpha
    }

    fn check_alpha(&self, a: f64, b: f64) -> Result<(), ReducedError> {
        let (lo, hi) = (a.min(b), a.max(b));
        let n = 64;
        let scale = self.alpha_scale();
        let mut sign = 0.0;
        for k in 0..=n {
            let s = lo + (hi - lo) * k as f64 / n as f64;
            let al = self.alpha(s);
            if al.abs() <= 1e-10 * scale || (sign != 0.0 && al.signum() != sign) {
                return Err(ReducedError::AlphaVanishes(s));
            }
            sign = al.signum();
        }
        Ok(())
    }

    fn alpha_scale(&self) -> f64 {
        self.domain().uniform(21).iter().map(|&s| self.alpha(s).abs()).fold(0.0, f64::max)
    }

    /// `Ψ(s_r, s) = exp(∫_{s_r}^{s} 2β̂/α)`.
    pub fn integrating_factor(&self, s_r: f64, s: f64) -> Result<f64, ReducedError> {
        self.check_alpha(s_r, s)?;
        Ok(self.log_psi(s_r, s)?.exp())
    }

    fn log_psi(&self, s_r: f64, s: f64) -> Result<f64, ReducedError> {
        if s == s_r {
            return Ok(0.0);
        }
        integrate(|t| self.psi_integrand(t), s_r, s, 1e-11, 1e-14)
            .map_err(|e| ReducedError::Quadrature(format!("log Ψ: estimate {}, error {}", e.estimate, e.error)))
    }

    /// `ρ²(s_to)` on the level curve through `(s_from, ρ_from)`. Negative
    /// values mean the level curve has no real point at `s_to`.
    pub fn rho_from_level_curve(&self, s_from: f64, rho_from: f64, s_to: f64) -> Result<f64, ReducedError> {
        if s_from == s_to {
            return Ok(rho_from * rho_from);
        }
        self.check_alpha(s_from, s_to)?;
        let a1 = self.alpha(s_from);
        let a2 = self.alpha(s_to);
        // ∫_{s1}^{s2} Ψ(s1, τ) α γ dτ with Ψ accumulated piecewise.
        let n = 64;
        let h = (s_to - s_from) / n as f64;
        let mut log_psi = 0.0;
        let mut total = 0.0;
        for k in 0..n {
            let a = s_from + k as f64 * h;
            let b = if k + 1 == n { s_to } else { a + h };
            let mut f = |t: f64| {
                let inner = gauss_kronrod15(&mut |u| self.psi_integrand(u), a, t).0;
                let c = self.coefficients(t);
                (log_psi + inner).exp() * c.alpha * c.gamma
            };
            total += gauss_kronrod15(&mut f, a, b).0;
            log_psi += gauss_kronrod15(&mut |u| self.psi_integrand(u), a, b).0;
        }
        let psi21 = (-log_psi).exp();
        Ok(psi21 * (a1 * a1 * rho_from * rho_from - 2.0 * total) / (a2 * a2))
    }

    fn build_table(&self, cells: usize) -> LevelTable {
        let d = self.domain();
        let edges = d.uniform(cells + 1);
        let mut log_psi = vec![0.0; cells + 1];
        let mut cell_vals = vec![0.0; cells];
        for k in 0..cells {
            let (a, b) = (edges[k], edges[k + 1]);
            let base = log_psi[k];
            let mut f = |t: f64| {
                let inner = gauss_kronrod15(&mut |u| self.psi_integrand(u), a, t).0;
                let c = self.coefficients(t);
                (base + inner).exp() * c.alpha * c.gamma
            };
            cell_vals[k] = gauss_kronrod15(&mut f, a, b).0;
            log_psi[k + 1] = base + gauss_kronrod15(&mut |u| self.psi_integrand(u), a, b).0;
        }
        let mut head = vec![0.0; cells + 1];
        for k in 0..cells {
            head[k + 1] = head[k] + cell_vals[k];
        }
        let mut tail = vec![0.0; cells + 1];
        for k in (0..cells).rev() {
            tail[k] = tail[k + 1] + cell_vals[k];
        }
        LevelTable { edges, log_psi, cells: cell_vals, head, tail }
    }

    /// `(log Ψ(s_α, s), ∫_{s_α}^{s} Ψαγ, ∫_{s}^{s_ω} Ψαγ)` from the table.
    fn table_at(&self, t: &LevelTable, s: f64) -> (f64, f64, f64) {
        let n = t.cells.len();
        let d = self.domain();
        let w = d.width() / n as f64;
        let k = (((s - d.s_alpha) / w).floor() as isize).clamp(0, n as isize - 1) as usize;
        let a = t.edges[k];
        let base = t.log_psi[k];
        let lp = base + gauss_kronrod15(&mut |u| self.psi_integrand(u), a, s).0;
        let mut f = |x: f64| {
            let inner = gauss_kronrod15(&mut |u| self.psi_integrand(u), a, x).0;
            let c = self.coefficients(x);
            (base + inner).exp() * c.alpha * c.gamma
        };
        let part = if s > a { gauss_kronrod15(&mut f, a, s).0 } else { 0.0 };
        let head = t.head[k] + part;
        let tail = t.tail[k + 1] + (t.cells[k] - part);
        (lp, head, tail)
    }

    /// `∫_{s_α}^{s_ω} Ψ(s_α, τ) α(τ) γ(τ) dτ` and `∫ |Ψαγ|`.
    pub fn separatrix_integral(&self, cells: usize) -> (f64, f64) {
        let t = self.build_table(cells);
        let abs: f64 = t.cells.iter().map(|c| c.abs()).sum();
        (t.head[cells], abs)
    }

    pub fn classify_equilibrium(&self, s_e: f64) -> Result<EquilibriumKind, ReducedError> {
        let c = self.coefficients(s_e);
        let scale = self.gamma_scale();
        if c.gamma.abs() >= 1e-8 * scale {
            return Err(ReducedError::NotAnEquilibrium { s: s_e, gamma: c.gamma });
        }
        if c.alpha.abs() <= 1e-10 * self.alpha_scale() {
            return Err(ReducedError::AlphaVanishes(s_e));
        }
        Ok(kind_of(c.d_gamma / c.alpha))
    }

    fn gamma_scale(&self) -> f64 {
        let m = self.domain().uniform(201).iter().map(|&s| self.gamma(s).abs()).fold(0.0, f64::max);
        if m > 0.0 {
            m
        } else {
            1.0
        }
    }

    /// `ρ′(ŝ)` at a hyperbolic boundary equilibrium: `±√(−ν(ŝ))`.
    pub fn boundary_slope(&self, s_hat: f64) -> Result<f64, ReducedError> {
        let d = self.domain();
        let nu = self.nu(s_hat);
        boundary_slope_from_nu(nu, s_hat, d)
    }

    /// Interior zeros of `γ` by sign-change scan and root refinement.
    pub fn interior_equilibria(&self, scan: usize) -> Vec<InteriorEquilibrium> {
        let d = self.domain();
        let grid = d.uniform(scan + 1);
        let mut out = Vec::new();
        let inner = &grid[1..grid.len() - 1];
        let vals: Vec<f64> = inner.iter().map(|&s| self.gamma(s)).collect();
        for k in 0..inner.len().saturating_sub(1) {
            let (g0, g1) = (vals[k], vals[k + 1]);
            let s = if g0 == 0.0 {
                Some(inner[k])
            } else if g0 * g1 < 0.0 {
                brent_root(|s| self.gamma(s), inner[k], inner[k + 1], 1e-12)
            } else {
                None
            };
            if let Some(s) = s {
                let nu = self.nu(s);
                out.push(InteriorEquilibrium { s, nu, kind: kind_of(nu) });
            }
        }
        out
    }

    pub fn check_ptp_existence(&self) -> ExistenceReport {
        let d = self.domain();
        let mut warnings = Vec::new();
        let grid = d.uniform(2001);
        let alpha_min_abs = grid.iter().map(|&s| self.alpha(s).abs()).fold(f64::INFINITY, f64::min);
        let alphas: Vec<f64> = grid.iter().map(|&s| self.alpha(s)).collect();
        let same_sign = alphas.iter().all(|a| a.signum() == alphas[0].signum());
        let alpha_nonvanishing = same_sign && alpha_min_abs > 1e-8 * self.alpha_scale();
        let tangent_nonvanishing =
            self.profile.jet(d.s_alpha)[1].norm() > 0.0 && self.profile.jet(d.s_omega)[1].norm() > 0.0;
        let gs = self.gamma_scale();
        let boundary_equilibria =
            self.gamma(d.s_alpha).abs() < 1e-8 * gs && self.gamma(d.s_omega).abs() < 1e-8 * gs;
        let interior = self.interior_equilibria(2000);
        let single_center = interior.len() == 1 && interior[0].kind == EquilibriumKind::Center;
        let nu_alpha = self.nu(d.s_alpha);
        let nu_omega = self.nu(d.s_omega);
        let boundary_nu_ok = nu_alpha <= NU_THRESHOLD && nu_omega <= NU_THRESHOLD;
        let alpha_hyperbolic = nu_alpha < -NU_THRESHOLD;
        let omega_hyperbolic = nu_omega < -NU_THRESHOLD;
        for (name, h, nu) in [("s_alpha", alpha_hyperbolic, nu_alpha), ("s_omega", omega_hyperbolic, nu_omega)] {
            if !h && nu.abs() <= NU_THRESHOLD {
                warnings.push(format!("{name} is a degenerate equilibrium (ν = {nu:.3e}); convergence there is not exponential"));
            }
        }
        let (integral, integral_scale) = if alpha_nonvanishing { self.separatrix_integral(400) } else { (f64::NAN, 0.0) };
        let integral_ok = integral.abs() < 1e-6 * integral_scale.max(f64::MIN_POSITIVE);
        ExistenceReport {
            s_alpha: d.s_alpha,
            s_omega: d.s_omega,
            tangent_nonvanishing,
            boundary_equilibria,
            alpha_min_abs,
            alpha_nonvanishing,
            interior_equilibria: interior,
            single_center,
            nu_alpha,
            nu_omega,
            boundary_nu_ok,
            alpha_hyperbolic,
            omega_hyperbolic,
            integral,
            integral_scale,
            integral_ok,
            warnings,
        }
    }

    /// Builds `(x⋆, u⋆, ρ)` on a Chebyshev grid of `grid` knots.
    pub fn construct_maneuver(&self, grid: usize) -> Result<Maneuver, ReducedError> {
        let report = self.check_ptp_existence();
        if !report.passes() {
            return Err(ReducedError::ExistenceCheckFailed(summarize_failures(&report)));
        }
        let s_e = report.center().expect("single center");
        let d = self.domain();
        let table = self.build_table(400);
        let knots = d.chebyshev(grid.max(8));
        let nq = self.sys.dof();
        let slope_alpha = self.boundary_slope(d.s_alpha)?;
        let slope_omega = if report.omega_hyperbolic { self.boundary_slope(d.s_omega)? } else { 0.0 };
        let slope_alpha = if report.alpha_hyperbolic { slope_alpha } else { 0.0 };

        let mut rho_v = Vec::with_capacity(knots.len());
        let mut rho_d = Vec::with_capacity(knots.len());
        let mut coeffs = Vec::with_capacity(knots.len());
        for (i, &s) in knots.iter().enumerate() {
            let c = self.coefficients(s);
            let (rho, drho) = if i == 0 {
                (0.0, slope_alpha)
            } else if i == knots.len() - 1 {
                (0.0, slope_omega)
            } else {
                let (lp, head, tail) = self.table_at(&table, s);
                // Forward from s_α before the centre, backward from s_ω after it.
                let r2 = if s <= s_e { -2.0 * head } else { 2.0 * tail } / ((lp.exp()) * c.alpha * c.alpha);
                if !(r2 > 0.0) {
                    return Err(ReducedError::NegativeRhoSquared { s, value: r2 });
                }
                let rho = r2.sqrt();
                (rho, -(c.beta * r2 + c.gamma) / (c.alpha * rho))
            };
            rho_v.push(rho);
            rho_d.push(drho);
            coeffs.push(c);
        }

        let scalar = |v: f64| DMatrix::from_element(1, 1, v);
        let rho_curve = Curve::hermite(
            knots.clone(),
            rho_v.iter().map(|&v| scalar(v)).collect(),
            rho_d.iter().map(|&v| scalar(v)).collect(),
        )?;
        let mut xv = Vec::with_capacity(knots.len());
        let mut xd = Vec::with_capacity(knots.len());
        let mut uv = Vec::with_capacity(knots.len());
        for (i, c) in coeffs.iter().enumerate() {
            let (rho, drho) = (rho_v[i], rho_d[i]);
            let [q, dq, ddq] = &c.phi;
            let mut x = DMatrix::zeros(2 * nq, 1);
            let mut dx = DMatrix::zeros(2 * nq, 1);
            for j in 0..nq {
                x[(j, 0)] = q[j];
                x[(nq + j, 0)] = dq[j] * rho;
                dx[(j, 0)] = dq[j];
                dx[(nq + j, 0)] = ddq[j] * rho + dq[j] * drho;
            }
            xv.push(x);
            xd.push(dx);
            let u = &self.bu_dagger * (&c.frak_a * (drho * rho) + &c.frak_b * (rho * rho) + &c.frak_g);
            uv.push(DMatrix::from_column_slice(u.len(), 1, u.as_slice()));
        }
        let ud = stencil_slopes(&knots, &uv);
        let x_star = Curve::hermite(knots.clone(), xv, xd)?;
        let u_star = Curve::hermite(knots, uv, ud)?;
        Ok(Maneuver::new(x_star, u_star, rho_curve)?)
    }

    /// Integrates `α s̈ + β ṡ² + γ = 0` in time from `(s1, ṡ1)` and returns
    /// `ṡ` on arrival at `s2`.
    pub fn reduced_ode_speed(&self, s1: f64, sdot1: f64, s2: f64) -> Result<f64, ReducedError> {
        let mut f = |_t: f64, y: &DVector<f64>| {
            let c = self.coefficients(y[0]);
            DVector::from_vec(vec![y[1], -(c.beta * y[1] * y[1] + c.gamma) / c.alpha])
        };
        let opts = AdaptiveOptions { rtol: 1e-12, atol: 1e-14, ..Default::default() };
        let dir = (s2 - s1).signum();
        let mut y = DVector::from_vec(vec![s1, sdot1]);
        let mut t = 0.0;
        let mut h = 1e-3;
        let chunk = 0.02;
        for _ in 0..200_000 {
            let next = dopri45(&mut f, t, t + chunk, &y, &mut h, &opts).map_err(|e| ReducedError::Integration(e.t))?;
            if (next[0] - s2) * dir >= 0.0 {
                // Newton on the arrival time inside this chunk.
                let mut tau = chunk * (s2 - y[0]) / (next[0] - y[0]);
                let mut z = next.clone();
                for _ in 0..30 {
                    let mut hh = 1e-4;
                    z = dopri45(&mut f, t, t + tau, &y, &mut hh, &opts).map_err(|e| ReducedError::Integration(e.t))?;
                    let step = (z[0] - s2) / z[1];
                    tau -= step;
                    if step.abs() < 1e-15 * (1.0 + tau.abs()) {
                        break;
                    }
                }
                return Ok(z[1]);
            }
            if next[1] * dir <= 0.0 {
                return Err(ReducedError::Integration(t + chunk));
            }
            y = next;
            t += chunk;
        }
        Err(ReducedError::Integration(t))
    }
}

fn kind_of(nu: f64) -> EquilibriumKind {
    if nu > NU_THRESHOLD {
        EquilibriumKind::Center
    } else if nu < -NU_THRESHOLD {
        EquilibriumKind::Saddle
    } else {
        EquilibriumKind::Degenerate
    }
}

/// `+√(−ν)` at `s_α`, `−√(−ν)` at `s_ω`.
pub fn boundary_slope_from_nu(nu: f64, s_hat: f64, domain: Interval) -> Result<f64, ReducedError> {
    if !(nu < -NU_THRESHOLD) {
        return Err(ReducedError::NotHyperbolic { s: s_hat, nu });
    }
    let r = (-nu).sqrt();
    if (s_hat - domain.s_alpha).abs() <= (s_hat - domain.s_omega).abs() {
        Ok(r)
    } else {
        Ok(-r)
    }
}

fn summarize_failures(r: &ExistenceReport) -> String {
    let mut v = Vec::new();
    if !r.tangent_nonvanishing {
        v.push("Φ′ vanishes at a boundary".to_string());
    }
    if !r.boundary_equilibria {
        v.push("boundary configurations are not equilibria".to_string());
    }
    if !r.alpha_nonvanishing {
        v.push(format!("α vanishes (min |α| = {:.3e})", r.alpha_min_abs));
    }
    if !r.single_center {
        v.push(format!("expected one interior centre, found {:?}", r.interior_equilibria));
    }
    if !r.boundary_nu_ok {
        v.push(format!("ν(s_α) = {:.3e}, ν(s_ω) = {:.3e} must be ≤ 0", r.nu_alpha, r.nu_omega));
    }
    if !r.integral_ok {
        v.push(format!("separatrix integral {:.3e} (scale {:.3e})", r.integral, r.integral_scale));
    }
    v.join("; ")
}

/// Finds `s_e` for the standard slope profile so that the separatrix
/// integral vanishes, i.e. the level curve through `(s_α, 0)` ends at `(s_ω, 0)`.
pub fn solve_center_location(model: ButterflyModel, k: f64, domain: Interval) -> Result<f64, ReducedError> {
    let integral = |s_e: f64| -> f64 {
        let prof = ButterflyProfile::standard(model, k, domain, s_e);
        match ReducedDynamics::new(model.system(), Arc::new(prof)) {
            Ok(rd) => rd.separatrix_integral(200).0,
            Err(_) => f64::NAN,
        }
    };
    let n = 40;
    let w = domain.width();
    let pts: Vec<f64> = (1..n).map(|i| domain.s_alpha + w * i as f64 / n as f64).collect();
    let vals: Vec<f64> = pts.iter().map(|&s| integral(s)).collect();
    for i in 0..pts.len() - 1 {
        if vals[i].is_finite() && vals[i + 1].is_finite() && vals[i] * vals[i + 1] <= 0.0 {
            return brent_root(integral, pts[i], pts[i + 1], 1e-13)
                .ok_or_else(|| ReducedError::ExistenceCheckFailed("root refinement failed".into()));
        }
    }
    Err(ReducedError::ExistenceCheckFailed("no centre location closes the separatrix".into()))
}
