//! Projection operators `p: x ↦ s` onto a maneuver's parameter interval, the
//! row vector `𝓟(s) = ∇p(x⋆(s))`, its derivative along the orbit, and the
//! transverse projection matrix `E⊥ = I − F𝓟`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::{Curve, CurveError};
use crate::maneuver::Maneuver;
use crate::numerics::{brent_root, golden_minimize};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("state is {distance} from the orbit, beyond the working distance {limit}")]
    NotInDomain { distance: f64, limit: f64 },
    #[error("two candidate projections s = {s1} and s = {s2} tie")]
    AmbiguousProjection { s1: f64, s2: f64 },
    #[error("s = {0} is not in the open interior")]
    OutOfDomain(f64),
    #[error("operator construction failed: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionLabel {
    HAlpha,
    Tube,
    HOmega,
}

#[derive(Debug, Clone)]
pub enum ProjectionKind {
    /// `p(x) = argmin_s (x − x⋆(s))ᵀ Λ(s) (x − x⋆(s))` with `Λ` an `n×n` PSD curve.
    LambdaBased { lambda: Curve },
    /// `p(x) = sat(scale·x_index + offset)`.
    CoordinateSaturation { index: usize, scale: f64, offset: f64 },
}

/// Guard against trapping at the initial equilibrium: the lower
/// saturation limit of `p` is raised to `s_α + ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonGuard {
    pub eps: f64,
    pub eps_max: f64,
    pub delta: f64,
    pub rate: f64,
    /// Hold `ε = eps_max` instead of evolving it.
    #[serde(default)]
    pub constant: bool,
}

impl EpsilonGuard {
    /// `ε̇ = rate·sign(delta − dist)`, clamped to `[0, eps_max]`.
    pub fn new(eps_max: f64, delta: f64, rate: f64) -> Self {
        Self { eps: 0.0, eps_max, delta, rate, constant: false }
    }

    pub fn constant(eps: f64) -> Self {
        Self { eps, eps_max: eps, delta: 0.0, rate: 0.0, constant: true }
    }

    pub fn update(&mut self, dist_to_alpha: f64, dt: f64) {
        if self.constant {
            self.eps = self.eps_max;
            return;
        }
        let dir = (self.delta - dist_to_alpha).signum();
        self.eps = (self.eps + self.rate * dir * dt).clamp(0.0, self.eps_max);
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionOperator {
    pub kind: ProjectionKind,
    pub maneuver: Arc<Maneuver>,
    pub working_distance: f64,
    pub coarse_cells: usize,
}

/// Result of a projection query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub s: f64,
    pub region: RegionLabel,
}

impl ProjectionOperator {
    pub fn lambda_based(maneuver: Arc<Maneuver>, lambda: Curve) -> Result<Self, ProjectionError> {
        let n = maneuver.n();
        if lambda.shape() != (n, n) {
            return Err(ProjectionError::Invalid(format!("Λ must be {n}×{n}")));
        }
        let wd = 0.5 * maneuver.arc_length();
        let op = Self { kind: ProjectionKind::LambdaBased { lambda }, maneuver, working_distance: wd, coarse_cells: 200 };
        for s in op.maneuver.domain().uniform(50) {
            let f = op.maneuver.tangent(s)?;
            let den = (f.transpose() * op.lambda_at(s)? * &f)[(0, 0)];
            if !(den > 0.0) {
                return Err(ProjectionError::Invalid(format!("FᵀΛF = {den} not positive at s = {s}")));
            }
        }
        op.check_identity()?;
        Ok(op)
    }

    pub fn identity_lambda(maneuver: Arc<Maneuver>) -> Result<Self, ProjectionError> {
        let n = maneuver.n();
        let lambda = Curve::constant(maneuver.domain(), DMatrix::identity(n, n));
        Self::lambda_based(maneuver, lambda)
    }

    pub fn coordinate_saturation(
        maneuver: Arc<Maneuver>,
        index: usize,
        scale: f64,
        offset: f64,
    ) -> Result<Self, ProjectionError> {
        if index >= maneuver.n() || scale == 0.0 || !scale.is_finite() {
            return Err(ProjectionError::Invalid("bad coordinate or scale".into()));
        }
        // A saturation map is defined on the whole state space.
        let op = Self {
            kind: ProjectionKind::CoordinateSaturation { index, scale, offset },
            maneuver,
            working_distance: f64::INFINITY,
            coarse_cells: 200,
        };
        let grid = op.maneuver.domain().uniform(200);
        let mut last = f64::NEG_INFINITY;
        for s in grid {
            let v = scale * op.maneuver.state(s)?[index];
            if !(v > last) {
                return Err(ProjectionError::Invalid(format!("coordinate {index} not strictly monotone in s")));
            }
            last = v;
        }
        op.check_identity()?;
        Ok(op)
    }

    fn check_identity(&self) -> Result<(), ProjectionError> {
        for s in self.maneuver.domain().uniform(50) {
            let x = self.maneuver.state(s)?;
            let p = self.project_unchecked(&x, 0.0)?.s;
            if (p - s).abs() > 1e-8 * (1.0 + s.abs()) {
                return Err(ProjectionError::Invalid(format!("p(x⋆({s})) = {p}")));
            }
        }
        Ok(())
    }

    fn lambda_at(&self, s: f64) -> Result<DMatrix<f64>, CurveError> {
        match &self.kind {
            ProjectionKind::LambdaBased { lambda } => lambda.eval(s),
            ProjectionKind::CoordinateSaturation { .. } => unreachable!("Λ queried on a saturation operator"),
        }
    }

    fn label(&self, s: f64, lo: f64) -> RegionLabel {
        let d = self.maneuver.domain();
        if s <= lo {
            RegionLabel::HAlpha
        } else if s >= d.s_omega {
            RegionLabel::HOmega
        } else {
            RegionLabel::Tube
        }
    }

    pub fn project(&self, x: &DVector<f64>) -> Result<Projected, ProjectionError> {
        self.project_guarded(x, 0.0)
    }

    /// Projection with the lower limit raised to `s_α + eps`.
    pub fn project_guarded(&self, x: &DVector<f64>, eps: f64) -> Result<Projected, ProjectionError> {
        let p = self.project_unchecked(x, eps)?;
        let dist = (x - self.maneuver.state(p.s)?).norm();
        if dist > self.working_distance {
            return Err(ProjectionError::NotInDomain { distance: dist, limit: self.working_distance });
        }
        Ok(p)
    }

    fn project_unchecked(&self, x: &DVector<f64>, eps: f64) -> Result<Projected, ProjectionError> {
        let d = self.maneuver.domain();
        let lo = (d.s_alpha + eps).min(d.s_omega);
        match &self.kind {
            ProjectionKind::CoordinateSaturation { index, scale, offset } => {
                let s = (scale * x[*index] + offset).clamp(lo, d.s_omega);
                Ok(Projected { s, region: self.label(s, lo) })
            }
            ProjectionKind::LambdaBased { .. } => {
                let s = self.argmin(x, lo, d.s_omega)?;
                Ok(Projected { s, region: self.label(s, lo) })
            }
        }
    }

    fn cost(&self, x: &DVector<f64>, s: f64) -> f64 {
        let e = x - self.maneuver.state(s).expect("s in domain");
        (e.transpose() * self.lambda_at(s).expect("s in domain") * &e)[(0, 0)]
    }

    /// `dJ/ds` for the Λ-weighted distance.
    fn cost_slope(&self, x: &DVector<f64>, s: f64) -> f64 {
        let ProjectionKind::LambdaBased { lambda } = &self.kind else { unreachable!() };
        let e = x - self.maneuver.state(s).expect("s in domain");
        let f = self.maneuver.tangent(s).expect("s in domain");
        let l = lambda.eval(s).expect("s in domain");
        let dl = lambda.derivative(s, 1).expect("s in domain");
        (e.transpose() * &dl * &e)[(0, 0)] - 2.0 * (f.transpose() * &l * &e)[(0, 0)]
    }

    fn argmin(&self, x: &DVector<f64>, lo: f64, hi: f64) -> Result<f64, ProjectionError> {
        let n = self.coarse_cells.max(2);
        let grid: Vec<f64> = (0..=n).map(|k| if k == n { hi } else { lo + (hi - lo) * k as f64 / n as f64 }).collect();
        let vals: Vec<f64> = grid.iter().map(|&s| self.cost(x, s)).collect();
        let mut minima: Vec<usize> = (0..=n)
            .filter(|&k| (k == 0 || vals[k] <= vals[k - 1]) && (k == n || vals[k] <= vals[k + 1]))
            .collect();
        minima.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let best = minima[0];
        let tie = 1e-9 * (1.0 + vals[best].abs());
        if let Some(&other) = minima.iter().skip(1).find(|&&k| k.abs_diff(best) > 1 && vals[k] - vals[best] <= tie) {
            // Refine both before declaring a genuine tie.
            let (s1, j1) = self.refine(x, &grid, best, lo, hi);
            let (s2, j2) = self.refine(x, &grid, other, lo, hi);
            if (j1 - j2).abs() <= tie && (s1 - s2).abs() > 2.0 * (hi - lo) / n as f64 {
                return Err(ProjectionError::AmbiguousProjection { s1, s2 });
            }
            return Ok(if j1 <= j2 { s1 } else { s2 });
        }
        Ok(self.refine(x, &grid, best, lo, hi).0)
    }

    fn refine(&self, x: &DVector<f64>, grid: &[f64], k: usize, lo: f64, hi: f64) -> (f64, f64) {
        let n = grid.len() - 1;
        let a = grid[k.saturating_sub(1)];
        let b = grid[(k + 1).min(n)];
        let tol = 1e-13 * (1.0 + hi.abs().max(lo.abs()));
        let slope = |s: f64| self.cost_slope(x, s);
        let mut cands = vec![grid[k]];
        // Saturated endpoints: the slope points out of the interval.
        if k == 0 && slope(lo) >= 0.0 {
            cands.push(lo);
        }
        if k == n && slope(hi) <= 0.0 {
            cands.push(hi);
        }
        let mut bracketed = false;
        for (u, v) in [(a, grid[k]), (grid[k], b)] {
            if u < v && slope(u) <= 0.0 && slope(v) >= 0.0 {
                bracketed = true;
                match brent_root(slope, u, v, tol) {
                    Some(r) => cands.push(r),
                    None => cands.push(golden_minimize(|s| self.cost(x, s), u, v, tol)),
                }
            }
        }
        if !bracketed && a < b {
            cands.push(golden_minimize(|s| self.cost(x, s), a, b, tol));
        }
        cands
            .into_iter()
            .map(|s| (s, self.cost(x, s)))
            .fold((f64::NAN, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc })
    }

    pub fn region(&self, x: &DVector<f64>) -> Result<RegionLabel, ProjectionError> {
        Ok(self.project(x)?.region)
    }

    fn require_interior(&self, s: f64) -> Result<(), ProjectionError> {
        if self.maneuver.domain().is_interior(s) {
            Ok(())
        } else {
            Err(ProjectionError::OutOfDomain(s))
        }
    }

    /// `𝓟(s)` on the open interior.
    pub fn projection_jacobian(&self, s: f64) -> Result<DMatrix<f64>, ProjectionError> {
        self.require_interior(s)?;
        self.tube_jacobian(s)
    }

    /// `𝓟(s)` including its one-sided tube limits at the endpoints.
    pub fn tube_jacobian(&self, s: f64) -> Result<DMatrix<f64>, ProjectionError> {
        let f = self.maneuver.tangent(s)?;
        let n = f.len();
        match &self.kind {
            ProjectionKind::LambdaBased { lambda } => {
                let l = lambda.eval(s)?;
                let a = &l * &f;
                let den = f.dot(&a);
                Ok(DMatrix::from_row_slice(1, n, (a / den).as_slice()))
            }
            ProjectionKind::CoordinateSaturation { index, .. } => {
                let mut row = DMatrix::zeros(1, n);
                row[(0, *index)] = 1.0 / f[*index];
                Ok(row)
            }
        }
    }

    /// `𝓟′(s) = d𝓟/ds` on the open interior.
    pub fn projection_hessian_term(&self, s: f64) -> Result<DMatrix<f64>, ProjectionError> {
        self.require_interior(s)?;
        self.tube_hessian_term(s)
    }

    pub fn tube_hessian_term(&self, s: f64) -> Result<DMatrix<f64>, ProjectionError> {
        let f = self.maneuver.tangent(s)?;
        let fp = self.maneuver.tangent_prime(s)?;
        let n = f.len();
        match &self.kind {
            ProjectionKind::LambdaBased { lambda } => {
                let l = lambda.eval(s)?;
                let dl = lambda.derivative(s, 1)?;
                let a = &l * &f;
                let da = &dl * &f + &l * &fp;
                let den = f.dot(&a);
                let dden = fp.dot(&a) + f.dot(&da);
                let row = da / den - a * (dden / (den * den));
                Ok(DMatrix::from_row_slice(1, n, row.as_slice()))
            }
            ProjectionKind::CoordinateSaturation { scale, .. } if self.affine_coordinate(*scale) => {
                Ok(DMatrix::zeros(1, n))
            }
            ProjectionKind::CoordinateSaturation { index, .. } => {
                let mut row = DMatrix::zeros(1, n);
                row[(0, *index)] = -fp[*index] / (f[*index] * f[*index]);
                Ok(row)
            }
        }
    }

    /// Whether the saturated coordinate of `x⋆` is exactly `(s − offset)/scale`.
    fn affine_coordinate(&self, scale: f64) -> bool {
        let ProjectionKind::CoordinateSaturation { index, .. } = self.kind else { return false };
        self.maneuver
            .domain()
            .uniform(20)
            .iter()
            .all(|&s| self.maneuver.tangent(s).map(|f| (f[index] * scale - 1.0).abs() < 1e-12).unwrap_or(false))
    }

    /// Central difference of `𝓟` along `s`, for cross-checking.
    pub fn projection_hessian_fd(&self, s: f64) -> Result<DMatrix<f64>, ProjectionError> {
        self.require_interior(s)?;
        let d = self.maneuver.domain();
        let h = (1e-5 * d.width()).min(0.5 * (s - d.s_alpha)).min(0.5 * (d.s_omega - s));
        let at = |k: f64| self.tube_jacobian(s + k * h);
        Ok((at(-2.0)? - at(2.0)? + (at(1.0)? - at(-1.0)?) * 8.0) / (12.0 * h))
    }

    /// `E⊥(s) = I − F(s)𝓟(s)` on the open interior.
    pub fn e_perp(&self, s: f64) -> Result<DMatrix<f64>, ProjectionError> {
        self.require_interior(s)?;
        self.tube_e_perp(s)
    }

    pub fn tube_e_perp(&self, s: f64) -> Result<DMatrix<f64>, ProjectionError> {
        let f = self.maneuver.tangent(s)?;
        let n = f.len();
        Ok(DMatrix::identity(n, n) - &f * self.tube_jacobian(s)?)
    }

    pub fn transverse_error(&self, x: &DVector<f64>) -> Result<DVector<f64>, ProjectionError> {
        let p = self.project(x)?;
        Ok(x - self.maneuver.state(p.s)?)
    }
}
