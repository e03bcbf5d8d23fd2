//! The s-parameterized point-to-point maneuver `(x⋆, u⋆, ρ)` and its validation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::{Curve, CurveDocument, CurveError, Interval};
use crate::linearization::ControlAffine;
use crate::numerics::integrate_pieces;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManeuverError {
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("curves are defined on different domains")]
    DomainMismatch,
}

#[derive(Debug, Clone)]
pub struct Maneuver {
    pub x_star: Curve,
    pub u_star: Curve,
    pub rho: Curve,
    pub x_alpha: DVector<f64>,
    pub x_omega: DVector<f64>,
    pub u_alpha: DVector<f64>,
    pub u_omega: DVector<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub grid_size: usize,
    /// Largest `‖F ρ − f − B u⋆‖`, measured in the system's residual metric.
    pub max_p6_residual: f64,
    pub endpoints_ok: bool,
    pub rho_ok: bool,
    pub tangent_ok: bool,
    pub no_self_intersection: bool,
    pub min_tangent_norm: f64,
    pub min_separation: f64,
}

impl ValidationReport {
    pub fn passes(&self, p6_tolerance: f64) -> bool {
        self.endpoints_ok
            && self.rho_ok
            && self.tangent_ok
            && self.no_self_intersection
            && self.max_p6_residual < p6_tolerance
    }
}

fn check_domains(curves: &[&Curve]) -> Result<Interval, ManeuverError> {
    let d = curves[0].domain();
    let w = d.width();
    for c in &curves[1..] {
        let e = c.domain();
        if (e.s_alpha - d.s_alpha).abs() > 1e-12 * (1.0 + w) || (e.s_omega - d.s_omega).abs() > 1e-12 * (1.0 + w) {
            return Err(ManeuverError::DomainMismatch);
        }
    }
    Ok(d)
}

impl Maneuver {
    /// Boundary points are read off the curves.
    pub fn new(x_star: Curve, u_star: Curve, rho: Curve) -> Result<Self, ManeuverError> {
        let d = check_domains(&[&x_star, &u_star, &rho])?;
        if x_star.shape().1 != 1 || u_star.shape().1 != 1 || rho.shape() != (1, 1) {
            return Err(ManeuverError::DimensionMismatch("x⋆, u⋆ must be column vectors and ρ scalar".into()));
        }
        Ok(Self {
            x_alpha: x_star.eval_vector(d.s_alpha)?,
            x_omega: x_star.eval_vector(d.s_omega)?,
            u_alpha: u_star.eval_vector(d.s_alpha)?,
            u_omega: u_star.eval_vector(d.s_omega)?,
            x_star,
            u_star,
            rho,
        })
    }

    pub fn domain(&self) -> Interval {
        self.x_star.domain()
    }

    pub fn n(&self) -> usize {
        self.x_star.shape().0
    }

    pub fn m(&self) -> usize {
        self.u_star.shape().0
    }

    pub fn state(&self, s: f64) -> Result<DVector<f64>, CurveError> {
        self.x_star.eval_vector(s)
    }

    /// `F(s) = x⋆′(s)`.
    pub fn tangent(&self, s: f64) -> Result<DVector<f64>, CurveError> {
        self.x_star.derivative_vector(s, 1)
    }

    pub fn tangent_prime(&self, s: f64) -> Result<DVector<f64>, CurveError> {
        self.x_star.derivative_vector(s, 2)
    }

    pub fn control(&self, s: f64) -> Result<DVector<f64>, CurveError> {
        self.u_star.eval_vector(s)
    }

    pub fn control_prime(&self, s: f64) -> Result<DVector<f64>, CurveError> {
        self.u_star.derivative_vector(s, 1)
    }

    pub fn rho(&self, s: f64) -> Result<f64, CurveError> {
        self.rho.eval_scalar(s)
    }

    pub fn rho_prime(&self, s: f64) -> Result<f64, CurveError> {
        self.rho.derivative_scalar(s, 1)
    }

    /// `ṡ = ρ(s)`.
    pub fn s_dynamics(&self, s: f64) -> Result<f64, CurveError> {
        self.rho(s)
    }

    pub fn arc_length(&self) -> f64 {
        let d = self.domain();
        if d.width() < 1e-9 {
            let mid = d.midpoint();
            return self.tangent(mid).map(|f| f.norm() * d.width()).unwrap_or(0.0);
        }
        let breaks = self.x_star.breakpoints();
        let f = |s: f64| self.tangent(s).map(|v| v.norm()).unwrap_or(f64::NAN);
        match integrate_pieces(f, d.s_alpha, d.s_omega, &breaks, 1e-10, 1e-14) {
            Ok(v) => v,
            Err(e) => e.estimate,
        }
    }

    /// Checks the endpoint, speed-profile, regularity, self-intersection and
    /// dynamic-consistency properties on a Chebyshev grid.
    pub fn validate(&self, sys: &dyn ControlAffine, grid_size: usize) -> Result<ValidationReport, ManeuverError> {
        if sys.n() != self.n() || sys.m() != self.m() {
            return Err(ManeuverError::DimensionMismatch(format!(
                "maneuver (n={}, m={}) vs system (n={}, m={})",
                self.n(),
                self.m(),
                sys.n(),
                sys.m()
            )));
        }
        let grid_size = grid_size.max(10);
        let d = self.domain();
        let grid = d.chebyshev(grid_size);
        let mut max_res: f64 = 0.0;
        let mut min_tan = f64::INFINITY;
        let mut rho_ok = true;
        let mut pts = Vec::with_capacity(grid.len());
        for (k, &s) in grid.iter().enumerate() {
            let x = self.state(s)?;
            let f = self.tangent(s)?;
            let rho = self.rho(s)?;
            let u = self.control(s)?;
            let r = &f * rho - sys.rhs(&x, &u);
            let r = match sys.residual_metric(&x) {
                Some(w) => w * r,
                None => r,
            };
            max_res = max_res.max(r.norm());
            min_tan = min_tan.min(f.norm());
            let interior = k != 0 && k != grid.len() - 1;
            if interior && !(rho > 0.0) {
                rho_ok = false;
            }
            pts.push(x);
        }
        let scale = 1.0 + self.x_alpha.norm().max(self.x_omega.norm());
        let rho_a = self.rho(d.s_alpha)?;
        let rho_w = self.rho(d.s_omega)?;
        if rho_a.abs() > 1e-8 || rho_w.abs() > 1e-8 {
            rho_ok = false;
        }
        let endpoints_ok = (self.state(d.s_alpha)? - &self.x_alpha).norm() <= 1e-8 * scale
            && (self.state(d.s_omega)? - &self.x_omega).norm() <= 1e-8 * scale;

        // Heuristic self-intersection test: samples far apart along the curve
        // must stay at least two tube radii apart in space.
        let radius = 1e-3 * self.arc_length();
        let mut along = vec![0.0];
        for w in pts.windows(2) {
            along.push(along.last().unwrap() + (&w[1] - &w[0]).norm());
        }
        let mut min_sep = f64::INFINITY;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                if along[j] - along[i] > 4.0 * radius {
                    min_sep = min_sep.min((&pts[i] - &pts[j]).norm());
                }
            }
        }
        Ok(ValidationReport {
            grid_size,
            max_p6_residual: max_res,
            endpoints_ok,
            rho_ok,
            tangent_ok: min_tan > 0.0,
            no_self_intersection: !(min_sep <= 2.0 * radius),
            min_tangent_norm: min_tan,
            min_separation: min_sep,
        })
    }

    /// Distance from `x` to the orbit: dense sampling then golden-section refinement.
    pub fn dist_to_orbit(&self, x: &DVector<f64>) -> f64 {
        let d = self.domain();
        let grid = d.uniform(1001);
        let dist = |s: f64| self.state(s).map(|p| (p - x).norm()).unwrap_or(f64::INFINITY);
        let (k, best) = grid
            .iter()
            .enumerate()
            .map(|(k, &s)| (k, dist(s)))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        let lo = grid[k.saturating_sub(1)];
        let hi = grid[(k + 1).min(grid.len() - 1)];
        let s = crate::numerics::golden_minimize(dist, lo, hi, 1e-12 * (1.0 + d.width()));
        dist(s).min(best)
    }

    pub fn to_document(&self) -> ManeuverDocument {
        ManeuverDocument {
            n: self.n(),
            m: self.m(),
            x_alpha: self.x_alpha.as_slice().to_vec(),
            x_omega: self.x_omega.as_slice().to_vec(),
            u_alpha: self.u_alpha.as_slice().to_vec(),
            u_omega: self.u_omega.as_slice().to_vec(),
            x_star: self.x_star.to_document(),
            u_star: self.u_star.to_document(),
            rho: self.rho.to_document(),
        }
    }

    pub fn from_document(doc: &ManeuverDocument) -> Result<Self, ManeuverError> {
        let m = Self::new(
            Curve::from_document(&doc.x_star)?,
            Curve::from_document(&doc.u_star)?,
            Curve::from_document(&doc.rho)?,
        )?;
        if m.n() != doc.n || m.m() != doc.m {
            return Err(ManeuverError::DimensionMismatch("declared n, m disagree with curves".into()));
        }
        let stored = [&doc.x_alpha, &doc.x_omega, &doc.u_alpha, &doc.u_omega];
        let actual = [&m.x_alpha, &m.x_omega, &m.u_alpha, &m.u_omega];
        for (a, b) in stored.iter().zip(actual) {
            if a.len() != b.len() || a.iter().zip(b.iter()).any(|(x, y)| (x - y).abs() > 1e-8 * (1.0 + y.abs())) {
                return Err(ManeuverError::DimensionMismatch("boundary points disagree with curves".into()));
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverDocument {
    pub n: usize,
    pub m: usize,
    pub x_alpha: Vec<f64>,
    pub x_omega: Vec<f64>,
    pub u_alpha: Vec<f64>,
    pub u_omega: Vec<f64>,
    pub x_star: CurveDocument,
    pub u_star: CurveDocument,
    pub rho: CurveDocument,
}

/// Polynomial multiplication on coefficient lists (ascending powers).
fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            c[i + j] += x * y;
        }
    }
    c
}

fn poly_der(a: &[f64]) -> Vec<f64> {
    if a.len() <= 1 {
        return vec![0.0];
    }
    a.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect()
}

/// Double-integrator rest-to-rest maneuver `x⋆ = (s, ρ)`, `u⋆ = ρ′ρ`,
/// `ρ(s) = κ(s − q_α)(q_ω − s)²`, exactly as polynomials.
pub fn double_integrator_maneuver(q_alpha: f64, q_omega: f64, kappa: f64) -> Result<Maneuver, ManeuverError> {
    let domain = Interval::new(q_alpha, q_omega)?;
    let rho = poly_mul(
        &[-kappa * q_alpha, kappa],
        &poly_mul(&[q_omega, -1.0], &[q_omega, -1.0]),
    );
    let u = poly_mul(&poly_der(&rho), &rho);
    let x_coeffs: Vec<DMatrix<f64>> = (0..rho.len())
        .map(|k| {
            let pos = match k {
                1 => 1.0,
                _ => 0.0,
            };
            DMatrix::from_column_slice(2, 1, &[pos, rho[k]])
        })
        .collect();
    Maneuver::new(
        Curve::polynomial(domain, x_coeffs)?,
        Curve::polynomial(domain, u.iter().map(|&c| DMatrix::from_element(1, 1, c)).collect())?,
        Curve::scalar_polynomial(domain, &rho)?,
    )
}
