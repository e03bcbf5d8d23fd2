//! Matrix-valued functions of the scalar curve parameter `s`.
//!
//! A [`Curve`] is one of three bases on a closed [`Interval`]: monomials in
//! `s`, a Bézier curve in the Bernstein basis on the affinely mapped
//! parameter `t ∈ [0, 1]`, or a cubic Hermite spline with stored knot slopes.
//! Scalars and vectors are `1×1` and `n×1` curves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Queries this close to an endpoint are clamped onto it.
pub const DOMAIN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("s = {s} outside [{lo}, {hi}]")]
    OutOfDomain { s: f64, lo: f64, hi: f64 },
    #[error("derivative order {0} not supported")]
    UnsupportedOrder(usize),
    #[error("least-squares system is rank deficient")]
    RankDeficient,
    #[error("invalid interval [{0}, {1}]")]
    InvalidInterval(f64, f64),
    #[error("invalid samples: {0}")]
    InvalidSamples(String),
    #[error("curve document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub s_alpha: f64,
    pub s_omega: f64,
}

impl Interval {
    pub fn new(s_alpha: f64, s_omega: f64) -> Result<Self, CurveError> {
        if !(s_alpha < s_omega) || !s_alpha.is_finite() || !s_omega.is_finite() {
            return Err(CurveError::InvalidInterval(s_alpha, s_omega));
        }
        Ok(Self { s_alpha, s_omega })
    }

    pub fn width(&self) -> f64 {
        self.s_omega - self.s_alpha
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.s_alpha + self.s_omega)
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.s_alpha && s <= self.s_omega
    }

    pub fn is_interior(&self, s: f64) -> bool {
        s > self.s_alpha && s < self.s_omega
    }

    /// Validates `s`, snapping rounding-level overshoot onto the endpoints.
    pub fn clamp(&self, s: f64) -> Result<f64, CurveError> {
        let tol = DOMAIN_TOLERANCE * (1.0 + s.abs());
        if s >= self.s_alpha && s <= self.s_omega {
            Ok(s)
        } else if s < self.s_alpha && s >= self.s_alpha - tol {
            Ok(self.s_alpha)
        } else if s > self.s_omega && s <= self.s_omega + tol {
            Ok(self.s_omega)
        } else {
            Err(CurveError::OutOfDomain { s, lo: self.s_alpha, hi: self.s_omega })
        }
    }

    /// `n` evenly spaced points including both endpoints.
    pub fn uniform(&self, n: usize) -> Vec<f64> {
        match n {
            0 => vec![],
            1 => vec![self.midpoint()],
            _ => (0..n)
                .map(|k| {
                    if k == n - 1 {
                        self.s_omega
                    } else {
                        self.s_alpha + self.width() * k as f64 / (n - 1) as f64
                    }
                })
                .collect(),
        }
    }

    /// `n` Chebyshev–Lobatto points, ascending, endpoints included exactly.
    pub fn chebyshev(&self, n: usize) -> Vec<f64> {
        if n < 2 {
            return self.uniform(n);
        }
        let (c, h) = (self.midpoint(), 0.5 * self.width());
        (0..n)
            .map(|k| match k {
                0 => self.s_alpha,
                _ if k == n - 1 => self.s_omega,
                _ => c - h * (std::f64::consts::PI * k as f64 / (n - 1) as f64).cos(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    /// Ascending powers of `s`.
    Polynomial(Vec<DMatrix<f64>>),
    /// Control points; order = len − 1.
    Bezier(Vec<DMatrix<f64>>),
    Hermite { knots: Vec<f64>, values: Vec<DMatrix<f64>>, slopes: Vec<DMatrix<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    repr: Repr,
    domain: Interval,
    rows: usize,
    cols: usize,
}

/// Value and first two derivatives at one parameter.
#[derive(Debug, Clone)]
pub struct Jet {
    pub value: DMatrix<f64>,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub curve: Curve,
    /// Largest absolute entry of the sample residuals.
    pub max_residual: f64,
}

fn common_shape(mats: &[DMatrix<f64>]) -> Result<(usize, usize), CurveError> {
    let first = mats.first().ok_or_else(|| CurveError::InvalidSamples("no coefficients".into()))?;
    let shape = first.shape();
    if mats.iter().any(|m| m.shape() != shape) {
        return Err(CurveError::InvalidSamples("coefficient shapes differ".into()));
    }
    Ok(shape)
}

/// Bernstein basis values and first two `t`-derivatives.
pub fn bernstein_jet(order: usize, t: f64) -> [Vec<f64>; 3] {
    let basis = |n: usize| -> Vec<f64> {
        let mut b = vec![0.0; n + 1];
        b[0] = 1.0;
        for j in 1..=n {
            for i in (0..=j).rev() {
                let left = if i > 0 { b[i - 1] } else { 0.0 };
                b[i] = (1.0 - t) * b[i] + t * left;
            }
        }
        b
    };
    let n = order;
    let b0 = basis(n);
    let mut b1 = vec![0.0; n + 1];
    let mut b2 = vec![0.0; n + 1];
    if n >= 1 {
        let lower = basis(n - 1);
        for i in 0..=n {
            let a = if i > 0 { lower[i - 1] } else { 0.0 };
            let b = if i < n { lower[i] } else { 0.0 };
            b1[i] = n as f64 * (a - b);
        }
    }
    if n >= 2 {
        let lower = basis(n - 2);
        let get = |i: isize| if i >= 0 && (i as usize) < lower.len() { lower[i as usize] } else { 0.0 };
        for i in 0..=n {
            let i = i as isize;
            b2[i as usize] = (n * (n - 1)) as f64 * (get(i - 2) - 2.0 * get(i - 1) + get(i));
        }
    }
    [b0, b1, b2]
}

fn hermite_basis(t: f64) -> [[f64; 4]; 3] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        [2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + t, -2.0 * t3 + 3.0 * t2, t3 - t2],
        [6.0 * t2 - 6.0 * t, 3.0 * t2 - 4.0 * t + 1.0, -6.0 * t2 + 6.0 * t, 3.0 * t2 - 2.0 * t],
        [12.0 * t - 6.0, 6.0 * t - 4.0, -12.0 * t + 6.0, 6.0 * t - 2.0],
    ]
}

impl Curve {
    pub fn polynomial(domain: Interval, coeffs: Vec<DMatrix<f64>>) -> Result<Self, CurveError> {
        let (rows, cols) = common_shape(&coeffs)?;
        Ok(Self { repr: Repr::Polynomial(coeffs), domain, rows, cols })
    }

    pub fn scalar_polynomial(domain: Interval, coeffs: &[f64]) -> Result<Self, CurveError> {
        Self::polynomial(domain, coeffs.iter().map(|&c| DMatrix::from_element(1, 1, c)).collect())
    }

    pub fn constant(domain: Interval, value: DMatrix<f64>) -> Self {
        let (rows, cols) = value.shape();
        Self { repr: Repr::Polynomial(vec![value]), domain, rows, cols }
    }

    pub fn bezier(domain: Interval, points: Vec<DMatrix<f64>>) -> Result<Self, CurveError> {
        let (rows, cols) = common_shape(&points)?;
        Ok(Self { repr: Repr::Bezier(points), domain, rows, cols })
    }

    pub fn hermite(
        knots: Vec<f64>,
        values: Vec<DMatrix<f64>>,
        slopes: Vec<DMatrix<f64>>,
    ) -> Result<Self, CurveError> {
        if knots.len() < 2 || values.len() != knots.len() || slopes.len() != knots.len() {
            return Err(CurveError::InvalidSamples("hermite needs ≥2 knots with values and slopes".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CurveError::InvalidSamples("knots must be strictly increasing".into()));
        }
        let (rows, cols) = common_shape(&values)?;
        if slopes.iter().any(|m| m.shape() != (rows, cols)) {
            return Err(CurveError::InvalidSamples("slope shape differs from value shape".into()));
        }
        let domain = Interval::new(knots[0], knots[knots.len() - 1])?;
        Ok(Self { repr: Repr::Hermite { knots, values, slopes }, domain, rows, cols })
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn basis_name(&self) -> &'static str {
        match self.repr {
            Repr::Polynomial(_) => "polynomial",
            Repr::Bezier(_) => "bezier",
            Repr::Hermite { .. } => "hermite",
        }
    }

    /// Polynomial degree, Bézier order, or 3 for Hermite splines.
    pub fn order(&self) -> usize {
        match &self.repr {
            Repr::Polynomial(c) => c.len() - 1,
            Repr::Bezier(p) => p.len() - 1,
            Repr::Hermite { .. } => 3,
        }
    }

    /// Bézier control points, if this is a Bézier curve.
    pub fn control_points(&self) -> Option<&[DMatrix<f64>]> {
        match &self.repr {
            Repr::Bezier(p) => Some(p),
            _ => None,
        }
    }

    /// Points where the representation changes piece (Hermite knots, else the endpoints).
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.repr {
            Repr::Hermite { knots, .. } => knots.clone(),
            _ => vec![self.domain.s_alpha, self.domain.s_omega],
        }
    }

    pub fn eval(&self, s: f64) -> Result<DMatrix<f64>, CurveError> {
        Ok(self.jet_upto(s, 0)?.value)
    }

    pub fn derivative(&self, s: f64, order: usize) -> Result<DMatrix<f64>, CurveError> {
        let j = self.jet_upto(s, order)?;
        match order {
            1 => Ok(j.d1),
            2 => Ok(j.d2),
            _ => Err(CurveError::UnsupportedOrder(order)),
        }
    }

    pub fn jet(&self, s: f64) -> Result<Jet, CurveError> {
        self.jet_upto(s, 2)
    }

    fn jet_upto(&self, s: f64, order: usize) -> Result<Jet, CurveError> {
        if order > 2 {
            return Err(CurveError::UnsupportedOrder(order));
        }
        let s = self.domain.clamp(s)?;
        let z = || DMatrix::zeros(self.rows, self.cols);
        let (mut v, mut d1, mut d2) = (z(), z(), z());
        match &self.repr {
            Repr::Polynomial(c) => {
                for ck in c.iter().rev() {
                    d2 = d2 * s + &d1 * 2.0;
                    d1 = d1 * s + &v;
                    v = v * s + ck;
                }
            }
            Repr::Bezier(p) => {
                let h = self.domain.width();
                let t = (s - self.domain.s_alpha) / h;
                let [b0, b1, b2] = bernstein_jet(p.len() - 1, t);
                for (i, pi) in p.iter().enumerate() {
                    v += pi * b0[i];
                    d1 += pi * (b1[i] / h);
                    d2 += pi * (b2[i] / (h * h));
                }
            }
            Repr::Hermite { knots, values, slopes } => {
                let j = knots.partition_point(|&k| k <= s).clamp(1, knots.len() - 1) - 1;
                let h = knots[j + 1] - knots[j];
                let t = (s - knots[j]) / h;
                let [h0, h1, h2] = hermite_basis(t);
                let terms = [&values[j], &slopes[j], &values[j + 1], &slopes[j + 1]];
                let scale = [1.0, h, 1.0, h];
                for k in 0..4 {
                    v += terms[k] * (h0[k] * scale[k]);
                    d1 += terms[k] * (h1[k] * scale[k] / h);
                    d2 += terms[k] * (h2[k] * scale[k] / (h * h));
                }
            }
        }
        Ok(Jet { value: v, d1, d2 })
    }

    pub fn eval_scalar(&self, s: f64) -> Result<f64, CurveError> {
        Ok(self.eval(s)?[(0, 0)])
    }

    pub fn derivative_scalar(&self, s: f64, order: usize) -> Result<f64, CurveError> {
        Ok(self.derivative(s, order)?[(0, 0)])
    }

    pub fn eval_vector(&self, s: f64) -> Result<DVector<f64>, CurveError> {
        Ok(self.eval(s)?.column(0).into_owned())
    }

    pub fn derivative_vector(&self, s: f64, order: usize) -> Result<DVector<f64>, CurveError> {
        Ok(self.derivative(s, order)?.column(0).into_owned())
    }

    /// Least-squares polynomial of the given degree.
    pub fn fit_polynomial(samples: &[(f64, DMatrix<f64>)], degree: usize) -> Result<Fit, CurveError> {
        let domain = sample_domain(samples)?;
        let (c, h) = (domain.midpoint(), 0.5 * domain.width());
        let scaled = least_squares(samples, degree + 1, |s| {
            let u = (s - c) / h;
            (0..=degree).map(|k| u.powi(k as i32)).collect()
        })?;
        // p(s) = Σ a_k ((s − c)/h)^k, expanded into powers of s.
        let (rows, cols) = samples[0].1.shape();
        let mut coeffs = vec![DMatrix::zeros(rows, cols); degree + 1];
        for (k, ak) in scaled.iter().enumerate() {
            let hk = h.powi(k as i32);
            for j in 0..=k {
                let binom = binomial(k, j) * (-c).powi((k - j) as i32) / hk;
                coeffs[j] += ak * binom;
            }
        }
        let curve = Self::polynomial(domain, coeffs)?;
        Ok(with_residual(curve, samples))
    }

    /// Least-squares Bézier curve of the given order on `domain`.
    pub fn fit_bezier(
        samples: &[(f64, DMatrix<f64>)],
        order: usize,
        domain: Interval,
    ) -> Result<Fit, CurveError> {
        sample_domain(samples)?;
        let points = least_squares(samples, order + 1, |s| {
            bernstein_jet(order, (s - domain.s_alpha) / domain.width())[0].clone()
        })?;
        let curve = Self::bezier(domain, points)?;
        Ok(with_residual(curve, samples))
    }

    /// Interpolating cubic Hermite spline, slopes from three-point stencils.
    pub fn fit_hermite(samples: &[(f64, DMatrix<f64>)]) -> Result<Fit, CurveError> {
        sample_domain(samples)?;
        let knots: Vec<f64> = samples.iter().map(|p| p.0).collect();
        let values: Vec<DMatrix<f64>> = samples.iter().map(|p| p.1.clone()).collect();
        let slopes = stencil_slopes(&knots, &values);
        let curve = Self::hermite(knots, values, slopes)?;
        Ok(Fit { curve, max_residual: 0.0 })
    }

    pub fn to_document(&self) -> CurveDocument {
        let flat = |m: &DMatrix<f64>| -> Vec<f64> {
            (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect()
        };
        let (coefficients, knots, slopes) = match &self.repr {
            Repr::Polynomial(c) => (c.iter().map(flat).collect(), vec![], vec![]),
            Repr::Bezier(p) => (p.iter().map(flat).collect(), vec![], vec![]),
            Repr::Hermite { knots, values, slopes } => {
                (values.iter().map(flat).collect(), knots.clone(), slopes.iter().map(flat).collect())
            }
        };
        CurveDocument {
            basis: self.basis_name().to_string(),
            order: self.order(),
            domain: [self.domain.s_alpha, self.domain.s_omega],
            shape: [self.rows, self.cols],
            coefficients,
            knots,
            slopes,
        }
    }

    pub fn from_document(doc: &CurveDocument) -> Result<Self, CurveError> {
        let [rows, cols] = doc.shape;
        let unflat = |v: &Vec<f64>| -> Result<DMatrix<f64>, CurveError> {
            if v.len() != rows * cols {
                return Err(CurveError::Document(format!(
                    "entry has {} values, shape needs {}",
                    v.len(),
                    rows * cols
                )));
            }
            Ok(DMatrix::from_row_slice(rows, cols, v))
        };
        let mats = doc.coefficients.iter().map(unflat).collect::<Result<Vec<_>, _>>()?;
        let domain = Interval::new(doc.domain[0], doc.domain[1])?;
        let curve = match doc.basis.as_str() {
            "polynomial" => Self::polynomial(domain, mats)?,
            "bezier" => Self::bezier(domain, mats)?,
            "hermite" => {
                let slopes = doc.slopes.iter().map(unflat).collect::<Result<Vec<_>, _>>()?;
                let c = Self::hermite(doc.knots.clone(), mats, slopes)?;
                if c.domain != domain {
                    return Err(CurveError::Document("hermite knots disagree with domain".into()));
                }
                c
            }
            other => return Err(CurveError::Document(format!("unknown basis `{other}`"))),
        };
        if curve.order() != doc.order {
            return Err(CurveError::Document(format!(
                "declared order {} but coefficients give {}",
                doc.order,
                curve.order()
            )));
        }
        Ok(curve)
    }

    /// Applies `f` to every coefficient (linear maps only, e.g. scaling).
    pub fn map_coefficients(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        let repr = match &self.repr {
            Repr::Polynomial(c) => Repr::Polynomial(c.iter().map(&f).collect()),
            Repr::Bezier(p) => Repr::Bezier(p.iter().map(&f).collect()),
            Repr::Hermite { knots, values, slopes } => Repr::Hermite {
                knots: knots.clone(),
                values: values.iter().map(&f).collect(),
                slopes: slopes.iter().map(&f).collect(),
            },
        };
        let (rows, cols) = match &repr {
            Repr::Polynomial(c) | Repr::Bezier(c) => c[0].shape(),
            Repr::Hermite { values, .. } => values[0].shape(),
        };
        Self { repr, domain: self.domain, rows, cols }
    }
}

/// Serialized form of a [`Curve`]. Matrices are flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveDocument {
    pub basis: String,
    pub order: usize,
    pub domain: [f64; 2],
    pub shape: [usize; 2],
    pub coefficients: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub knots: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slopes: Vec<Vec<f64>>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn sample_domain(samples: &[(f64, DMatrix<f64>)]) -> Result<Interval, CurveError> {
    if samples.len() < 2 {
        return Err(CurveError::InvalidSamples("need at least two samples".into()));
    }
    if samples.windows(2).any(|w| !(w[0].0 < w[1].0)) {
        return Err(CurveError::InvalidSamples("sample parameters must be strictly increasing".into()));
    }
    common_shape(&samples.iter().map(|p| p.1.clone()).collect::<Vec<_>>())?;
    Interval::new(samples[0].0, samples[samples.len() - 1].0)
}

fn least_squares(
    samples: &[(f64, DMatrix<f64>)],
    dof: usize,
    basis: impl Fn(f64) -> Vec<f64>,
) -> Result<Vec<DMatrix<f64>>, CurveError> {
    if samples.len() < dof {
        return Err(CurveError::RankDeficient);
    }
    let (rows, cols) = samples[0].1.shape();
    let a = DMatrix::from_fn(samples.len(), dof, |i, k| basis(samples[i].0)[k]);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * smax {
        return Err(CurveError::RankDeficient);
    }
    let rhs = DMatrix::from_fn(samples.len(), rows * cols, |i, e| samples[i].1[(e / cols, e % cols)]);
    let x = svd.solve(&rhs, 0.0).map_err(|_| CurveError::RankDeficient)?;
    Ok((0..dof)
        .map(|k| DMatrix::from_fn(rows, cols, |r, c| x[(k, r * cols + c)]))
        .collect())
}

fn with_residual(curve: Curve, samples: &[(f64, DMatrix<f64>)]) -> Fit {
    let max_residual = samples
        .iter()
        .map(|(s, v)| (curve.eval(*s).expect("sample inside domain") - v).amax())
        .fold(0.0, f64::max);
    Fit { curve, max_residual }
}

/// Three-point finite-difference slopes on a nonuniform grid.
pub fn stencil_slopes(knots: &[f64], values: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let n = knots.len();
    if n == 2 {
        let d = (&values[1] - &values[0]) / (knots[1] - knots[0]);
        return vec![d.clone(), d];
    }
    let three = |i0: usize, at: usize| -> DMatrix<f64> {
        let (x0, x1, x2) = (knots[i0], knots[i0 + 1], knots[i0 + 2]);
        let x = knots[at];
        // Derivative of the quadratic interpolant through three points.
        let w0 = (2.0 * x - x1 - x2) / ((x0 - x1) * (x0 - x2));
        let w1 = (2.0 * x - x0 - x2) / ((x1 - x0) * (x1 - x2));
        let w2 = (2.0 * x - x0 - x1) / ((x2 - x0) * (x2 - x1));
        &values[i0] * w0 + &values[i0 + 1] * w1 + &values[i0 + 2] * w2
    };
    (0..n)
        .map(|i| match i {
            0 => three(0, 0),
            _ if i == n - 1 => three(n - 3, n - 1),
            _ => three(i - 1, i),
        })
        .collect()
}
