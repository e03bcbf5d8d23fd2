//! Gain synthesis for the feedback `u = u⋆(p) + K(p)(x − x⋆(p))`: boundary
//! LQR, algebraic Lyapunov equations, the differential LMI on Bézier
//! parameterized `W(s)`, `Y(s)` with `K = Y W⁻¹`, and independent checks of a
//! finished design.

use nalgebra::DMatrix;
use orbstab_sdp::{PsdBlock, SdpBackend, SdpError, SdpProblem};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::{bernstein_jet, Curve, CurveDocument, CurveError, Interval};
use crate::linearization::{orbit_point, ControlAffine, LinearizationError, OrbitPoint};
use crate::maneuver::Maneuver;
use crate::projection::{ProjectionError, ProjectionOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("pair (A, B) is not stabilizable: {0}")]
    NotStabilizable(String),
    #[error("Riccati iteration did not converge after {0} iterations")]
    RiccatiDivergence(usize),
    #[error("matrix is not Hurwitz (spectral abscissa {0:.3e})")]
    NotHurwitz(f64),
    #[error("grid of {grid} points is too coarse for Bézier order {order}")]
    GridTooCoarse { grid: usize, order: usize },
    #[error("inconsistent dimensions: {0}")]
    InconsistentDimensions(String),
    #[error("DLMI is infeasible ({0})")]
    Infeasible(String),
    #[error("SDP backend failure: {0}")]
    BackendFailure(String),
    #[error("certification failed: {}", .0.join("; "))]
    CertificationFailed(Vec<String>),
    #[error("reduced transverse matrix is not Hurwitz at s = {s} (abscissa {abscissa:.3e})")]
    ReducedNotHurwitz { s: f64, abscissa: f64 },
    #[error("reduced Lyapunov solution deviates by {0:.3e} (relative)")]
    MismatchBeyondTolerance(f64),
    #[error("singular W(s) at s = {0}")]
    SingularW(f64),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Linearization(#[from] LinearizationError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    a + a.transpose()
}

fn min_eig(a: &DMatrix<f64>) -> f64 {
    let s = (a + a.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}

pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

fn is_positive_definite(a: &DMatrix<f64>) -> bool {
    a.is_square() && (a - a.transpose()).amax() <= 1e-10 * a.amax().max(1e-300) && min_eig(a) > 0.0
}

/// Orthonormal basis of the orthogonal complement of `v`.
fn complement_basis(v: &[f64]) -> DMatrix<f64> {
    let n = v.len();
    let u = DMatrix::from_column_slice(n, 1, v);
    let u = &u / u.norm();
    let p = DMatrix::identity(n, n) - &u * u.transpose();
    let eig = p.symmetric_eigen();
    let cols: Vec<_> = (0..n).filter(|&k| eig.eigenvalues[k] > 0.5).map(|k| eig.eigenvectors.column(k).into_owned()).collect();
    DMatrix::from_columns(&cols)
}

// ---------------------------------------------------------------------------
// Algebraic Lyapunov and Riccati equations

/// Diagonal block ranges of a real quasi-triangular Schur factor.
fn schur_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut out = Vec::new();
    let mut k = 0;
    while k < n {
        let two = k + 1 < n && t[(k + 1, k)].abs() > 1e-14 * (t[(k, k)].abs() + t[(k + 1, k + 1)].abs() + 1e-300);
        let len = if two { 2 } else { 1 };
        out.push((k, len));
        k += len;
    }
    out
}

/// Solves `Tᵀ Y + Y T = C` for quasi-upper-triangular `T`, block by block.
fn quasi_triangular_lyapunov(t: &DMatrix<f64>, blocks: &[(usize, usize)], c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = t.nrows();
    let mut y = DMatrix::zeros(n, n);
    for (p, &(i0, ni)) in blocks.iter().enumerate() {
        for (q, &(j0, nj)) in blocks.iter().enumerate() {
            let mut rhs = c.view((i0, j0), (ni, nj)).into_owned();
            for &(k0, nk) in &blocks[..p] {
                rhs -= t.view((k0, i0), (nk, ni)).transpose() * y.view((k0, j0), (nk, nj));
            }
            for &(l0, nl) in &blocks[..q] {
                rhs -= y.view((i0, l0), (ni, nl)) * t.view((l0, j0), (nl, nj));
            }
            let tii = t.view((i0, i0), (ni, ni)).transpose();
            let tjj = t.view((j0, j0), (nj, nj)).into_owned();
            let op = DMatrix::<f64>::identity(nj, nj).kronecker(&tii) + tjj.transpose().kronecker(&DMatrix::identity(ni, ni));
            let v = op.lu().solve(&DMatrix::from_column_slice(ni * nj, 1, rhs.as_slice())).unwrap_or_else(|| DMatrix::from_element(ni * nj, 1, f64::NAN));
            y.view_mut((i0, j0), (ni, nj)).copy_from(&DMatrix::from_column_slice(ni, nj, v.as_slice()));
        }
    }
    y
}

/// Unique solution of `A_clᵀ R + R A_cl = −Q` by Bartels–Stewart on the real
/// Schur form, with one step of residual correction.
pub fn ale_solve(a_cl: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, SynthesisError> {
    let n = a_cl.nrows();
    if !a_cl.is_square() || q.shape() != (n, n) {
        return Err(SynthesisError::InconsistentDimensions("ALE needs square A_cl and Q of the same size".into()));
    }
    let abscissa = spectral_abscissa(a_cl);
    if !(abscissa < 0.0) {
        return Err(SynthesisError::NotHurwitz(abscissa));
    }
    let (u, t) = a_cl.clone().schur().unpack();
    let blocks = schur_blocks(&t);
    let solve = |rhs: &DMatrix<f64>| {
        let c = -(u.transpose() * rhs * &u);
        let y = quasi_triangular_lyapunov(&t, &blocks, &c);
        let x = &u * y * u.transpose();
        (&x + x.transpose()) * 0.5
    };
    let mut r = solve(q);
    let res = a_cl.transpose() * &r + &r * a_cl + q;
    r += solve(&res);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(SynthesisError::NotHurwitz(abscissa));
    }
    Ok(r)
}

#[derive(Debug, Clone)]
pub struct Lqr {
    pub k: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// `‖AᵀR + RA − RBΓ⁻¹BᵀR + Q‖` relative to the sum of the term norms.
    pub residual: f64,
    pub abscissa: f64,
}

/// LQR gain `K = −Γ⁻¹BᵀR` from the stabilizing Riccati solution: matrix sign
/// function of the Hamiltonian, refined by Newton–Kleinman iterations.
pub fn lqr_boundary(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<Lqr, SynthesisError> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || gamma.shape() != (m, m) || q.shape() != (n, n) {
        return Err(SynthesisError::InconsistentDimensions("LQR data".into()));
    }
    if !is_positive_definite(gamma) || !is_positive_definite(q) {
        return Err(SynthesisError::InconsistentDimensions("Γ and Q must be symmetric positive definite".into()));
    }
    let ginv = gamma.clone().try_inverse().ok_or_else(|| SynthesisError::InconsistentDimensions("Γ singular".into()))?;
    let s = b * &ginv * b.transpose();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&-&s);
    h.view_mut((n, 0), (n, n)).copy_from(&-q);
    h.view_mut((n, n), (n, n)).copy_from(&-a.transpose());

    let mut z = h;
    let mut converged = false;
    for _ in 0..200 {
        let zi = z.clone().try_inverse().ok_or_else(|| SynthesisError::NotStabilizable("Hamiltonian has eigenvalues on the imaginary axis".into()))?;
        let det = z.determinant().abs();
        let c = if det.is_finite() && det > 0.0 { det.powf(-1.0 / (2.0 * n as f64)) } else { 1.0 };
        let next = (&z * c + zi / c) * 0.5;
        let change = (&next - &z).norm() / next.norm();
        z = next;
        if change < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged && (&z * &z - DMatrix::identity(2 * n, 2 * n)).norm() > 1e-6 {
        return Err(SynthesisError::RiccatiDivergence(200));
    }
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&z.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(z.view((n, n), (n, n)) + DMatrix::identity(n, n)));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&-(z.view((0, 0), (n, n)) + DMatrix::identity(n, n)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&-z.view((n, 0), (n, n)));
    let mut x = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| SynthesisError::NotStabilizable(e.to_string()))?;
    x = (&x + x.transpose()) * 0.5;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SynthesisError::NotStabilizable("sign-function solution is not finite".into()));
    }

    let gain = |x: &DMatrix<f64>| -(&ginv * b.transpose() * x);
    let mut iters = 0;
    loop {
        let k = gain(&x);
        let acl = a + b * &k;
        let abscissa = spectral_abscissa(&acl);
        if !(abscissa < 0.0) {
            return Err(SynthesisError::NotStabilizable(format!("closed loop abscissa {abscissa:.3e}")));
        }
        let next = ale_solve(&acl, &(q + k.transpose() * gamma * &k))?;
        let change = (&next - &x).norm() / next.norm().max(1e-300);
        x = next;
        iters += 1;
        if change < 1e-14 || iters >= 50 {
            break;
        }
    }
    let k = gain(&x);
    let acl = a + b * &k;
    let abscissa = spectral_abscissa(&acl);
    if !(abscissa < -1e-10) {
        return Err(SynthesisError::NotStabilizable(format!("closed loop abscissa {abscissa:.3e}")));
    }
    let ax = a.transpose() * &x;
    let xsx = &x * &s * &x;
    let res = &ax + ax.transpose() - &xsx + q;
    let size = 2.0 * ax.norm() + xsx.norm() + q.norm();
    Ok(Lqr { k, r: x, residual: res.norm() / size, abscissa })
}

// ---------------------------------------------------------------------------
// Gain schedule

#[derive(Debug, Clone)]
pub struct GainSchedule {
    pub w: Curve,
    pub y: Curve,
    pub lambda: Curve,
    pub k_alpha: DMatrix<f64>,
    pub k_omega: DMatrix<f64>,
}

impl GainSchedule {
    /// Constant design `W = R⁻¹`, `Y = K W`.
    pub fn constant(domain: Interval, k: &DMatrix<f64>, r: &DMatrix<f64>, lambda: f64) -> Result<Self, SynthesisError> {
        let w = r.clone().try_inverse().ok_or(SynthesisError::SingularW(domain.s_alpha))?;
        let y = k * &w;
        Ok(Self {
            w: Curve::constant(domain, w),
            y: Curve::constant(domain, y),
            lambda: Curve::constant(domain, DMatrix::from_element(1, 1, lambda)),
            k_alpha: k.clone(),
            k_omega: k.clone(),
        })
    }

    pub fn domain(&self) -> Interval {
        self.w.domain()
    }

    pub fn n(&self) -> usize {
        self.w.shape().0
    }

    pub fn m(&self) -> usize {
        self.y.shape().0
    }

    /// `K(s) = Y(s) W(s)⁻¹`, evaluated exactly.
    pub fn k(&self, s: f64) -> Result<DMatrix<f64>, SynthesisError> {
        let w = self.w.eval(s)?;
        let y = self.y.eval(s)?;
        let chol = w.cholesky().ok_or(SynthesisError::SingularW(s))?;
        Ok(chol.solve(&y.transpose()).transpose())
    }

    /// `R(s) = W(s)⁻¹` and `R′(s) = −R W′ R`.
    pub fn r_jet(&self, s: f64) -> Result<(DMatrix<f64>, DMatrix<f64>), SynthesisError> {
        let w = self.w.eval(s)?;
        let dw = self.w.derivative(s, 1)?;
        let r = w.cholesky().ok_or(SynthesisError::SingularW(s))?.inverse();
        let dr = -(&r * dw * &r);
        Ok((r, dr))
    }

    pub fn lambda_at(&self, s: f64) -> Result<f64, SynthesisError> {
        Ok(self.lambda.eval_scalar(s)?)
    }

    pub fn to_document(&self) -> GainScheduleDocument {
        GainScheduleDocument {
            w: self.w.to_document(),
            y: self.y.to_document(),
            lambda: self.lambda.to_document(),
            k_alpha: rows(&self.k_alpha),
            k_omega: rows(&self.k_omega),
        }
    }

    pub fn from_document(doc: &GainScheduleDocument) -> Result<Self, SynthesisError> {
        Ok(Self {
            w: Curve::from_document(&doc.w)?,
            y: Curve::from_document(&doc.y)?,
            lambda: Curve::from_document(&doc.lambda)?,
            k_alpha: from_rows(&doc.k_alpha)?,
            k_omega: from_rows(&doc.k_omega)?,
        })
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>]) -> Result<DMatrix<f64>, SynthesisError> {
    let nr = r.len();
    let nc = r.first().map_or(0, |x| x.len());
    if r.iter().any(|x| x.len() != nc) {
        return Err(SynthesisError::InconsistentDimensions("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| r[i][j]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainScheduleDocument {
    pub w: CurveDocument,
    pub y: CurveDocument,
    pub lambda: CurveDocument,
    pub k_alpha: Vec<Vec<f64>>,
    pub k_omega: Vec<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Differential LMI

/// `ρW′ − W A⊥ᵀ − A⊥W − YᵀB⊥ᵀ − B⊥Y − λ(E⊥W + WE⊥ᵀ)`.
pub fn dlmi_matrix(pt: &OrbitPoint, lambda: f64, w: &DMatrix<f64>, dw: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let aw = &pt.a_perp * w;
    let by = &pt.b_perp * y;
    let ew = &pt.e_perp * w;
    dw * pt.rho - sym(&aw) - sym(&by) - sym(&ew) * lambda
}

#[derive(Debug, Clone)]
pub enum BoundaryHandling {
    /// Boundary gains are free; only the Lyapunov blocks constrain them.
    InlineLmi,
    /// `Y = K W` at both ends with given stabilizing gains.
    Equality { k_alpha: DMatrix<f64>, k_omega: DMatrix<f64> },
}

#[derive(Debug, Clone)]
pub struct DlmiConfig {
    pub lambda: Curve,
    pub order: usize,
    pub grid: usize,
    pub boundary: BoundaryHandling,
    /// `W(s_k) ⪰ w_min·I`; fixes the scale of the otherwise homogeneous DLMI.
    pub w_min: f64,
    /// Interior blocks must satisfy `⪰ margin·w_min·(ρ/ρ_max)·I` after scaling,
    /// which keeps the DLMI nonnegative between grid points.
    pub margin: f64,
    /// `sym(A_s W + B_s Y) ⪯ −boundary_margin·I` (after scaling) at both ends.
    pub boundary_margin: f64,
    /// Weight of the gain bound `μ ≥ ‖Y (W − w_min I)⁻¹ Yᵀ‖` in the objective;
    /// zero drops the bound.
    pub gain_weight: f64,
}

impl DlmiConfig {
    pub fn new(domain: Interval, lambda: f64, boundary: BoundaryHandling) -> Self {
        Self {
            lambda: Curve::constant(domain, DMatrix::from_element(1, 1, lambda)),
            order: 6,
            grid: 200,
            boundary,
            w_min: 1.0,
            margin: 1e-2,
            boundary_margin: 1e-6,
            gain_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockRole {
    Dlmi { s: f64 },
    /// DLMI block at an end point, restricted to the complement of `𝓟ᵀ`.
    BoundaryDlmi { s: f64 },
    BoundaryLyapunov { s: f64 },
    /// `[[μI, Y], [Yᵀ, W − w_min I]] ⪰ 0`, or `W ⪰ w_min I` without the gain bound.
    WLowerBound { s: f64 },
}

#[derive(Debug, Clone)]
pub struct DlmiProblem {
    pub problem: SdpProblem,
    pub roles: Vec<BlockRole>,
    pub grid: Vec<f64>,
    pub domain: Interval,
    pub n: usize,
    pub m: usize,
    pub order: usize,
    pub lambda: Curve,
    pub boundary: BoundaryHandling,
    pub gain_bound: bool,
}

impl DlmiProblem {
    fn w_vars(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    fn per_point(&self) -> usize {
        self.w_vars() + self.m * self.n
    }

    pub fn num_vars(&self) -> usize {
        (self.order + 1) * self.per_point() + usize::from(self.gain_bound)
    }

    /// Index of the gain bound `μ`, if present.
    pub fn mu_index(&self) -> Option<usize> {
        self.gain_bound.then(|| (self.order + 1) * self.per_point())
    }

    /// Index of `W_i[a, b]` (`a ≤ b`).
    pub fn w_index(&self, i: usize, a: usize, b: usize) -> usize {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        i * self.per_point() + b * (b + 1) / 2 + a
    }

    pub fn y_index(&self, i: usize, r: usize, c: usize) -> usize {
        i * self.per_point() + self.w_vars() + c * self.m + r
    }

    /// Builds the gain schedule from a solution vector.
    pub fn decode(&self, y: &[f64]) -> Result<GainSchedule, SynthesisError> {
        if y.len() != self.num_vars() {
            return Err(SynthesisError::InconsistentDimensions(format!("solution has {} entries, expected {}", y.len(), self.num_vars())));
        }
        let (n, m) = (self.n, self.m);
        let mut wp = Vec::new();
        let mut yp = Vec::new();
        for i in 0..=self.order {
            wp.push(DMatrix::from_fn(n, n, |a, b| y[self.w_index(i, a, b)]));
            yp.push(DMatrix::from_fn(m, n, |r, c| y[self.y_index(i, r, c)]));
        }
        let w = Curve::bezier(self.domain, wp)?;
        let yc = Curve::bezier(self.domain, yp)?;
        let (ka, kw) = match &self.boundary {
            BoundaryHandling::Equality { k_alpha, k_omega } => (k_alpha.clone(), k_omega.clone()),
            BoundaryHandling::InlineLmi => (DMatrix::zeros(m, n), DMatrix::zeros(m, n)),
        };
        let mut g = GainSchedule { w, y: yc, lambda: self.lambda.clone(), k_alpha: ka, k_omega: kw };
        if matches!(self.boundary, BoundaryHandling::InlineLmi) {
            g.k_alpha = g.k(self.domain.s_alpha)?;
            g.k_omega = g.k(self.domain.s_omega)?;
        }
        Ok(g)
    }

    pub fn describe_block(&self, j: usize) -> String {
        match self.roles.get(j) {
            Some(BlockRole::Dlmi { s }) => format!("DLMI block at s = {s:.6}"),
            Some(BlockRole::BoundaryDlmi { s }) => format!("boundary DLMI block at s = {s:.6}"),
            Some(BlockRole::BoundaryLyapunov { s }) => format!("boundary Lyapunov block at s = {s:.6}"),
            Some(BlockRole::WLowerBound { s }) => format!("W lower bound at s = {s:.6}"),
            None => "unknown block".into(),
        }
    }
}

/// Scale applied to the DLMI block at `s`.
fn block_scale(pt: &OrbitPoint) -> f64 {
    let a = pt.a_s.norm();
    if a > 0.0 { 1.0 / a } else { 1.0 }
}

/// Discretizes the DLMI on `cfg.grid` evenly spaced points with Bézier `W`, `Y`
/// of order `cfg.order`. The objective is the average of `tr W(s_k)`.
pub fn assemble_dlmi(
    sys: &dyn ControlAffine,
    man: &Maneuver,
    op: &ProjectionOperator,
    cfg: &DlmiConfig,
) -> Result<DlmiProblem, SynthesisError> {
    let (n, m) = (sys.n(), sys.m());
    if man.n() != n || man.m() != m {
        return Err(SynthesisError::InconsistentDimensions("system and maneuver".into()));
    }
    if cfg.order < 1 || cfg.grid < 2 * cfg.order {
        return Err(SynthesisError::GridTooCoarse { grid: cfg.grid, order: cfg.order });
    }
    if let BoundaryHandling::Equality { k_alpha, k_omega } = &cfg.boundary {
        if k_alpha.shape() != (m, n) || k_omega.shape() != (m, n) {
            return Err(SynthesisError::InconsistentDimensions("boundary gains must be m×n".into()));
        }
    }
    let d = man.domain();
    let grid = d.uniform(cfg.grid);
    let pts: Vec<OrbitPoint> = grid.par_iter().map(|&s| orbit_point(sys, man, op, s)).collect::<Result<_, _>>()?;
    let lambdas: Vec<f64> = grid.iter().map(|&s| cfg.lambda.eval_scalar(s)).collect::<Result<_, _>>()?;
    let rho_max = pts.iter().map(|p| p.rho).fold(0.0, f64::max).max(1e-300);

    let mut out = DlmiProblem {
        problem: SdpProblem::new(0),
        roles: Vec::new(),
        grid: grid.clone(),
        domain: d,
        n,
        m,
        order: cfg.order,
        lambda: cfg.lambda.clone(),
        boundary: cfg.boundary.clone(),
        gain_bound: cfg.gain_weight > 0.0,
    };
    let nv = out.num_vars();
    let mut prob = SdpProblem::new(nv);
    if let Some(mu) = out.mu_index() {
        prob.objective[mu] = cfg.gain_weight;
    }

    // Unit directions of W and Y.
    let mut w_dirs = Vec::new();
    for b in 0..n {
        for a in 0..=b {
            let mut e = DMatrix::zeros(n, n);
            e[(a, b)] = 1.0;
            e[(b, a)] = 1.0;
            w_dirs.push((a, b, e));
        }
    }
    let mut y_dirs = Vec::new();
    for c in 0..n {
        for r in 0..m {
            let mut e = DMatrix::zeros(m, n);
            e[(r, c)] = 1.0;
            y_dirs.push((r, c, e));
        }
    }
    let zn = DMatrix::zeros(n, n);
    let zy = DMatrix::zeros(m, n);

    for (k, (&s, pt)) in grid.iter().zip(&pts).enumerate() {
        let t = (s - d.s_alpha) / d.width();
        let [bv, bd, _] = bernstein_jet(cfg.order, t);
        let scale = block_scale(pt);
        let lam = lambdas[k];
        let end = k == 0 || k + 1 == grid.len();
        // Coefficient matrices of the DLMI block for every variable.
        let mut coeffs: Vec<(usize, DMatrix<f64>)> = Vec::new();
        for i in 0..=cfg.order {
            for (a, b, e) in &w_dirs {
                let c = dlmi_matrix(pt, lam, &(e * bv[i]), &(e * (bd[i] / d.width())), &zy) * scale;
                coeffs.push((out.w_index(i, *a, *b), c));
            }
            for (r, c, e) in &y_dirs {
                let c2 = dlmi_matrix(pt, lam, &zn, &zn, &(e * bv[i])) * scale;
                coeffs.push((out.y_index(i, *r, *c), c2));
            }
        }
        if end {
            // At rest ρ = 0 and 𝓟 M 𝓟ᵀ ≡ 0, so M ⪰ 0 needs M𝓟ᵀ = 0 and the
            // restriction to the complement of 𝓟ᵀ to be PSD.
            let v = pt.p_row.transpose();
            for row in 0..n {
                let eq: Vec<(usize, f64)> = coeffs.iter().map(|(var, c)| (*var, (c * &v)[row])).collect();
                let mag = eq.iter().map(|x| x.1.abs()).fold(0.0, f64::max);
                if mag > 1e-13 {
                    let eq: Vec<(usize, f64)> = eq.into_iter().map(|(i, x)| (i, x / mag)).collect();
                    prob.add_equality(&eq, 0.0);
                }
            }
            let basis = complement_basis(pt.p_row.as_slice());
            let mut blk = PsdBlock::new(n - 1);
            for (var, c) in &coeffs {
                blk.add_matrix(Some(*var), &(basis.transpose() * c * &basis));
            }
            prob.blocks.push(blk);
            out.roles.push(BlockRole::BoundaryDlmi { s });
            {
                let ci = if k == 0 { 0 } else { cfg.order };
                let mut blk = PsdBlock::new(n);
                for (a, b, e) in &w_dirs {
                    blk.add_matrix(Some(out.w_index(ci, *a, *b)), &(-sym(&(&pt.a_s * e)) * scale));
                }
                for (r, c, e) in &y_dirs {
                    blk.add_matrix(Some(out.y_index(ci, *r, *c)), &(-sym(&(&pt.b_s * e)) * scale));
                }
                blk.add_matrix(None, &(DMatrix::identity(n, n) * -cfg.boundary_margin));
                prob.blocks.push(blk);
                out.roles.push(BlockRole::BoundaryLyapunov { s });
            }
        } else {
            let mut blk = PsdBlock::new(n);
            for (var, c) in &coeffs {
                blk.add_matrix(Some(*var), c);
            }
            if cfg.margin > 0.0 {
                blk.add_matrix(None, &(DMatrix::identity(n, n) * (-cfg.margin * cfg.w_min * pt.rho / rho_max)));
            }
            prob.blocks.push(blk);
            out.roles.push(BlockRole::Dlmi { s });
        }
        // W block sits in the trailing n×n corner, after the m gain rows.
        let off = if cfg.gain_weight > 0.0 { m } else { 0 };
        let mut wb = PsdBlock::new(n + off);
        let embed = |e: &DMatrix<f64>, r0: usize, c0: usize| {
            let mut big = DMatrix::zeros(n + off, n + off);
            big.view_mut((r0, c0), (e.nrows(), e.ncols())).copy_from(e);
            if r0 != c0 {
                big.view_mut((c0, r0), (e.ncols(), e.nrows())).copy_from(&e.transpose());
            }
            big
        };
        for i in 0..=cfg.order {
            for (a, b, e) in &w_dirs {
                wb.add_matrix(Some(out.w_index(i, *a, *b)), &embed(&(e * bv[i]), off, off));
            }
            if off > 0 {
                for (r, c, e) in &y_dirs {
                    wb.add_matrix(Some(out.y_index(i, *r, *c)), &embed(&(e * bv[i]), 0, off));
                }
            }
        }
        wb.add_matrix(None, &embed(&(DMatrix::identity(n, n) * -cfg.w_min), off, off));
        if let Some(mu) = out.mu_index() {
            wb.add_matrix(Some(mu), &embed(&DMatrix::identity(m, m), 0, 0));
        }
        prob.blocks.push(wb);
        out.roles.push(BlockRole::WLowerBound { s });
        for i in 0..=cfg.order {
            for a in 0..n {
                prob.objective[out.w_index(i, a, a)] += bv[i] / grid.len() as f64;
            }
        }
    }

    if let BoundaryHandling::Equality { k_alpha, k_omega } = &cfg.boundary {
        for (ci, kk) in [(0, k_alpha), (cfg.order, k_omega)] {
            for r in 0..m {
                for c in 0..n {
                    let mut eq = vec![(out.y_index(ci, r, c), 1.0)];
                    for l in 0..n {
                        eq.push((out.w_index(ci, l, c), -kk[(r, l)]));
                    }
                    prob.add_equality(&eq, 0.0);
                }
            }
        }
    }
    out.problem = prob;
    Ok(out)
}

/// Solves the discretized DLMI with `backend` and decodes the gain schedule.
/// The result is not trusted: run [`certify_design`] on it.
pub fn solve_sdp(p: &DlmiProblem, backend: &dyn SdpBackend) -> Result<GainSchedule, SynthesisError> {
    match backend.solve(&p.problem) {
        Ok(sol) => p.decode(&sol.y),
        Err(SdpError::Infeasible { block, margin }) => Err(SynthesisError::Infeasible(match block {
            Some(j) => format!("{} violated by {margin:.3e}", p.describe_block(j)),
            None => format!("equality constraints inconsistent (residual {margin:.3e})"),
        })),
        Err(e) => Err(SynthesisError::BackendFailure(e.to_string())),
    }
}

// ---------------------------------------------------------------------------
// Certification

#[derive(Debug, Clone, Copy)]
pub struct CertifyOptions {
    pub dense_grid: usize,
    /// DLMI eigenvalues must be `≥ −eig_tolerance·‖W‖`.
    pub eig_tolerance: f64,
    /// MLDE residual must be `≤ mlde_tolerance·‖R‖‖A_cl‖`.
    pub mlde_tolerance: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { dense_grid: 1000, eig_tolerance: 1e-7, mlde_tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryCertificate {
    pub s: f64,
    /// Smallest eigenvalue of `Q = −(A_clᵀR + RA_cl)`.
    pub q_min_eig: f64,
    /// `‖ale_solve(A_cl, Q) − R‖ / ‖R‖`.
    pub ale_residual: f64,
    pub abscissa: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub alpha: BoundaryCertificate,
    pub omega: BoundaryCertificate,
    pub grid: Vec<f64>,
    /// Smallest eigenvalue of the scaled DLMI block divided by `‖W‖`.
    pub dlmi_min_eigs: Vec<f64>,
    /// Relative projected MLDE residual.
    pub mlde_residuals: Vec<f64>,
    /// Smallest eigenvalue of the recovered `Q⊥` on `ker 𝓟`, relative.
    pub q_perp_min_eigs: Vec<f64>,
    pub violations: Vec<String>,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn worst_dlmi(&self) -> f64 {
        self.dlmi_min_eigs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn worst_mlde(&self) -> f64 {
        self.mlde_residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Closed-loop quantities of a design at one point of the orbit.
#[derive(Debug, Clone)]
pub struct DesignPoint {
    pub pt: OrbitPoint,
    pub k: DMatrix<f64>,
    pub a_cl: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub dr: DMatrix<f64>,
    /// `Q⊥` recovered from the projected Lyapunov equation.
    pub q_perp: DMatrix<f64>,
}

pub fn design_point(
    sys: &dyn ControlAffine,
    man: &Maneuver,
    op: &ProjectionOperator,
    gains: &GainSchedule,
    s: f64,
) -> Result<DesignPoint, SynthesisError> {
    let pt = orbit_point(sys, man, op, s)?;
    let k = gains.k(s)?;
    let a_cl = pt.a_cl(&k);
    let (r, dr) = gains.r_jet(s)?;
    let rf = &r * &pt.f;
    let coupling = sym(&(&rf * &pt.dp_row));
    let q_perp = -(sym(&(&r * &pt.e_perp * &a_cl)) + (&dr - coupling) * pt.rho);
    Ok(DesignPoint { pt, k, a_cl, r, dr, q_perp })
}

fn boundary_certificate(
    sys: &dyn ControlAffine,
    man: &Maneuver,
    op: &ProjectionOperator,
    gains: &GainSchedule,
    s: f64,
    label: &str,
    violations: &mut Vec<String>,
) -> Result<BoundaryCertificate, SynthesisError> {
    let dp = design_point(sys, man, op, gains, s)?;
    let abscissa = spectral_abscissa(&dp.a_cl);
    let q = -sym(&(dp.a_cl.transpose() * &dp.r));
    let q_min_eig = min_eig(&q);
    let mut ale_residual = f64::NAN;
    if abscissa < 0.0 {
        if let Ok(r) = ale_solve(&dp.a_cl, &q) {
            ale_residual = (r - &dp.r).norm() / dp.r.norm();
        }
    } else {
        violations.push(format!("A_cl({label}) not Hurwitz (abscissa {abscissa:.3e})"));
    }
    if !(q_min_eig > 0.0) {
        violations.push(format!("recovered Q_{label} not positive definite (min eigenvalue {q_min_eig:.3e})"));
    }
    if !(ale_residual < 1e-8) {
        violations.push(format!("ALE residual at {label} is {ale_residual:.3e}"));
    }
    Ok(BoundaryCertificate { s, q_min_eig, ale_residual, abscissa })
}

/// `R⊥ = E⊥ᵀ R E⊥` at `s`.
fn r_perp(sys: &dyn ControlAffine, man: &Maneuver, op: &ProjectionOperator, gains: &GainSchedule, s: f64) -> Result<DMatrix<f64>, SynthesisError> {
    let _ = sys;
    let e = op.tube_e_perp(s)?;
    let (r, _) = gains.r_jet(s)?;
    let _ = man;
    Ok(e.transpose() * r * e)
}

/// Checks the boundary Lyapunov equations and Hurwitz property, the DLMI on a
/// dense grid, and the projected Lyapunov (MLDE) residual with the recovered
/// `Q⊥`. The certificate is returned even when it lists violations.
pub fn certify_design(
    sys: &dyn ControlAffine,
    man: &Maneuver,
    op: &ProjectionOperator,
    gains: &GainSchedule,
    opts: &CertifyOptions,
) -> Result<Certificate, SynthesisError> {
    let d = man.domain();
    if gains.n() != sys.n() || gains.m() != sys.m() {
        return Err(SynthesisError::InconsistentDimensions("gains vs system".into()));
    }
    let mut violations = Vec::new();
    let alpha = boundary_certificate(sys, man, op, gains, d.s_alpha, "α", &mut violations)?;
    let omega = boundary_certificate(sys, man, op, gains, d.s_omega, "ω", &mut violations)?;
    let grid = d.uniform(opts.dense_grid.max(2));
    let rows: Vec<(f64, f64, f64)> = grid
        .par_iter()
        .map(|&s| -> Result<(f64, f64, f64), SynthesisError> {
            let dp = design_point(sys, man, op, gains, s)?;
            let w = gains.w.eval(s)?;
            let dw = gains.w.derivative(s, 1)?;
            let y = gains.y.eval(s)?;
            let lam = gains.lambda_at(s)?;
            let blk = dlmi_matrix(&dp.pt, lam, &w, &dw, &y) * block_scale(&dp.pt);
            let wn = w.norm();
            let dlmi = min_eig(&blk) / wn;

            let scale = (dp.r.norm() * dp.a_cl.norm()).max(1e-300);
            let e = &dp.pt.e_perp;
            let rp = e.transpose() * &dp.r * e;
            let h = (1e-5 * d.width()).min((s - d.s_alpha) / 2.5).min((d.s_omega - s) / 2.5);
            let drp = if h > 1e-9 * d.width() {
                let at = |k: f64| r_perp(sys, man, op, gains, s + k * h);
                (at(-2.0)? - at(2.0)? + (at(1.0)? - at(-1.0)?) * 8.0) / (12.0 * h)
            } else {
                DMatrix::zeros(rp.nrows(), rp.ncols())
            };
            let res = e.transpose() * (sym(&(dp.a_cl.transpose() * &rp)) + drp * dp.pt.rho + &dp.q_perp) * e;
            let mlde = res.norm() / scale;
            let z = complement_basis(dp.pt.f.as_slice());
            // ker 𝓟 basis: project the complement of F onto ker 𝓟.
            let kb = e * z;
            let qz = kb.transpose() * &dp.q_perp * &kb;
            let gram = kb.transpose() * &kb;
            let qmin = generalized_min_eig(&qz, &gram) / scale;
            Ok((dlmi, mlde, qmin))
        })
        .collect::<Result<_, _>>()?;
    let dlmi_min_eigs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mlde_residuals: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let q_perp_min_eigs: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let (k_worst, worst) = dlmi_min_eigs.iter().enumerate().fold((0, f64::INFINITY), |a, (k, &v)| if v < a.1 { (k, v) } else { a });
    if !(worst >= -opts.eig_tolerance) {
        violations.push(format!("DLMI min eigenvalue {worst:.3e} at s = {:.6}", grid[k_worst]));
    }
    let (k_m, worst_m) = mlde_residuals.iter().enumerate().fold((0, 0.0), |a, (k, &v)| if v > a.1 || v.is_nan() { (k, v) } else { a });
    if !(worst_m <= opts.mlde_tolerance) {
        violations.push(format!("MLDE residual {worst_m:.3e} at s = {:.6}", grid[k_m]));
    }
    let (k_q, worst_q) = q_perp_min_eigs.iter().enumerate().fold((0, f64::INFINITY), |a, (k, &v)| if v < a.1 { (k, v) } else { a });
    if !(worst_q > -opts.eig_tolerance) {
        violations.push(format!("recovered Q⊥ not positive on ker 𝓟 (min {worst_q:.3e} at s = {:.6})", grid[k_q]));
    }
    Ok(Certificate { alpha, omega, grid, dlmi_min_eigs, mlde_residuals, q_perp_min_eigs, violations })
}

/// Smallest `λ` with `A x = λ G x`, `G` symmetric positive definite.
fn generalized_min_eig(a: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    match g.clone().cholesky() {
        Some(ch) => {
            let l = ch.l();
            let li = l.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(l.nrows(), l.ncols(), f64::NAN));
            min_eig(&(&li * a * li.transpose()))
        }
        None => f64::NAN,
    }
}

/// Certification wrapper that turns violations into an error.
pub fn require_certified(cert: &Certificate) -> Result<(), SynthesisError> {
    if cert.passed() {
        Ok(())
    } else {
        Err(SynthesisError::CertificationFailed(cert.violations.clone()))
    }
}

// ---------------------------------------------------------------------------
// Reduced (n−1)-dimensional Lyapunov equation

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedCheck {
    pub abscissa_alpha: f64,
    pub abscissa_omega: f64,
    /// Largest `‖𝓡(s) − JᵀRJ‖ / ‖JᵀRJ‖` over the nodes.
    pub max_mismatch: f64,
    pub nodes: usize,
}

/// Radau IIA (order 5) coefficients.
fn radau_tableau() -> ([f64; 3], DMatrix<f64>) {
    let r6 = 6f64.sqrt();
    let c = [(4.0 - r6) / 10.0, (4.0 + r6) / 10.0, 1.0];
    let a = DMatrix::from_row_slice(
        3,
        3,
        &[
            (88.0 - 7.0 * r6) / 360.0,
            (296.0 - 169.0 * r6) / 1800.0,
            (-2.0 + 3.0 * r6) / 225.0,
            (296.0 + 169.0 * r6) / 1800.0,
            (88.0 + 7.0 * r6) / 360.0,
            (-2.0 - 3.0 * r6) / 225.0,
            (16.0 - r6) / 36.0,
            (16.0 + r6) / 36.0,
            1.0 / 9.0,
        ],
    );
    (c, a)
}

/// Integrates `ρ𝓡′ = −𝓐ᵀ𝓡 − 𝓡𝓐 − 𝓠` in the reduced coordinates
/// `Ω = [F, J]`, `J′ = −F𝓟′J`, backward from the Lyapunov solution at `s_ω`
/// (the stable direction) with Radau IIA, and compares with `JᵀRJ`.
pub fn reduced_uniqueness_check(
    sys: &dyn ControlAffine,
    man: &Maneuver,
    op: &ProjectionOperator,
    gains: &GainSchedule,
    nodes: usize,
    tolerance: f64,
) -> Result<ReducedCheck, SynthesisError> {
    let d = man.domain();
    let n = sys.n();
    let nr = n - 1;
    let nodes = nodes.max(10);
    let (c, ra) = radau_tableau();
    let ra_inv = ra.clone().try_inverse().expect("Radau matrix is invertible");
    // Nodes from s_ω down to s_α, clustered at both ends.
    let mid = d.midpoint();
    let half = 0.5 * d.width();
    let mut sn: Vec<f64> = (0..=nodes).map(|k| mid + half * (std::f64::consts::PI * k as f64 / nodes as f64).cos()).collect();
    sn[0] = d.s_omega;
    sn[nodes] = d.s_alpha;
    let mut stage_s = Vec::new();
    for w in sn.windows(2) {
        let h = w[1] - w[0];
        for ci in c {
            stage_s.push(w[0] + ci * h);
        }
    }
    let mut all: Vec<f64> = sn.iter().chain(stage_s.iter()).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();

    // J along ascending s by RK4 with substeps.
    let p0 = op.tube_jacobian(d.s_alpha)?;
    let mut j = complement_basis(p0.as_slice());
    let jrhs = |s: f64, j: &DMatrix<f64>| -> Result<DMatrix<f64>, SynthesisError> {
        let f = man.tangent(s)?;
        let dp = op.tube_hessian_term(s)?;
        Ok(-(DMatrix::from_column_slice(n, 1, f.as_slice()) * dp * j))
    };
    let mut js = vec![(all[0], j.clone())];
    for w in all.windows(2) {
        let (a, b) = (w[0], w[1]);
        let subs = 4;
        let h = (b - a) / subs as f64;
        for k in 0..subs {
            let s = a + k as f64 * h;
            let k1 = jrhs(s, &j)?;
            let k2 = jrhs(s + 0.5 * h, &(&j + &k1 * (0.5 * h)))?;
            let k3 = jrhs(s + 0.5 * h, &(&j + &k2 * (0.5 * h)))?;
            let k4 = jrhs(s + h, &(&j + &k3 * h))?;
            j += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        js.push((b, j.clone()));
    }
    let j_at = |s: f64| -> DMatrix<f64> {
        let k = js.partition_point(|(x, _)| *x < s).min(js.len() - 1);
        js[k].1.clone()
    };

    // Reduced quantities at s: (ρ, 𝓐, 𝓠, JᵀRJ).
    let reduced = |s: f64| -> Result<(f64, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>), SynthesisError> {
        let dp = design_point(sys, man, op, gains, s)?;
        let jm = j_at(s);
        let mut om = DMatrix::zeros(n, n);
        om.set_column(0, &dp.pt.f);
        om.view_mut((0, 1), (n, nr)).copy_from(&jm);
        let oi = om.try_inverse().ok_or(SynthesisError::InconsistentDimensions("Ω(s) singular".into()))?;
        let omega = oi.rows(1, nr).into_owned();
        let a = &omega * &dp.a_cl * &jm;
        let q = jm.transpose() * &dp.q_perp * &jm;
        let rr = jm.transpose() * &dp.r * &jm;
        Ok((dp.pt.rho, a, q, rr))
    };

    let (_, a_w, q_w, _) = reduced(d.s_omega)?;
    let (_, a_a, _, _) = reduced(d.s_alpha)?;
    let abscissa_alpha = spectral_abscissa(&a_a);
    let abscissa_omega = spectral_abscissa(&a_w);
    if !(abscissa_alpha < 0.0) {
        return Err(SynthesisError::ReducedNotHurwitz { s: d.s_alpha, abscissa: abscissa_alpha });
    }
    if !(abscissa_omega < 0.0) {
        return Err(SynthesisError::ReducedNotHurwitz { s: d.s_omega, abscissa: abscissa_omega });
    }
    let mut y = ale_solve(&a_w, &q_w)?;
    let dim = nr * nr;
    let eye = DMatrix::<f64>::identity(nr, nr);
    let vec = |m: &DMatrix<f64>| DMatrix::from_column_slice(dim, 1, m.as_slice());
    let mut worst: f64 = 0.0;
    for w in sn.windows(2) {
        let (s0, h) = (w[0], w[1] - w[0]);
        let mut lhs = DMatrix::zeros(3 * dim, 3 * dim);
        let mut rhs = DMatrix::zeros(3 * dim, 1);
        let y0 = vec(&y);
        for i in 0..3 {
            let (rho, a, q, _) = reduced(s0 + c[i] * h)?;
            let lop = eye.kronecker(&a.transpose()) + a.transpose().kronecker(&eye);
            for jj in 0..3 {
                let coef = rho * ra_inv[(i, jj)] / h;
                let mut blk = DMatrix::<f64>::identity(dim, dim) * coef;
                if i == jj {
                    blk += &lop;
                }
                lhs.view_mut((i * dim, jj * dim), (dim, dim)).copy_from(&blk);
                let mut r = rhs.view_mut((i * dim, 0), (dim, 1));
                r += &y0 * coef;
            }
            let mut r = rhs.view_mut((i * dim, 0), (dim, 1));
            r -= vec(&q);
        }
        let sol = lhs.lu().solve(&rhs).ok_or(SynthesisError::InconsistentDimensions("singular Radau stage system".into()))?;
        y = DMatrix::from_column_slice(nr, nr, sol.rows(2 * dim, dim).iter().copied().collect::<Vec<_>>().as_slice());
        y = (&y + y.transpose()) * 0.5;
        let (_, _, _, rr) = reduced(w[1])?;
        worst = worst.max((&y - &rr).norm() / rr.norm());
    }
    let check = ReducedCheck { abscissa_alpha, abscissa_omega, max_mismatch: worst, nodes };
    if !(worst <= tolerance) {
        return Err(SynthesisError::MismatchBeyondTolerance(worst));
    }
    Ok(check)
}

/// Largest `‖ρR′ + A_clᵀR + RA_cl + Q‖` on `grid` points; informational.
pub fn hauser_lde_residual(
    sys: &dyn ControlAffine,
    man: &Maneuver,
    op: &ProjectionOperator,
    gains: &GainSchedule,
    r: &Curve,
    q: &Curve,
    grid: usize,
) -> Result<f64, SynthesisError> {
    let mut worst: f64 = 0.0;
    for s in man.domain().uniform(grid.max(2)) {
        let pt = orbit_point(sys, man, op, s)?;
        let a_cl = pt.a_cl(&gains.k(s)?);
        let rv = r.eval(s)?;
        let res = r.derivative(s, 1)? * pt.rho + sym(&(a_cl.transpose() * &rv)) + q.eval(s)?;
        worst = worst.max(res.norm());
    }
    Ok(worst)
}
