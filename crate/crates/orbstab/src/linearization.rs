//! Control-affine systems `ẋ = f(x) + B(x)u`, their Jacobians, and the
//! along-orbit, transverse and variational linear systems.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::curves::CurveError;
use crate::maneuver::Maneuver;
use crate::numerics::{fd_step, jacobian5, rk4_step};
use crate::projection::{ProjectionError, ProjectionOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearizationError {
    #[error("non-finite entries in {0}")]
    NonFiniteEntries(&'static str),
    #[error("not an equilibrium: ‖f + Bu‖ = {0}")]
    NotAnEquilibrium(f64),
    #[error("transverse constraint violated: |𝓟z| = {0}")]
    ConstraintViolated(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

pub trait ControlAffine: Send + Sync {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    fn input(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn drift_jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    /// `∂b_i/∂x` for every input column.
    fn input_jacobians(&self, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        None
    }
    /// Weight applied to dynamics residuals so they are measured in the
    /// system's natural (e.g. force) units.
    fn residual_metric(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.input(x) * u
    }
}

/// `ẋ = A x + B u` with constant matrices.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl ControlAffine for LinearSystem {
    fn n(&self) -> usize {
        self.a.nrows()
    }
    fn m(&self) -> usize {
        self.b.ncols()
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }
    fn input(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.b.clone()
    }
    fn drift_jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.a.clone())
    }
    fn input_jacobians(&self, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(self.a.nrows(), self.a.nrows()); self.b.ncols()])
    }
}

fn finite(m: DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>, LinearizationError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(m)
    } else {
        Err(LinearizationError::NonFiniteEntries(what))
    }
}

/// `∂/∂x (f(x) + B(x)u)` by five-point central differences.
pub fn jacobian_a_fd(sys: &dyn ControlAffine, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>, LinearizationError> {
    finite(jacobian5(|p| sys.rhs(p, u), x, fd_step(x)), "A(x, u)")
}

/// Analytic `A(x, u)` if the system provides every Jacobian.
pub fn jacobian_a_analytic(sys: &dyn ControlAffine, x: &DVector<f64>, u: &DVector<f64>) -> Option<DMatrix<f64>> {
    let mut a = sys.drift_jacobian(x)?;
    for (i, db) in sys.input_jacobians(x)?.iter().enumerate() {
        a += db * u[i];
    }
    Some(a)
}

pub fn jacobian_a(sys: &dyn ControlAffine, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>, LinearizationError> {
    match jacobian_a_analytic(sys, x, u) {
        Some(a) => finite(a, "A(x, u)"),
        None => jacobian_a_fd(sys, x, u),
    }
}

/// Largest relative deviation between analytic and numerical `A(x, u)`, if both exist.
pub fn jacobian_cross_check(sys: &dyn ControlAffine, x: &DVector<f64>, u: &DVector<f64>) -> Option<f64> {
    let an = jacobian_a_analytic(sys, x, u)?;
    let fd = jacobian_a_fd(sys, x, u).ok()?;
    Some((&an - &fd).amax() / an.amax().max(1e-300))
}

/// Rank of `[B, AB, …, Aⁿ⁻¹B]` with each block scaled to unit norm and a
/// relative singular-value threshold of `1e-8`.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        let nb = blk.norm();
        let scaled = if nb > 0.0 { &blk / nb } else { blk.clone() };
        ctrb.view_mut((0, k * m), (n, m)).copy_from(&scaled);
        blk = a * blk;
    }
    let sv = ctrb.singular_values();
    let smax = sv.max();
    sv.iter().filter(|&&v| v > 1e-8 * smax).count()
}

#[derive(Debug, Clone)]
pub struct EquilibriumLinearization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub controllability_rank: usize,
    pub controllable: bool,
}

pub fn linearize_equilibrium(
    sys: &dyn ControlAffine,
    x_e: &DVector<f64>,
    u_e: &DVector<f64>,
) -> Result<EquilibriumLinearization, LinearizationError> {
    let r = sys.rhs(x_e, u_e);
    let r = sys.residual_metric(x_e).map(|w| w * &r).unwrap_or(r).norm();
    if !(r < 1e-6) {
        return Err(LinearizationError::NotAnEquilibrium(r));
    }
    let a = jacobian_a(sys, x_e, u_e)?;
    let b = finite(sys.input(x_e), "B(x)")?;
    let rank = controllability_rank(&a, &b);
    Ok(EquilibriumLinearization { controllable: rank == sys.n(), controllability_rank: rank, a, b })
}

/// Quantities of the linearization at one point of the orbit. At the
/// endpoints the projection quantities are the one-sided tube limits.
#[derive(Debug, Clone)]
pub struct OrbitPoint {
    pub s: f64,
    pub rho: f64,
    pub f: DVector<f64>,
    pub p_row: DMatrix<f64>,
    pub dp_row: DMatrix<f64>,
    pub e_perp: DMatrix<f64>,
    pub a_s: DMatrix<f64>,
    pub b_s: DMatrix<f64>,
    pub a_perp: DMatrix<f64>,
    pub b_perp: DMatrix<f64>,
    pub du_star: DVector<f64>,
}

impl OrbitPoint {
    pub fn a_cl(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a_s + &self.b_s * k
    }
}

pub fn orbit_point(
    sys: &dyn ControlAffine,
    man: &Maneuver,
    op: &ProjectionOperator,
    s: f64,
) -> Result<OrbitPoint, LinearizationError> {
    if sys.n() != man.n() || sys.m() != man.m() {
        return Err(LinearizationError::DimensionMismatch("system vs maneuver".into()));
    }
    let x = man.state(s)?;
    let u = man.control(s)?;
    let f = man.tangent(s)?;
    let rho = man.rho(s)?;
    let p_row = op.tube_jacobian(s)?;
    let dp_row = op.tube_hessian_term(s)?;
    let e_perp = op.tube_e_perp(s)?;
    let a_s = jacobian_a(sys, &x, &u)?;
    let b_s = finite(sys.input(&x), "B(x⋆)")?;
    let a_perp = &e_perp * &a_s - (&f * &dp_row * &e_perp) * rho;
    let b_perp = &e_perp * &b_s;
    Ok(OrbitPoint { s, rho, du_star: man.control_prime(s)?, f, p_row, dp_row, e_perp, a_s, b_s, a_perp, b_perp })
}

/// `(A⊥(s), B⊥(s))` on the open interior.
pub fn transverse_matrices(
    sys: &dyn ControlAffine,
    man: &Maneuver,
    op: &ProjectionOperator,
    s: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), LinearizationError> {
    if !man.domain().is_interior(s) {
        return Err(ProjectionError::OutOfDomain(s).into());
    }
    let pt = orbit_point(sys, man, op, s)?;
    Ok((pt.a_perp, pt.b_perp))
}

pub const CONSTRAINT_TOLERANCE: f64 = 1e-8;

/// `ż = [E⊥A_cl − ρF𝓟′] z` subject to `𝓟z = 0`.
pub fn transverse_rhs(pt: &OrbitPoint, k: &DMatrix<f64>, z: &DVector<f64>) -> Result<DVector<f64>, LinearizationError> {
    let c = (&pt.p_row * z)[0].abs();
    if c > CONSTRAINT_TOLERANCE * (1.0 + z.norm()) {
        return Err(LinearizationError::ConstraintViolated(c));
    }
    let m = &pt.e_perp * pt.a_cl(k) - (&pt.f * &pt.dp_row) * pt.rho;
    Ok(m * z)
}

/// `χ̇ = [A_cl + B_s(u⋆′ − KF)𝓟] χ`.
pub fn variational_rhs(pt: &OrbitPoint, k: &DMatrix<f64>, chi: &DVector<f64>) -> DVector<f64> {
    let corr = &pt.b_s * (DMatrix::from_column_slice(pt.du_star.len(), 1, pt.du_star.as_slice()) - k * &pt.f) * &pt.p_row;
    (pt.a_cl(k) + corr) * chi
}

/// Sample of a co-propagated linear trajectory.
#[derive(Debug, Clone)]
pub struct LinearSample {
    pub t: f64,
    pub s: f64,
    pub v: DVector<f64>,
}

/// Which linear system [`propagate`] integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearFlow {
    Transverse,
    Variational,
}

/// Integrates `(s, v)` with `ṡ = ρ(s)` by RK4. Transverse states are
/// re-projected onto `ker 𝓟` after every step.
pub fn propagate(
    sys: &dyn ControlAffine,
    man: &Maneuver,
    op: &ProjectionOperator,
    gain: &dyn Fn(f64) -> DMatrix<f64>,
    flow: LinearFlow,
    s0: f64,
    v0: &DVector<f64>,
    t_final: f64,
    dt: f64,
) -> Result<Vec<LinearSample>, LinearizationError> {
    let n = v0.len();
    let d = man.domain();
    let mut y = DVector::zeros(n + 1);
    y[0] = s0;
    y.rows_mut(1, n).copy_from(v0);
    let mut out = vec![LinearSample { t: 0.0, s: s0, v: v0.clone() }];
    let mut err = None;
    let mut rhs = |_t: f64, y: &DVector<f64>| -> DVector<f64> {
        let s = y[0].clamp(d.s_alpha, d.s_omega);
        let v = y.rows(1, n).into_owned();
        let mut dy = DVector::zeros(n + 1);
        match orbit_point(sys, man, op, s) {
            Ok(pt) => {
                let k = gain(s);
                dy[0] = pt.rho;
                let dv = match flow {
                    LinearFlow::Transverse => {
                        // Stage values drift off ker 𝓟 at the rounding level; project first.
                        let vz = &pt.e_perp * &v;
                        let m = &pt.e_perp * pt.a_cl(&k) - (&pt.f * &pt.dp_row) * pt.rho;
                        m * vz
                    }
                    LinearFlow::Variational => variational_rhs(&pt, &k, &v),
                };
                dy.rows_mut(1, n).copy_from(&dv);
            }
            Err(e) => {
                err.get_or_insert(e);
                dy.fill(f64::NAN);
            }
        }
        dy
    };
    let steps = (t_final / dt).ceil().max(1.0) as usize;
    let h = t_final / steps as f64;
    for i in 0..steps {
        let t = i as f64 * h;
        y = rk4_step(&mut rhs, t, &y, h);
        if flow == LinearFlow::Transverse {
            let s = y[0].clamp(d.s_alpha, d.s_omega);
            let ep = op.tube_e_perp(s)?;
            let v = ep * y.rows(1, n);
            y.rows_mut(1, n).copy_from(&v);
        }
        out.push(LinearSample { t: t + h, s: y[0], v: y.rows(1, n).into_owned() });
    }
    drop(rhs);
    if let Some(e) = err {
        return Err(e);
    }
    Ok(out)
}
