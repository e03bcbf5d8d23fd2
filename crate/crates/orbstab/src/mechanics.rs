//! Mechanical systems `M(q)q̈ + C(q,q̇)q̇ + G(q) = Bu·u` and two concrete
//! models: the double integrator and the butterfly robot (a ball rolling on a
//! rotating planar frame with polar boundary `r_f(φ) = a − b·cos 2φ`).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linearization::ControlAffine;
use crate::numerics::{derivative5, jacobian5};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanicsError {
    #[error("non-finite entries in {0}")]
    NonFiniteEntries(&'static str),
    #[error("inertia matrix is singular at q = {0:?}")]
    SingularInertia(Vec<f64>),
    #[error("offset-curve assumption violated at φ = {phi}: r_b·κ_f = {value}")]
    AssumptionA1Violated { phi: f64, value: f64 },
    #[error("frame radius not positive at φ = {0}")]
    NonPositiveRadius(f64),
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
}

/// Inertia, potential gradient and actuation of a mechanical system.
pub trait MechanicalModel: Send + Sync {
    fn dof(&self) -> usize;
    fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64>;
    /// `∂M/∂q_i` for every coordinate, if known analytically.
    fn inertia_partials(&self, _q: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        None
    }
    fn gravity(&self, q: &DVector<f64>) -> DVector<f64>;
    fn gravity_jacobian(&self, _q: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    fn input_matrix(&self) -> DMatrix<f64>;
    /// Model-specific Coriolis matrix, if one is known in closed form.
    fn coriolis_closed_form(&self, _q: &DVector<f64>, _qd: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Clone)]
pub struct MechanicalSystem {
    pub model: Arc<dyn MechanicalModel>,
}

impl std::fmt::Debug for MechanicalSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MechanicalSystem(n_q = {})", self.model.dof())
    }
}

fn q_step(q: &DVector<f64>) -> f64 {
    1e-6 * (1.0 + q.norm())
}

impl MechanicalSystem {
    pub fn new(model: Arc<dyn MechanicalModel>) -> Self {
        Self { model }
    }

    pub fn dof(&self) -> usize {
        self.model.dof()
    }

    pub fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.model.inertia(q)
    }

    pub fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        self.model.gravity(q)
    }

    pub fn input_matrix(&self) -> DMatrix<f64> {
        self.model.input_matrix()
    }

    /// Central-difference `∂M/∂q_i`.
    pub fn inertia_partials_fd(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let h = q_step(q);
        (0..self.dof())
            .map(|i| {
                let at = |k: f64| {
                    let mut p = q.clone();
                    p[i] += k * h;
                    self.model.inertia(&p)
                };
                (at(-2.0) - at(2.0) + (at(1.0) - at(-1.0)) * 8.0) / (12.0 * h)
            })
            .collect()
    }

    pub fn inertia_partials(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.model.inertia_partials(q).unwrap_or_else(|| self.inertia_partials_fd(q))
    }

    pub fn gravity_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.model
            .gravity_jacobian(q)
            .unwrap_or_else(|| jacobian5(|p| self.model.gravity(p), q, q_step(q)))
    }

    /// `(C₁, C₂)` with `C₁ = Σ ∂M/∂q_i q̇_i` and row `k` of `C₂` equal to `−½ (∂M/∂q_k q̇)ᵀ`.
    pub fn coriolis_parts(&self, q: &DVector<f64>, qd: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dof();
        let dm = self.inertia_partials(q);
        let mut c1 = DMatrix::zeros(n, n);
        let mut c2 = DMatrix::zeros(n, n);
        for (i, dmi) in dm.iter().enumerate() {
            c1 += dmi * qd[i];
            let row = dmi * qd;
            for j in 0..n {
                c2[(i, j)] = -0.5 * row[j];
            }
        }
        (c1, c2)
    }

    pub fn coriolis_generic(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DMatrix<f64>, MechanicsError> {
        let (c1, c2) = self.coriolis_parts(q, qd);
        let c = c1 + c2;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(MechanicsError::NonFiniteEntries("Coriolis matrix"));
        }
        Ok(c)
    }

    /// Closed-form Coriolis matrix when the model provides one, else the generic one.
    pub fn coriolis(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DMatrix<f64>, MechanicsError> {
        match self.model.coriolis_closed_form(q, qd) {
            Some(c) if c.iter().all(|v| v.is_finite()) => Ok(c),
            Some(_) => Err(MechanicsError::NonFiniteEntries("Coriolis matrix")),
            None => self.coriolis_generic(q, qd),
        }
    }

    /// Least-squares `u` with `Bu·u ≈ G(q)` and the residual `‖G − Bu·u‖`.
    pub fn equilibrium_control(&self, q: &DVector<f64>) -> (DVector<f64>, f64) {
        let bu = self.input_matrix();
        let g = self.gravity(q);
        let u = pseudo_inverse(&bu) * &g;
        let r = (&g - &bu * &u).norm();
        (u, r)
    }

    pub fn to_control_affine(&self) -> Result<MechanicalControlAffine, MechanicsError> {
        let q0 = DVector::zeros(self.dof());
        if self.inertia(&q0).cholesky().is_none() {
            return Err(MechanicsError::SingularInertia(q0.as_slice().to_vec()));
        }
        Ok(MechanicalControlAffine { sys: self.clone() })
    }
}

/// Left inverse `(BᵀB)⁻¹Bᵀ` of a full-column-rank matrix.
pub fn pseudo_inverse(b: &DMatrix<f64>) -> DMatrix<f64> {
    let btb = b.transpose() * b;
    btb.try_inverse().expect("input matrix has full column rank") * b.transpose()
}

/// First-order form `x = col(q, q̇)` of a mechanical system.
#[derive(Debug, Clone)]
pub struct MechanicalControlAffine {
    pub sys: MechanicalSystem,
}

impl MechanicalControlAffine {
    fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let nq = self.sys.dof();
        (x.rows(0, nq).into_owned(), x.rows(nq, nq).into_owned())
    }

    /// `C(q,q̇)q̇`, which does not depend on the choice of `C`.
    fn coriolis_vector(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
        let (c1, c2) = self.sys.coriolis_parts(q, qd);
        (c1 + c2) * qd
    }
}

impl ControlAffine for MechanicalControlAffine {
    fn n(&self) -> usize {
        2 * self.sys.dof()
    }

    fn m(&self) -> usize {
        self.sys.input_matrix().ncols()
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let nq = self.sys.dof();
        let (q, qd) = self.split(x);
        let m = self.sys.inertia(&q);
        let c = self.sys.coriolis(&q, &qd).unwrap_or_else(|_| DMatrix::from_element(nq, nq, f64::NAN));
        let rhs = -(c * &qd + self.sys.gravity(&q));
        let qdd = m.lu().solve(&rhs).unwrap_or_else(|| DVector::from_element(nq, f64::NAN));
        let mut f = DVector::zeros(2 * nq);
        f.rows_mut(0, nq).copy_from(&qd);
        f.rows_mut(nq, nq).copy_from(&qdd);
        f
    }

    fn input(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let nq = self.sys.dof();
        let (q, _) = self.split(x);
        let bu = self.sys.input_matrix();
        let minv_b = self
            .sys
            .inertia(&q)
            .lu()
            .solve(&bu)
            .unwrap_or_else(|| DMatrix::from_element(nq, bu.ncols(), f64::NAN));
        let mut b = DMatrix::zeros(2 * nq, bu.ncols());
        b.view_mut((nq, 0), (nq, bu.ncols())).copy_from(&minv_b);
        b
    }

    /// Analytic in `M`, `∂M/∂q`, `∂G/∂q`; the `q`-derivative of `C q̇` is a
    /// central difference of the analytic Christoffel terms.
    fn drift_jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let nq = self.sys.dof();
        let (q, qd) = self.split(x);
        let lu = self.sys.inertia(&q).lu();
        let dm = self.sys.inertia_partials(&q);
        let qdd = lu.solve(&-(self.coriolis_vector(&q, &qd) + self.sys.gravity(&q)))?;
        let dcq = jacobian5(|p| self.coriolis_vector(p, &qd), &q, q_step(&q));
        let dg = self.sys.gravity_jacobian(&q);
        let mut dq = DMatrix::zeros(nq, nq);
        for k in 0..nq {
            let col = -(&dm[k] * &qdd) - dcq.column(k) - dg.column(k);
            dq.set_column(k, &lu.solve(&col)?);
        }
        let (c1, c2) = self.sys.coriolis_parts(&q, &qd);
        let mut dcv = c1 + c2 * 2.0;
        for (i, dmi) in dm.iter().enumerate() {
            let mut c = dcv.column_mut(i);
            c += dmi * &qd;
        }
        let dv = lu.solve(&-dcv)?;
        let mut a = DMatrix::zeros(2 * nq, 2 * nq);
        a.view_mut((0, nq), (nq, nq)).fill_with_identity();
        a.view_mut((nq, 0), (nq, nq)).copy_from(&dq);
        a.view_mut((nq, nq), (nq, nq)).copy_from(&dv);
        Some(a)
    }

    fn input_jacobians(&self, x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        let nq = self.sys.dof();
        let (q, _) = self.split(x);
        let lu = self.sys.inertia(&q).lu();
        let dm = self.sys.inertia_partials(&q);
        let minv_b = lu.solve(&self.sys.input_matrix())?;
        (0..minv_b.ncols())
            .map(|i| {
                let mut d = DMatrix::zeros(2 * nq, 2 * nq);
                for k in 0..nq {
                    let col = lu.solve(&-(&dm[k] * minv_b.column(i)))?;
                    d.view_mut((nq, k), (nq, 1)).copy_from(&col);
                }
                Some(d)
            })
            .collect()
    }

    fn residual_metric(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let nq = self.sys.dof();
        let (q, _) = self.split(x);
        let mut w = DMatrix::identity(2 * nq, 2 * nq);
        w.view_mut((nq, nq), (nq, nq)).copy_from(&self.sys.inertia(&q));
        Some(w)
    }
}

/// `q̈ = u`: one coordinate, unit inertia, no potential.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleIntegrator;

impl MechanicalModel for DoubleIntegrator {
    fn dof(&self) -> usize {
        1
    }
    fn inertia(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
    fn inertia_partials(&self, _q: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(1, 1)])
    }
    fn gravity(&self, _q: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn gravity_jacobian(&self, _q: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(1, 1))
    }
    fn input_matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
}

/// Polar description of the frame boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrameShape {
    /// `r_f = a − b cos 2φ`.
    Butterfly { a: f64, b: f64 },
    /// `r_f = radius` (disk-on-disk).
    Circle { radius: f64 },
    /// `r_f = height / cos φ` (straight beam at distance `height`).
    Line { height: f64 },
}

impl FrameShape {
    /// `[r_f, r_f′, r_f″, r_f‴]` at `φ`.
    pub fn radius_jet(&self, phi: f64) -> [f64; 4] {
        match *self {
            FrameShape::Butterfly { a, b } => {
                let (s2, c2) = (2.0 * phi).sin_cos();
                [a - b * c2, 2.0 * b * s2, 4.0 * b * c2, -8.0 * b * s2]
            }
            FrameShape::Circle { radius } => [radius, 0.0, 0.0, 0.0],
            FrameShape::Line { height } => {
                let sec = 1.0 / phi.cos();
                let tan = phi.tan();
                [
                    height * sec,
                    height * sec * tan,
                    height * (sec * tan * tan + sec.powi(3)),
                    height * sec * tan * (tan * tan + 5.0 * sec * sec),
                ]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ButterflyParams {
    pub shape: FrameShape,
    pub m_ball: f64,
    pub r_b: f64,
    pub j_b: f64,
    pub j_f: f64,
    pub g: f64,
    /// Working arc `[φ_lo, φ_hi]` on which the geometry is validated.
    pub arc: [f64; 2],
}

impl Default for ButterflyParams {
    fn default() -> Self {
        Self {
            shape: FrameShape::Butterfly { a: 0.114, b: 0.039 },
            m_ball: 3.0e-3,
            r_b: 1.09e-2,
            j_b: 5.8e-7,
            j_f: 8.9e-4,
            g: 9.81,
            arc: [-0.5, 2.5],
        }
    }
}

/// Ball-centre curve quantities at one frame angle `φ`.
#[derive(Debug, Clone, Copy)]
pub struct BallGeometry {
    pub r_f: f64,
    /// Ball centre in frame coordinates.
    pub sigma: Vector2<f64>,
    pub tau: Vector2<f64>,
    /// Outward unit normal (`τ` turned a quarter counter-clockwise).
    pub normal: Vector2<f64>,
    /// Arc-length rate `dζ/dφ` of the ball-centre curve and its derivative.
    pub zeta_p: f64,
    pub zeta_pp: f64,
    /// Frame curvature and ball-centre curvature `dψ/dζ`.
    pub kappa_frame: f64,
    pub kappa: f64,
    /// Tangential angle and its first two `φ`-derivatives.
    pub psi: f64,
    pub dpsi: f64,
    pub ddpsi: f64,
}

impl BallGeometry {
    pub fn sigma_dot_tau(&self) -> f64 {
        self.sigma.dot(&self.tau)
    }
    pub fn sigma_dot_n(&self) -> f64 {
        self.sigma.dot(&self.normal)
    }
}

fn perp(v: Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-v.y, v.x)
}

fn rot(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ButterflyModel {
    pub params: ButterflyParams,
}

impl ButterflyModel {
    pub fn new(params: ButterflyParams) -> Result<Self, MechanicsError> {
        let p = &params;
        for (name, v) in [("m_ball", p.m_ball), ("r_b", p.r_b), ("j_b", p.j_b), ("j_f", p.j_f), ("g", p.g)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(MechanicsError::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if !(p.arc[0] < p.arc[1]) {
            return Err(MechanicsError::InvalidParameter("empty working arc".into()));
        }
        let model = Self { params };
        for k in 0..=600 {
            let phi = p.arc[0] + (p.arc[1] - p.arc[0]) * k as f64 / 600.0;
            model.geometry(phi)?;
        }
        Ok(model)
    }

    /// Ball-centre geometry at `φ`, derived from the polar frame curve.
    pub fn geometry(&self, phi: f64) -> Result<BallGeometry, MechanicsError> {
        let rb = self.params.r_b;
        let [r, r1, r2, r3] = self.params.shape.radius_jet(phi);
        if !(r > 0.0) {
            return Err(MechanicsError::NonPositiveRadius(phi));
        }
        let (sp, cp) = phi.sin_cos();
        let e_r = Vector2::new(sp, cp);
        let e_t = Vector2::new(cp, -sp);
        let l2 = r * r + r1 * r1;
        let l = l2.sqrt();
        let tau = (e_r * r1 + e_t * r) / l;
        let normal = perp(tau);
        let nn = r * r + 2.0 * r1 * r1 - r * r2;
        let nn1 = 2.0 * r * r1 + 3.0 * r1 * r2 - r * r3;
        let l1 = r1 * (r + r2) / l;
        let l2p = 2.0 * r1 * (r + r2);
        let dpsi = -nn / l2;
        let ddpsi = -(nn1 * l2 - nn * l2p) / (l2 * l2);
        let kappa_frame = dpsi / l;
        if rb * kappa_frame >= 1.0 {
            return Err(MechanicsError::AssumptionA1Violated { phi, value: rb * kappa_frame });
        }
        let zeta_p = l + rb * nn / l2;
        let zeta_pp = l1 + rb * (nn1 / l2 - 2.0 * nn * l1 / (l2 * l));
        let sigma = e_r * r + normal * rb;
        Ok(BallGeometry {
            r_f: r,
            sigma,
            tau,
            normal,
            zeta_p,
            zeta_pp,
            kappa_frame,
            kappa: dpsi / zeta_p,
            psi: -phi + (r1 / r).atan(),
            dpsi,
            ddpsi,
        })
    }

    fn geo(&self, q: &DVector<f64>) -> BallGeometry {
        self.geometry(q[1]).unwrap_or_else(|_| {
            // Outside the valid arc: propagate NaN instead of panicking in the dynamics.
            let nan = f64::NAN;
            BallGeometry {
                r_f: nan,
                sigma: Vector2::new(nan, nan),
                tau: Vector2::new(nan, nan),
                normal: Vector2::new(nan, nan),
                zeta_p: nan,
                zeta_pp: nan,
                kappa_frame: nan,
                kappa: nan,
                psi: nan,
                dpsi: nan,
                ddpsi: nan,
            }
        })
    }

    fn roll_inertia(&self) -> f64 {
        self.params.j_b / (self.params.r_b * self.params.r_b) + self.params.m_ball
    }

    fn coupling(&self, g: &BallGeometry) -> f64 {
        self.params.m_ball * g.sigma_dot_n() + self.params.j_b / self.params.r_b
    }

    /// World-frame gravity vector pointing up (potential `m·g·y`).
    fn g_up(&self) -> Vector2<f64> {
        Vector2::new(0.0, self.params.g)
    }

    /// Contact normal force; positive while the ball presses on the frame.
    pub fn normal_force(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> f64 {
        let g = self.geo(q);
        let m = self.params.m_ball;
        let (th_d, ph_d, th_dd) = (qd[0], qd[1], qdd[0]);
        let accel_n = th_dd * g.sigma_dot_tau() - th_d * th_d * g.sigma_dot_n()
            + 2.0 * th_d * ph_d * g.zeta_p
            + g.dpsi * g.zeta_p * ph_d * ph_d;
        let n_world = rot(q[0]) * g.normal;
        m * (accel_n + self.g_up().dot(&n_world))
    }

    pub fn system(self) -> MechanicalSystem {
        MechanicalSystem::new(Arc::new(self))
    }
}

impl MechanicalModel for ButterflyModel {
    fn dof(&self) -> usize {
        2
    }

    fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let g = self.geo(q);
        let p = &self.params;
        let m11 = p.j_f + p.j_b + p.m_ball * g.sigma.norm_squared();
        let m12 = -self.coupling(&g) * g.zeta_p;
        let m22 = self.roll_inertia() * g.zeta_p * g.zeta_p;
        DMatrix::from_row_slice(2, 2, &[m11, m12, m12, m22])
    }

    fn inertia_partials(&self, q: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        let g = self.geo(q);
        let m = self.params.m_ball;
        let c11 = m * g.zeta_p * g.sigma_dot_tau();
        let d11 = 2.0 * c11;
        let d12 = c11 * g.dpsi - self.coupling(&g) * g.zeta_pp;
        let d22 = 2.0 * self.roll_inertia() * g.zeta_p * g.zeta_pp;
        Some(vec![DMatrix::zeros(2, 2), DMatrix::from_row_slice(2, 2, &[d11, d12, d12, d22])])
    }

    fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        let g = self.geo(q);
        let m = self.params.m_ball;
        let r = rot(q[0]);
        let up = self.g_up();
        DVector::from_vec(vec![m * up.dot(&(r * perp(g.sigma))), m * g.zeta_p * up.dot(&(r * g.tau))])
    }

    fn gravity_jacobian(&self, q: &DVector<f64>) -> Option<DMatrix<f64>> {
        let g = self.geo(q);
        let m = self.params.m_ball;
        let r = rot(q[0]);
        let up = self.g_up();
        let g_tt = -m * up.dot(&(r * g.sigma));
        let g_tp = m * g.zeta_p * up.dot(&(r * g.normal));
        let g_pp = m * g.zeta_pp * up.dot(&(r * g.tau)) + m * g.zeta_p * g.dpsi * up.dot(&(r * g.normal));
        Some(DMatrix::from_row_slice(2, 2, &[g_tt, g_tp, g_tp, g_pp]))
    }

    fn input_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[1.0, 0.0])
    }

    fn coriolis_closed_form(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Option<DMatrix<f64>> {
        let g = self.geo(q);
        let m = self.params.m_ball;
        let c11 = m * g.zeta_p * g.sigma_dot_tau();
        let c12 = self.coupling(&g) * g.zeta_pp - c11 * g.kappa * g.zeta_p;
        let (th_d, ph_d) = (qd[0], qd[1]);
        Some(DMatrix::from_row_slice(
            2,
            2,
            &[
                c11 * ph_d,
                c11 * th_d - c12 * ph_d,
                -c11 * th_d,
                self.roll_inertia() * g.zeta_p * g.zeta_pp * ph_d,
            ],
        ))
    }
}

/// Finite-difference check values for the hand-derived geometry at `φ`:
/// `(ζ″, ψ′, ψ″, σ′·τ − ζ′)` computed numerically.
pub fn geometry_fd(model: &ButterflyModel, phi: f64) -> (f64, f64, f64, f64) {
    let h = 1e-5 * (1.0 + phi.abs());
    let geo = |p: f64| model.geometry(p).expect("inside arc");
    let zpp = derivative5(|p| geo(p).zeta_p, phi, h);
    let dpsi = derivative5(|p| geo(p).psi, phi, h);
    let ddpsi = derivative5(|p| geo(p).dpsi, phi, h);
    let dsig = Vector2::new(
        derivative5(|p| geo(p).sigma.x, phi, h),
        derivative5(|p| geo(p).sigma.y, phi, h),
    );
    let g = geo(phi);
    (zpp, dpsi, ddpsi, dsig.dot(&g.tau) - g.zeta_p)
}
