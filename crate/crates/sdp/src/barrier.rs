//! Log-barrier path-following solver.
//!
//! Equalities are eliminated through an SVD null-space basis, the remaining
//! variables are column-scaled, and a two-phase barrier method runs on the
//! reduced problem: phase I minimizes `t` subject to `F_j(z) + tI ⪰ 0` until a
//! strictly feasible point appears, phase II follows the central path of the
//! original objective. A large ball `‖z‖ < radius` keeps every barrier bounded.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::{SdpBackend, SdpError, SdpProblem, SdpSolution, SolveStatus};

#[derive(Debug, Clone)]
pub struct BarrierOptions {
    /// Stop once `ν/τ <= gap_tolerance · max(1, |objective|)`.
    pub gap_tolerance: f64,
    pub mu: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    pub radius: f64,
    /// Relative singular-value cutoff used when eliminating equalities.
    pub rank_tolerance: f64,
    /// Absolute residual accepted for the equality system.
    pub equality_tolerance: f64,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            gap_tolerance: 1e-9,
            mu: 10.0,
            max_outer: 60,
            max_newton: 80,
            radius: 1e12,
            rank_tolerance: 1e-11,
            equality_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BarrierSolver {
    pub options: BarrierOptions,
}

impl BarrierSolver {
    pub fn new(options: BarrierOptions) -> Self {
        Self { options }
    }
}

/// Affine blocks in the reduced variables plus the ball bound.
struct Barrier {
    dims: Vec<usize>,
    g0: Vec<DMatrix<f64>>,
    g: Vec<Vec<DMatrix<f64>>>,
    /// Number of leading variables inside the ball (phase I appends `t`).
    ball_vars: usize,
    radius: f64,
}

struct Eval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl Barrier {
    fn nvars(&self) -> usize {
        self.g.first().map_or(self.ball_vars, |g| g.len())
    }

    fn degree(&self) -> f64 {
        self.dims.iter().sum::<usize>() as f64 + 1.0
    }

    fn block(&self, j: usize, x: &DVector<f64>) -> DMatrix<f64> {
        let mut f = self.g0[j].clone();
        for (l, gl) in self.g[j].iter().enumerate() {
            if x[l] != 0.0 {
                f += gl * x[l];
            }
        }
        f
    }

    fn ball_slack(&self, x: &DVector<f64>) -> f64 {
        let z2: f64 = x.rows(0, self.ball_vars).norm_squared();
        self.radius * self.radius - z2
    }

    /// Barrier value at `x`, `None` outside the domain.
    fn value(&self, x: &DVector<f64>, tau: f64, c: &DVector<f64>) -> Option<f64> {
        let slack = self.ball_slack(x);
        if slack <= 0.0 {
            return None;
        }
        let mut v = tau * c.dot(x) - slack.ln();
        for j in 0..self.dims.len() {
            let ch = Cholesky::new(self.block(j, x))?;
            v -= 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        Some(v)
    }

    fn eval(&self, x: &DVector<f64>, tau: f64, c: &DVector<f64>) -> Option<Eval> {
        let n = self.nvars();
        let mut grad = c * tau;
        let mut hess = DMatrix::zeros(n, n);
        let mut value = tau * c.dot(x);
        for j in 0..self.dims.len() {
            let d = self.dims[j];
            let f = self.block(j, x);
            let ch = Cholesky::new(f)?;
            let l = ch.l();
            value -= 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let linv = l.solve_lower_triangular(&DMatrix::identity(d, d))?;
            let packed = d * (d + 1) / 2;
            let mut p = DMatrix::zeros(packed, n);
            for (k, gl) in self.g[j].iter().enumerate() {
                let s = &linv * gl * linv.transpose();
                let mut idx = 0;
                let mut trace = 0.0;
                for col in 0..d {
                    for row in 0..=col {
                        let w = if row == col { 1.0 } else { std::f64::consts::SQRT_2 };
                        p[(idx, k)] = w * s[(row, col)];
                        idx += 1;
                    }
                    trace += s[(col, col)];
                }
                grad[k] -= trace;
            }
            hess.gemm_tr(1.0, &p, &p, 1.0);
        }
        let slack = self.ball_slack(x);
        if slack <= 0.0 {
            return None;
        }
        value -= slack.ln();
        let m = self.ball_vars;
        let z = x.rows(0, m).into_owned();
        grad.rows_mut(0, m).axpy(2.0 / slack, &z, 1.0);
        let mut hb = hess.view_mut((0, 0), (m, m));
        hb += DMatrix::<f64>::identity(m, m) * (2.0 / slack) + &z * z.transpose() * (4.0 / (slack * slack));
        Some(Eval { value, grad, hess })
    }

    /// Damped Newton minimization of the barrier at fixed `tau`.
    fn center(
        &self,
        x: &mut DVector<f64>,
        tau: f64,
        c: &DVector<f64>,
        max_newton: usize,
        stop: &dyn Fn(&DVector<f64>) -> bool,
    ) -> Result<usize, SdpError> {
        let mut iters = 0;
        while iters < max_newton {
            iters += 1;
            let e = self
                .eval(x, tau, c)
                .ok_or_else(|| SdpError::BackendFailure("iterate left the barrier domain".into()))?;
            let dx = newton_direction(&e.hess, &e.grad)?;
            let decrement = -e.grad.dot(&dx);
            if decrement < 1e-11 || !decrement.is_finite() {
                break;
            }
            let slope = e.grad.dot(&dx);
            let mut step = 1.0;
            let mut accepted = false;
            while step > 1e-14 {
                let trial = &*x + &dx * step;
                if let Some(v) = self.value(&trial, tau, c) {
                    if v <= e.value + 0.25 * step * slope {
                        *x = trial;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted || stop(x) {
                break;
            }
            if decrement < 1e-9 {
                break;
            }
        }
        Ok(iters)
    }
}

fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>, SdpError> {
    let n = h.nrows();
    let scale = h.diagonal().amax().max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut hr = h.clone();
        for i in 0..n {
            hr[(i, i)] += ridge;
        }
        if let Some(ch) = Cholesky::new(hr) {
            return Ok(-ch.solve(g));
        }
        ridge = if ridge == 0.0 { 1e-14 * scale } else { ridge * 100.0 };
    }
    Err(SdpError::BackendFailure("Newton system is not positive definite".into()))
}

/// Null-space parameterization `y = y0 + N z` of `A y = b`.
fn eliminate(
    p: &SdpProblem,
    opts: &BarrierOptions,
) -> Result<(DVector<f64>, DMatrix<f64>), SdpError> {
    let n = p.num_vars;
    if p.num_equalities() == 0 {
        return Ok((DVector::zeros(n), DMatrix::identity(n, n)));
    }
    let (a, b) = p.equality_matrix();
    let rows = a.nrows().max(n);
    // Square padding so the SVD exposes the full right singular basis.
    let mut sq = DMatrix::zeros(rows, n);
    sq.rows_mut(0, a.nrows()).copy_from(&a);
    let svd = sq.svd(true, true);
    let vt = svd.v_t.as_ref().expect("requested V");
    let u = svd.u.as_ref().expect("requested U");
    let smax = svd.singular_values.max();
    let cutoff = opts.rank_tolerance * smax.max(1e-300);
    let mut bpad = DVector::zeros(rows);
    bpad.rows_mut(0, b.len()).copy_from(&b);
    let mut y0 = DVector::zeros(n);
    let mut null_cols = Vec::new();
    for (k, &sv) in svd.singular_values.iter().enumerate() {
        let v = vt.row(k).transpose();
        if sv > cutoff {
            y0 += &v * (u.column(k).dot(&bpad) / sv);
        } else {
            null_cols.push(v);
        }
    }
    let resid = (&a * &y0 - &b).amax();
    if resid > opts.equality_tolerance * (1.0 + b.amax()) {
        return Err(SdpError::Infeasible { block: None, margin: -resid });
    }
    let basis = if null_cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&null_cols)
    };
    Ok((y0, basis))
}

impl SdpBackend for BarrierSolver {
    fn solve(&self, p: &SdpProblem) -> Result<SdpSolution, SdpError> {
        p.check()?;
        let opts = &self.options;
        let (y0, basis) = eliminate(p, opts)?;
        let d = basis.ncols();
        let nb = p.blocks.len();

        let mut g0 = Vec::with_capacity(nb);
        let mut g = Vec::with_capacity(nb);
        let mut col_norm2 = vec![0.0; d];
        let y0s = y0.as_slice();
        for b in &p.blocks {
            g0.push(b.evaluate(y0s));
            let mut coeff: Vec<DMatrix<f64>> = vec![DMatrix::zeros(b.dim, b.dim); d];
            for e in &b.entries {
                let Some(i) = e.var else { continue };
                for (l, cl) in coeff.iter_mut().enumerate() {
                    let w = basis[(i, l)] * e.value;
                    if w != 0.0 {
                        cl[(e.row, e.col)] += w;
                        if e.row != e.col {
                            cl[(e.col, e.row)] += w;
                        }
                    }
                }
            }
            for (l, cl) in coeff.iter().enumerate() {
                col_norm2[l] += cl.norm_squared();
            }
            g.push(coeff);
        }
        let c_full = DVector::from_column_slice(&p.objective);
        let c_reduced = basis.transpose() * &c_full;
        let scale: Vec<f64> = col_norm2
            .iter()
            .zip(c_reduced.iter())
            .map(|(&n2, &c)| {
                if n2 > 0.0 {
                    1.0 / n2.sqrt()
                } else if c.abs() > 0.0 {
                    1.0 / c.abs()
                } else {
                    1.0
                }
            })
            .collect();
        for gj in &mut g {
            for (l, gl) in gj.iter_mut().enumerate() {
                *gl *= scale[l];
            }
        }
        let c = DVector::from_iterator(d, c_reduced.iter().zip(&scale).map(|(c, s)| c * s));
        let dims: Vec<usize> = p.blocks.iter().map(|b| b.dim).collect();
        let to_y = |z: &DVector<f64>| -> Vec<f64> {
            let zs = DVector::from_iterator(d, z.iter().zip(&scale).map(|(z, s)| z * s));
            (&y0 + &basis * zs).as_slice().to_vec()
        };

        let mut iterations = 0;

        // Phase I: minimize t subject to F_j(z) + tI ⪰ 0.
        let min_eig0 = g0
            .iter()
            .map(|m| m.clone().symmetric_eigenvalues().min())
            .fold(f64::INFINITY, f64::min);
        let mut z = DVector::zeros(d);
        if nb > 0 && min_eig0 <= 0.0 {
            let mut aug_g = g.clone();
            for (j, gj) in aug_g.iter_mut().enumerate() {
                gj.push(DMatrix::identity(dims[j], dims[j]));
            }
            let phase1 = Barrier {
                dims: dims.clone(),
                g0: g0.clone(),
                g: aug_g,
                ball_vars: d,
                radius: opts.radius,
            };
            let mut x = DVector::zeros(d + 1);
            x[d] = 1.0 - min_eig0;
            let mut c1 = DVector::zeros(d + 1);
            c1[d] = 1.0;
            let nu = phase1.degree();
            let mut tau = 1.0 / x[d];
            let feasible = |x: &DVector<f64>| x[d] < 0.0;
            let mut done = false;
            for _ in 0..opts.max_outer {
                iterations += phase1.center(&mut x, tau, &c1, opts.max_newton, &feasible)?;
                if feasible(&x) {
                    done = true;
                    break;
                }
                if x[d] - nu / tau > 0.0 {
                    break;
                }
                tau *= opts.mu;
            }
            if !done {
                let zz = x.rows(0, d).into_owned();
                let eigs = p.block_min_eigs(&to_y(&zz));
                let (block, margin) = eigs
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (j, &e)| if e < acc.1 { (j, e) } else { acc });
                return Err(SdpError::Infeasible { block: Some(block), margin });
            }
            z = x.rows(0, d).into_owned();
        }

        // Phase II: central path of the objective.
        let phase2 = Barrier { dims, g0, g, ball_vars: d, radius: opts.radius };
        let nu = phase2.degree();
        let never = |_: &DVector<f64>| false;
        let mut status = SolveStatus::Feasible;
        let mut gap = f64::INFINITY;
        if c.amax() == 0.0 {
            iterations += phase2.center(&mut z, 0.0, &c, opts.max_newton, &never)?;
            status = SolveStatus::Optimal;
            gap = 0.0;
        } else {
            let mut tau = nu / (1.0 + c.dot(&z).abs());
            for _ in 0..opts.max_outer {
                iterations += phase2.center(&mut z, tau, &c, opts.max_newton, &never)?;
                gap = nu / tau;
                let obj = p.objective_value(&to_y(&z));
                if gap <= opts.gap_tolerance * obj.abs().max(1.0) {
                    status = SolveStatus::Optimal;
                    break;
                }
                tau *= opts.mu;
            }
        }
        if c.amax() > 0.0 && phase2.ball_slack(&z) < 1e-4 * opts.radius * opts.radius {
            return Err(SdpError::BackendFailure(
                "iterates reached the bounding ball; problem looks unbounded".into(),
            ));
        }
        let y = to_y(&z);
        Ok(SdpSolution {
            objective: p.objective_value(&y),
            block_min_eigs: p.block_min_eigs(&y),
            y,
            status,
            gap,
            iterations,
        })
    }
}
