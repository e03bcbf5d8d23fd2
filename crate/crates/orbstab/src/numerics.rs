//! Quadrature, root finding, finite differences and ODE steppers shared by
//! the planning, synthesis and simulation modules.

use nalgebra::{DMatrix, DVector};

// Gauss–Kronrod 7/15 nodes on [-1, 1] (positive half, centre last).
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One Gauss–Kronrod 15-point panel: (Kronrod estimate, |Kronrod − Gauss|).
pub fn gauss_kronrod15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureFailure {
    pub estimate: f64,
    pub error: f64,
}

/// Globally adaptive Gauss–Kronrod quadrature.
///
/// Stops when the summed error estimate is below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64, QuadratureFailure> {
    if a == b {
        return Ok(0.0);
    }
    let mut panels: Vec<(f64, f64, f64, f64)> = Vec::new();
    let (v, e) = gauss_kronrod15(&mut f, a, b);
    panels.push((a, b, v, e));
    for _ in 0..2000 {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (pa, pb, _, _) = panels.swap_remove(idx);
        let m = 0.5 * (pa + pb);
        if m <= pa.min(pb) || m >= pa.max(pb) {
            break;
        }
        let (v1, e1) = gauss_kronrod15(&mut f, pa, m);
        let (v2, e2) = gauss_kronrod15(&mut f, m, pb);
        panels.push((pa, m, v1, e1));
        panels.push((m, pb, v2, e2));
    }
    let estimate: f64 = panels.iter().map(|p| p.2).sum();
    let error: f64 = panels.iter().map(|p| p.3).sum();
    if error <= abs_tol.max(rel_tol * estimate.abs()) {
        Ok(estimate)
    } else {
        Err(QuadratureFailure { estimate, error })
    }
}

/// Integrates piecewise over `breaks` (sorted, spanning [a, b]) so kinks land on panel edges.
pub fn integrate_pieces(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64, QuadratureFailure> {
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    pts.push(b);
    let mut total = 0.0;
    let mut failure = None;
    let pieces = (pts.len() - 1) as f64;
    for w in pts.windows(2) {
        match integrate(&mut f, w[0], w[1], rel_tol, abs_tol / pieces) {
            Ok(v) => total += v,
            Err(e) => {
                total += e.estimate;
                failure = Some(e.error);
            }
        }
    }
    match failure {
        Some(error) => Err(QuadratureFailure { estimate: total, error }),
        None => Ok(total),
    }
}

/// Brent's method on a sign-changing bracket.
pub fn brent_root(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Some(b)
}

/// Golden-section minimization on [a, b].
pub fn golden_minimize(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Five-point central difference of a scalar function.
pub fn derivative5(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Five-point central-difference Jacobian of a vector map.
pub fn jacobian5(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let at = |k: f64| {
            let mut y = x.clone();
            y[j] += k * h;
            f(&y)
        };
        cols.push((at(-2.0) - at(2.0) + (at(1.0) - at(-1.0)) * 8.0) / (12.0 * h));
    }
    DMatrix::from_columns(&cols)
}

/// Step used by the module-level finite-difference checks.
pub fn fd_step(x: &DVector<f64>) -> f64 {
    1e-6 * (1.0 + x.norm())
}

pub fn rk4_step(
    f: &mut impl FnMut(f64, &DVector<f64>) -> DVector<f64>,
    t: f64,
    y: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-12, h_init: 1e-3, h_min: 1e-14, h_max: f64::INFINITY, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepFailure {
    pub t: f64,
}

/// Dormand–Prince 5(4) from `t0` to `t1`; `h` carries the step size across calls.
pub fn dopri45(
    f: &mut impl FnMut(f64, &DVector<f64>) -> DVector<f64>,
    t0: f64,
    t1: f64,
    y0: &DVector<f64>,
    h: &mut f64,
    opts: &AdaptiveOptions,
) -> Result<DVector<f64>, StepFailure> {
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let dir = (t1 - t0).signum();
    let mut t = t0;
    let mut y = y0.clone();
    if t0 == t1 {
        return Ok(y);
    }
    let mut step = h.abs().clamp(opts.h_min, opts.h_max.min((t1 - t0).abs()));
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    for _ in 0..opts.max_steps {
        let remaining = (t1 - t).abs();
        if remaining <= 1e-15 * (1.0 + t1.abs()) {
            return Ok(y);
        }
        let hs = step.min(remaining) * dir;
        k.clear();
        k.push(f(t, &y));
        for i in 1..7 {
            let mut yi = y.clone();
            for (j, kj) in k.iter().enumerate() {
                if A[i][j] != 0.0 {
                    yi.axpy(hs * A[i][j], kj, 1.0);
                }
            }
            k.push(f(t + C[i] * hs, &yi));
        }
        let mut y_new = y.clone();
        for (j, kj) in k.iter().enumerate().take(6) {
            if A[6][j] != 0.0 {
                y_new.axpy(hs * A[6][j], kj, 1.0);
            }
        }
        let mut err = 0.0f64;
        for i in 0..y.len() {
            let e: f64 = (0..7).map(|j| E[j] * k[j][i]).sum::<f64>() * hs;
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err = err.max((e / sc).abs());
        }
        if !err.is_finite() {
            step *= 0.25;
            if step < opts.h_min {
                return Err(StepFailure { t });
            }
            continue;
        }
        if err <= 1.0 {
            t += hs;
            y = y_new;
            let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            step = (step * grow).min(opts.h_max);
            *h = step;
        } else {
            step *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            if step < opts.h_min {
                return Err(StepFailure { t });
            }
        }
    }
    Err(StepFailure { t })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_of_smooth_and_peaked_integrands() {
        let v = integrate(|x| x.exp(), 0.0, 1.0, 1e-12, 0.0).unwrap();
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-13);
        let v = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-10, 0.0).unwrap();
        let exact = 2.0 * (1.0 / 1e-2) * (1.0f64 / 1e-2).atan();
        assert!((v - exact).abs() < 1e-8 * exact);
    }

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent_root(|x| x * x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-13);
        assert!(brent_root(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_none());
    }

    #[test]
    fn dopri_matches_exponential() {
        let mut f = |_t: f64, y: &DVector<f64>| DVector::from_vec(vec![y[1], -y[0]]);
        let mut h = 1e-2;
        let y = dopri45(&mut f, 0.0, 10.0, &DVector::from_vec(vec![1.0, 0.0]), &mut h, &AdaptiveOptions::default())
            .unwrap();
        assert!((y[0] - 10f64.cos()).abs() < 1e-7);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let mut f = |_t: f64, y: &DVector<f64>| y.clone();
        let run = |n: usize, f: &mut dyn FnMut(f64, &DVector<f64>) -> DVector<f64>| {
            let mut y = DVector::from_element(1, 1.0);
            let h = 1.0 / n as f64;
            let mut g = |t: f64, y: &DVector<f64>| f(t, y);
            for i in 0..n {
                y = rk4_step(&mut g, i as f64 * h, &y, h);
            }
            (y[0] - 1f64.exp()).abs()
        };
        let e1 = run(20, &mut f);
        let e2 = run(40, &mut f);
        assert!((e1 / e2 - 16.0).abs() < 1.0);
    }

    #[test]
    fn five_point_jacobian() {
        let x = DVector::from_vec(vec![0.3, -1.2]);
        let j = jacobian5(|v| DVector::from_vec(vec![v[0].sin() * v[1], v[1] * v[1]]), &x, 1e-3);
        assert!((j[(0, 0)] - 0.3f64.cos() * -1.2).abs() < 1e-10);
        assert!((j[(1, 1)] - -2.4).abs() < 1e-10);
    }
}
