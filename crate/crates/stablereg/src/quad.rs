//! Quadrature rules: Gauss–Legendre and Gauss–Hermite node sets and a
//! globally adaptive Gauss–Kronrod (21-point) integrator.

use std::collections::BinaryHeap;
use std::cmp::Ordering;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("non-finite integrand value at {at}")]
    NonFinite { at: f64 },
    #[error("adaptive quadrature did not converge on [{a}, {b}]: estimate {value}, error {error}")]
    NoConvergence {
        a: f64,
        b: f64,
        value: f64,
        error: f64,
    },
}

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut pp = 0.0;
            for _ in 0..100 {
                let (mut p1, mut p2) = (1.0, 0.0);
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
                }
                pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() < 1e-15 {
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            let w = 2.0 / ((1.0 - z * z) * pp * pp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Integrates `f` over [a, b] with this fixed rule.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(c + h * x);
        }
        s * h
    }
}

/// Gauss–Hermite nodes and weights for the weight `exp(-x^2)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..200 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() < 1e-14 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        GaussHermite { nodes, weights }
    }
}

const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208109264994,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

fn gk21(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> Result<(f64, f64), QuadError> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    if !fc.is_finite() {
        return Err(QuadError::NonFinite { at: c });
    }
    let mut rk = fc * WGK[10];
    let mut rg = 0.0;
    for j in 0..10 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        if !f1.is_finite() {
            return Err(QuadError::NonFinite { at: c - dx });
        }
        if !f2.is_finite() {
            return Err(QuadError::NonFinite { at: c + dx });
        }
        rk += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            rg += WG[j / 2] * (f1 + f2);
        }
    }
    let val = rk * h;
    let err = ((rk - rg) * h).abs();
    Ok((val, err))
}

struct Seg {
    a: f64,
    b: f64,
    val: f64,
    err: f64,
}

impl PartialEq for Seg {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Seg {}
impl PartialOrd for Seg {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Seg {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct Tol {
    pub abs: f64,
    pub rel: f64,
    pub max_segments: usize,
}

impl Default for Tol {
    fn default() -> Self {
        Tol {
            abs: 1e-13,
            rel: 1e-10,
            max_segments: 2000,
        }
    }
}

impl Tol {
    pub fn new(abs: f64, rel: f64) -> Self {
        Tol {
            abs,
            rel,
            ..Tol::default()
        }
    }
}

/// Globally adaptive Gauss–Kronrod integration over the union of the
/// consecutive intervals defined by `points` (which must be ascending).
pub fn integrate_pts(
    mut f: impl FnMut(f64) -> f64,
    points: &[f64],
    tol: Tol,
) -> Result<f64, QuadError> {
    let mut heap = BinaryHeap::new();
    let (mut total, mut total_err) = (0.0, 0.0);
    for w in points.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (v, e) = gk21(&mut f, w[0], w[1])?;
        total += v;
        total_err += e;
        heap.push(Seg {
            a: w[0],
            b: w[1],
            val: v,
            err: e,
        });
    }
    while total_err > tol.abs.max(tol.rel * total.abs()) {
        if heap.len() >= tol.max_segments {
            let (a, b) = (points[0], points[points.len() - 1]);
            return Err(QuadError::NoConvergence {
                a,
                b,
                value: total,
                error: total_err,
            });
        }
        let s = heap.pop().unwrap();
        let m = 0.5 * (s.a + s.b);
        if m <= s.a || m >= s.b {
            // interval cannot be split further in floating point
            heap.push(Seg { err: 0.0, ..s });
            total_err = heap.iter().map(|s| s.err).sum();
            continue;
        }
        let (v1, e1) = gk21(&mut f, s.a, m)?;
        let (v2, e2) = gk21(&mut f, m, s.b)?;
        total += v1 + v2 - s.val;
        total_err += e1 + e2 - s.err;
        heap.push(Seg {
            a: s.a,
            b: m,
            val: v1,
            err: e1,
        });
        heap.push(Seg {
            a: m,
            b: s.b,
            val: v2,
            err: e2,
        });
        if heap.len() % 64 == 0 {
            // guard against drift in the running sums
            total = heap.iter().map(|s| s.val).sum();
            total_err = heap.iter().map(|s| s.err).sum();
        }
    }
    Ok(heap.iter().map(|s| s.val).sum())
}

/// Adaptive integration over [a, b].
pub fn integrate(f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: Tol) -> Result<f64, QuadError> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate(f, b, a, tol).map(|v| -v);
    }
    integrate_pts(f, &[a, b], tol)
}

/// Integral of `f` over [a, ∞) for integrands with a power-law tail of order
/// `|x|^{-p-1}`, using the substitution `x = a + s (v^{-1/p} - 1)`.
pub fn integrate_tail(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    s: f64,
    p: f64,
    tol: Tol,
) -> Result<f64, QuadError> {
    integrate(
        |v| {
            if v <= 0.0 {
                return 0.0;
            }
            let x = a + s * (v.powf(-1.0 / p) - 1.0);
            let jac = s / p * v.powf(-1.0 / p - 1.0);
            let val = f(x) * jac;
            if val.is_finite() {
                val
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_polynomial_exactness() {
        let gl = GaussLegendre::new(8);
        let v = gl.integrate(0.0, 2.0, |x| x.powi(15));
        assert!((v - 2f64.powi(16) / 16.0).abs() < 1e-9);
        let s: f64 = gl.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_moments() {
        let gh = GaussHermite::new(64);
        let sp = std::f64::consts::PI.sqrt();
        let m0: f64 = gh.weights.iter().sum();
        let m2: f64 = gh.nodes.iter().zip(&gh.weights).map(|(x, w)| w * x * x).sum();
        let m4: f64 = gh.nodes.iter().zip(&gh.weights).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m0 / sp - 1.0).abs() < 1e-13);
        assert!((m2 / sp - 0.5).abs() < 1e-13);
        assert!((m4 / sp - 0.75).abs() < 1e-12);
        let cosm: f64 = gh.nodes.iter().zip(&gh.weights).map(|(x, w)| w * x.cos()).sum();
        assert!((cosm / sp - (-0.25f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn adaptive_singular_endpoint() {
        let v = integrate(|x| x.powf(-0.5), 0.0, 1.0, Tol::default()).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
        let v = integrate(|x| x.ln(), 0.0, 1.0, Tol::default()).unwrap();
        assert!((v + 1.0).abs() < 1e-9);
    }

    #[test]
    fn adaptive_reversed_and_breaks() {
        let v = integrate(|x| x, 1.0, 0.0, Tol::default()).unwrap();
        assert!((v + 0.5).abs() < 1e-14);
        let v = integrate_pts(|x| x.abs(), &[-1.0, 0.0, 2.0], Tol::default()).unwrap();
        assert!((v - 2.5).abs() < 1e-13);
    }

    #[test]
    fn tail_integral() {
        let v = integrate_tail(|x| x.powf(-2.5), 1.0, 1.0, 1.5, Tol::default()).unwrap();
        assert!((v - 1.0 / 1.5).abs() < 1e-10);
        let v = integrate_tail(|x| 1.0 / (1.0 + x * x), 0.0, 1.0, 1.0, Tol::default()).unwrap();
        assert!((v - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
    }

    #[test]
    fn nonfinite_is_reported() {
        let r = integrate(|x| if x > 0.5 { f64::NAN } else { 1.0 }, 0.0, 1.0, Tol::default());
        assert!(matches!(r, Err(QuadError::NonFinite { .. })));
    }
}
