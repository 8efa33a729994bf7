//! Stable laws in the Lévy-measure parametrization
//! `λ (1 + ρ sgn u) |u|^{-α-1} du` with truncation `1_{|u|≤1}` and shift `υ`.

mod fracop;
mod inversion;
mod sampler;
mod table;

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::quad::{self, QuadError, Tol};

pub use fracop::{frac_op, FracKind};
pub use inversion::{
    stable_cdf, stable_density, stable_density_derivs, stable_density_grid, stable_transform,
    Deriv, InversionMode, InversionSpec, Multiplier,
};
pub use sampler::{sample_stable, sample_stable_into, CmsConversion, StableSampler};
pub use table::{StableTable, TableFn};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Below this distance from 1 the index is treated as exactly 1.
pub const ALPHA_ONE_SNAP: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StableError {
    #[error("invalid stable parameters: {0}")]
    InvalidParams(String),
    #[error("inversion accuracy: value {value} at w={w} is below -1e-9; increase xi_max or nodes")]
    InversionAccuracy { w: f64, value: f64 },
    #[error("exponent consistency: closed form {closed} vs quadrature {quad} at xi={xi}")]
    Consistency {
        xi: f64,
        closed: Complex64,
        quad: Complex64,
    },
    #[error("quadrature failed in {region}: {source}")]
    Quadrature {
        region: &'static str,
        #[source]
        source: QuadError,
    },
    #[error("sampler conversion mismatch {err:e} at xi={xi}")]
    Conversion { xi: f64, err: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StableParams {
    pub alpha: f64,
    pub lambda: f64,
    pub rho: f64,
    pub upsilon: f64,
}

impl StableParams {
    pub fn new(alpha: f64, lambda: f64, rho: f64, upsilon: f64) -> Result<Self, StableError> {
        let p = StableParams {
            alpha,
            lambda,
            rho,
            upsilon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), StableError> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(StableError::InvalidParams(format!(
                "alpha={} not in (0,2)",
                self.alpha
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(StableError::InvalidParams(format!(
                "lambda={} must be positive",
                self.lambda
            )));
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(StableError::InvalidParams(format!(
                "rho={} not in [-1,1]",
                self.rho
            )));
        }
        if !self.upsilon.is_finite() {
            return Err(StableError::InvalidParams("upsilon not finite".into()));
        }
        Ok(())
    }

    pub fn with_upsilon(self, upsilon: f64) -> Self {
        StableParams { upsilon, ..self }
    }
}

pub fn is_alpha_one(alpha: f64) -> bool {
    (alpha - 1.0).abs() < ALPHA_ONE_SNAP
}

/// `sin(π ε / 2) / ε`, continuous at 0.
fn sin_half_pi_over(eps: f64) -> f64 {
    if eps.abs() < 1e-8 {
        0.5 * PI * (1.0 - (PI * eps).powi(2) / 24.0)
    } else {
        (0.5 * PI * eps).sin() / eps
    }
}

/// `c_α = 2 ∫_0^∞ (1 - cos v) v^{-α-1} dv`, so that the symmetric part of the
/// exponent is `-λ c_α |ξ|^α`.
pub fn c_alpha(alpha: f64) -> f64 {
    let eps = 1.0 - alpha;
    2.0 * libm::tgamma(2.0 - alpha) / alpha * sin_half_pi_over(eps)
}

/// `b₁ = c_α tan(πα/2)`; undefined at α = 1.
pub fn b1_alpha(alpha: f64) -> f64 {
    -2.0 * libm::tgamma(-alpha) * (0.5 * PI * alpha).sin()
}

fn j_raw(alpha: f64) -> f64 {
    let f = libm::tgamma(2.0 - alpha) * (0.5 * PI * alpha).sin() / alpha;
    (f - 1.0) / (1.0 - alpha)
}

/// `J_α = b₁/2 - 1/(1-α)`, continuous through α = 1 where it equals `1 - γ_E`.
/// Within 1e-3 of α = 1 it is evaluated by quadratic interpolation through
/// `1 - h`, `1`, `1 + h`.
pub fn j_alpha(alpha: f64) -> f64 {
    const H: f64 = 1e-3;
    let d = alpha - 1.0;
    if d.abs() >= H {
        return j_raw(alpha);
    }
    let (jm, j0, jp) = (j_raw(1.0 - H), 1.0 - EULER_GAMMA, j_raw(1.0 + H));
    let t = d / H;
    j0 + 0.5 * t * (jp - jm) + 0.5 * t * t * (jp - 2.0 * j0 + jm)
}

/// `expm1(p L) / p`, continuous at p = 0.
pub fn expm1_over(p: f64, l: f64) -> f64 {
    if (p * l).abs() < 1e-300 || p == 0.0 {
        l
    } else {
        (p * l).exp_m1() / p
    }
}

/// Characteristic exponent `Ψ(ξ)` for real ξ.
pub fn stable_exponent(p: &StableParams, xi: f64) -> Complex64 {
    if xi == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let a = p.alpha;
    let ax = xi.abs();
    let s = xi.signum();
    let l = ax.ln();
    let xa = if is_alpha_one(a) { ax } else { (a * l).exp() };
    let re = -p.lambda * c_alpha(a) * xa;
    // ∫ (sin uξ - uξ 1_{u≤1}) u^{-α-1} du for ξ > 0, written so that it stays
    // finite through α = 1.
    let asym = if is_alpha_one(a) {
        ax * (1.0 - EULER_GAMMA - l)
    } else {
        j_alpha(a) * xa - ax * expm1_over(a - 1.0, l)
    };
    let im = p.upsilon * xi + 2.0 * p.rho * p.lambda * s * asym;
    Complex64::new(re, im)
}

/// Exponent computed directly from the Lévy integral by quadrature.
pub fn stable_exponent_quad(p: &StableParams, xi: f64) -> Result<Complex64, StableError> {
    if xi == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let a = p.alpha;
    let ax = xi.abs();
    // v = u|ξ|; oscillatory range cut at a multiple of 2π with an
    // integration-by-parts tail.
    let periods = 400.0_f64.max((ax / (2.0 * PI)).ceil() + 50.0);
    let v_max = 2.0 * PI * periods;
    let mut pts = vec![0.0];
    let mut k = 1.0;
    while k * PI < v_max {
        pts.push(k * PI);
        k += 1.0;
    }
    pts.push(v_max);
    let tol = Tol {
        abs: 1e-14,
        rel: 1e-12,
        max_segments: 20_000,
    };
    let cos_part = quad::integrate_pts(
        |v| {
            if v == 0.0 {
                0.0
            } else {
                let half = (0.5 * v).sin();
                2.0 * half * half * v.powf(-a - 1.0)
            }
        },
        &pts,
        tol,
    )
    .map_err(|source| StableError::Quadrature {
        region: "symmetric Lévy integral",
        source,
    })?;
    let cos_tail = v_max.powf(-a) / a - (a + 1.0) * v_max.powf(-a - 2.0);
    let c = 2.0 * (cos_part + cos_tail);
    let mut pts_s = pts.clone();
    if ax < v_max {
        pts_s.push(ax);
        pts_s.sort_by(f64::total_cmp);
        pts_s.dedup();
    }
    let sin_part = quad::integrate_pts(
        |v| {
            if v == 0.0 {
                0.0
            } else if v <= ax {
                let d = if v < 1e-3 {
                    -v.powi(3) / 6.0 + v.powi(5) / 120.0
                } else {
                    v.sin() - v
                };
                d * v.powf(-a - 1.0)
            } else {
                v.sin() * v.powf(-a - 1.0)
            }
        },
        &pts_s,
        tol,
    )
    .map_err(|source| StableError::Quadrature {
        region: "asymmetric Lévy integral",
        source,
    })?;
    let sin_tail = v_max.powf(-a - 1.0) - (a + 1.0) * (a + 2.0) * v_max.powf(-a - 3.0);
    let asym = sin_part + sin_tail;
    let xa = ax.powf(a);
    let re = -p.lambda * c * xa;
    let im = p.upsilon * xi + 2.0 * p.rho * p.lambda * xi.signum() * asym * xa;
    Ok(Complex64::new(re, im))
}

/// Closed-form exponent cross-checked against quadrature of the Lévy integral.
pub fn stable_exponent_checked(p: &StableParams, xi: f64) -> Result<Complex64, StableError> {
    p.validate()?;
    let closed = stable_exponent(p, xi);
    let q = stable_exponent_quad(p, xi)?;
    let scale = 1.0 + closed.norm();
    if (closed - q).norm() > 1e-8 * scale {
        return Err(StableError::Consistency {
            xi,
            closed,
            quad: q,
        });
    }
    Ok(closed)
}

/// `G^{(α)}(x) = min(|x|^{-α-1}, 1)`.
pub fn kernel_g_alpha(x: f64, alpha: f64) -> f64 {
    let ax = x.abs();
    if ax <= 1.0 {
        1.0
    } else {
        ax.powf(-alpha - 1.0)
    }
}

/// Exact location/scale reduction `g^{(λ,ρ,υ)}(w) = k^{-1} g^{(1,ρ,0)}((w - s)/k)`.
#[derive(Debug, Clone, Copy)]
pub struct Reduction {
    /// `k = λ^{1/α}`
    pub k: f64,
    pub shift: f64,
    /// Coefficient of `g₁'` picked up by the asymmetric operator.
    pub asym_d: f64,
}

impl Reduction {
    pub fn new(p: &StableParams) -> Self {
        let a = p.alpha;
        let k = p.lambda.powf(1.0 / a);
        if is_alpha_one(a) {
            Reduction {
                k,
                shift: p.upsilon + 2.0 * p.rho * p.lambda * p.lambda.ln(),
                asym_d: -2.0 * k.ln(),
            }
        } else {
            let lk = k.ln();
            // (k - λ)/(1-α) = k (k^{α-1} - 1)/(α - 1)
            let shift = p.upsilon + 2.0 * p.rho * k * expm1_over(a - 1.0, lk);
            Reduction {
                k,
                shift,
                asym_d: -2.0 * expm1_over(a - 1.0, lk),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_alpha_known_values() {
        assert!((c_alpha(1.0) - PI).abs() < 1e-14);
        // c_α = 2Γ(1-α)cos(πα/2)/α
        for &a in &[0.3, 0.5, 0.8, 1.2, 1.5, 1.9] {
            let direct = 2.0 * libm::tgamma(1.0 - a) * (0.5 * PI * a).cos() / a;
            assert!((c_alpha(a) - direct).abs() < 1e-12 * direct.abs(), "{a}");
        }
    }

    #[test]
    fn j_alpha_is_continuous() {
        let j1 = j_alpha(1.0);
        assert!((j1 - (1.0 - EULER_GAMMA)).abs() < 1e-15);
        for &d in &[1e-4, 5e-4, 9.99e-4, 1.0001e-3, 2e-3] {
            assert!((j_alpha(1.0 + d) - j1).abs() < 2.0 * d);
            assert!((j_alpha(1.0 + d) - j_alpha(1.0 - d)).abs() < 4.0 * d);
        }
        assert!((j_alpha(1.0 + 9.999e-4) - j_alpha(1.0 + 1.0001e-3)).abs() < 1e-7);
    }

    #[test]
    fn exponent_matches_quadrature() {
        for &a in &[0.5, 0.8, 1.0, 1.2, 1.7] {
            for &rho in &[-1.0, 0.0, 0.5] {
                let p = StableParams::new(a, 0.7, rho, 0.3).unwrap();
                for &xi in &[-3.0, -0.2, 0.05, 1.0, 7.5] {
                    stable_exponent_checked(&p, xi).unwrap();
                }
            }
        }
    }

    #[test]
    fn conjugate_symmetry() {
        let p = StableParams::new(1.3, 1.1, 0.4, -0.2).unwrap();
        for &xi in &[0.1, 1.0, 4.0] {
            let a = stable_exponent(&p, xi);
            let b = stable_exponent(&p, -xi);
            assert!((a - b.conj()).norm() < 1e-14);
        }
    }

    #[test]
    fn kernel_g_examples() {
        assert_eq!(kernel_g_alpha(0.0, 1.2), 1.0);
        assert!((kernel_g_alpha(2.0, 1.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(StableParams::new(2.0, 1.0, 0.0, 0.0).is_err());
        assert!(StableParams::new(1.0, 0.0, 0.0, 0.0).is_err());
        assert!(StableParams::new(1.0, 1.0, 1.5, 0.0).is_err());
    }
}
