//! Fourier inversion along a rotated ray in the complex ξ-plane.
//!
//! The exponent is split as `Ψ(ξ) = N(ξ) + iμξ` with `N` homogeneous (up to a
//! logarithm when α = 1). With `x = w - μ` the integrand
//! `m(ξ) exp(N(ξ) - ixξ)` is continued analytically to the ray
//! `ξ = r e^{-i sθ}`, `s = sgn x`, where both factors decay exponentially.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;

use super::{b1_alpha, c_alpha, is_alpha_one, StableError, StableParams, EULER_GAMMA};
use crate::quad::{self, GaussLegendre, Tol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InversionMode {
    /// Fixed composite Gauss–Legendre panels.
    Fast,
    /// Globally adaptive Gauss–Kronrod.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionSpec {
    /// Truncation radius of the ray integral; `None` picks it from the decay
    /// of `Re N` (`exp(Re N) < e^{-50}` beyond it).
    pub xi_max: Option<f64>,
    /// Gauss–Legendre nodes per panel in fast mode.
    pub n_nodes: usize,
    pub mode: InversionMode,
}

impl Default for InversionSpec {
    fn default() -> Self {
        InversionSpec {
            xi_max: None,
            n_nodes: 12,
            mode: InversionMode::Fast,
        }
    }
}

impl InversionSpec {
    pub fn adaptive() -> Self {
        InversionSpec {
            mode: InversionMode::Adaptive,
            ..Self::default()
        }
    }
}

/// Fourier multipliers understood by the inversion routine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Multiplier {
    Density,
    Dw,
    Dww,
    Lsym,
    Lasym,
    Dlambda,
    Drho,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deriv {
    W,
    WW,
    Lambda,
    Rho,
}

impl From<Deriv> for Multiplier {
    fn from(d: Deriv) -> Self {
        match d {
            Deriv::W => Multiplier::Dw,
            Deriv::WW => Multiplier::Dww,
            Deriv::Lambda => Multiplier::Dlambda,
            Deriv::Rho => Multiplier::Drho,
        }
    }
}

const CUTOFF: f64 = 50.0;
const SIGMA_MAX: f64 = 36.0;
const SIGMA_PANEL: f64 = 3.0;

fn gl(n: usize) -> &'static GaussLegendre {
    static GL12: OnceLock<GaussLegendre> = OnceLock::new();
    if n == 12 {
        GL12.get_or_init(|| GaussLegendre::new(12))
    } else {
        // uncommon sizes are leaked once per call site; keep them rare
        Box::leak(Box::new(GaussLegendre::new(n)))
    }
}

/// Exponent pieces shared by all multipliers.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Shape {
    alpha: f64,
    lambda: f64,
    rho: f64,
    upsilon: f64,
    one: bool,
    a: f64,
    b: f64,
    c_alpha: f64,
    b1: f64,
    pub(crate) mu: f64,
}

impl Shape {
    pub(crate) fn new(p: &StableParams) -> Self {
        let one = is_alpha_one(p.alpha);
        let ca = c_alpha(p.alpha);
        if one {
            Shape {
                alpha: 1.0,
                lambda: p.lambda,
                rho: p.rho,
                upsilon: p.upsilon,
                one,
                a: p.lambda * PI,
                b: 0.0,
                c_alpha: PI,
                b1: 0.0,
                mu: p.upsilon + 2.0 * p.rho * p.lambda * (1.0 - EULER_GAMMA),
            }
        } else {
            let b1 = b1_alpha(p.alpha);
            Shape {
                alpha: p.alpha,
                lambda: p.lambda,
                rho: p.rho,
                upsilon: p.upsilon,
                one,
                a: p.lambda * ca,
                b: p.lambda * p.rho * b1,
                c_alpha: ca,
                b1,
                mu: p.upsilon - 2.0 * p.rho * p.lambda / (1.0 - p.alpha),
            }
        }
    }

    #[inline]
    fn nonlinear(&self, xi: Complex64, xi_a: Complex64, ln_xi: Complex64) -> Complex64 {
        if self.one {
            -self.a * xi - Complex64::new(0.0, 2.0 * self.rho * self.lambda) * xi * ln_xi
        } else {
            -Complex64::new(self.a, -self.b) * xi_a
        }
    }

    /// `ψ_asym(ξ)` for the unit asymmetric measure `sgn u |u|^{-α-1}`.
    #[inline]
    fn asym_symbol(&self, xi: Complex64, xi_a: Complex64, ln_xi: Complex64) -> Complex64 {
        let i = Complex64::new(0.0, 1.0);
        if self.one {
            2.0 * i * xi * (1.0 - EULER_GAMMA - ln_xi)
        } else {
            i * (self.b1 * xi_a - 2.0 * xi / (1.0 - self.alpha))
        }
    }

    #[inline]
    fn multiplier(
        &self,
        m: Multiplier,
        xi: Complex64,
        xi_a: Complex64,
        ln_xi: Complex64,
        n: Complex64,
    ) -> Complex64 {
        let i = Complex64::new(0.0, 1.0);
        match m {
            Multiplier::Density => Complex64::new(1.0, 0.0),
            Multiplier::Dw => -i * xi,
            Multiplier::Dww => -xi * xi,
            Multiplier::Lsym => -self.c_alpha * xi_a,
            Multiplier::Lasym => -self.asym_symbol(xi, xi_a, ln_xi),
            Multiplier::Dlambda => (n + i * (self.mu - self.upsilon) * xi) / self.lambda,
            Multiplier::Drho => self.lambda * self.asym_symbol(xi, xi_a, ln_xi),
        }
    }

    fn re_n_on_ray(&self, r: f64, psi: f64) -> f64 {
        let dir = Complex64::from_polar(1.0, psi);
        let xi = r * dir;
        let ln_xi = Complex64::new(r.ln(), psi);
        let xi_a = Complex64::from_polar(r.powf(self.alpha), self.alpha * psi);
        self.nonlinear(xi, xi_a, ln_xi).re
    }

    /// Smallest r (on a doubling-then-bisection search) with `Re N ≤ -CUTOFF`.
    fn decay_radius(&self, psi: f64) -> f64 {
        if !self.one {
            let phi = self.b.atan2(self.a);
            let amp = self.a.hypot(self.b) * (self.alpha * psi - phi).cos();
            return (CUTOFF / amp).powf(1.0 / self.alpha);
        }
        let mut lo = 0.0;
        let mut hi = 1.0 / self.a;
        let mut iter = 0;
        while self.re_n_on_ray(hi, psi) > -CUTOFF && iter < 200 {
            lo = hi;
            hi *= 2.0;
            iter += 1;
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.re_n_on_ray(mid, psi) > -CUTOFF {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Ray angle and truncation radius for offset `x = w - μ`.
    fn contour(&self, x: f64, xi_max: Option<f64>) -> Ray {
        let s = if x < 0.0 { -1.0 } else { 1.0 };
        let mut theta = if self.one {
            if self.rho * s < 0.0 {
                0.1
            } else {
                PI / 4.0
            }
        } else {
            let phi = self.b.atan2(self.a);
            (0.6 * (0.5 * PI - s * phi) / self.alpha).min(0.45 * PI)
        };
        if self.one && self.rho * s < 0.0 {
            // the log term grows on the adverse side; shrink θ until the
            // closing arc at the truncation radius is negligible
            loop {
                let psi = -s * theta;
                let r = self.decay_radius(psi);
                let ok = (0..=8).all(|k| {
                    let ph = theta * k as f64 / 8.0;
                    self.re_n_on_ray(r, -s * ph) - x.abs() * r * ph.sin() <= -30.0
                });
                if ok || theta < 1e-3 {
                    break;
                }
                theta *= 0.5;
            }
        }
        if self.one {
            return self.ray_for(x, s * theta, xi_max);
        }
        // a wide angle speeds the decay of e^{-ixξ} but can slow that of
        // e^{N}; keep the cheapest candidate
        [1.0, 0.6, 0.35, 0.15, 0.05]
            .iter()
            .map(|f| self.ray_for(x, s * theta * f, xi_max))
            .min_by_key(|ray| panel_plan(self, x, ray.radius).iter().map(|p| p.2).sum::<usize>())
            .unwrap()
    }

    fn ray_for(&self, x: f64, signed_theta: f64, xi_max: Option<f64>) -> Ray {
        let psi = -signed_theta;
        let r_n = xi_max.unwrap_or_else(|| self.decay_radius(psi));
        let r_x = if x == 0.0 {
            f64::INFINITY
        } else {
            CUTOFF / (x.abs() * psi.abs().sin())
        };
        Ray {
            psi,
            radius: r_n.min(r_x),
            subtract: r_x < r_n,
        }
    }

    /// Upper bound on |d phase| + |d log-modulus| between radii.
    fn variation(&self, x: f64, r_lo: f64, r_hi: f64) -> f64 {
        let m = |r: f64| {
            if self.one {
                (self.a + 2.0 * self.rho.abs() * self.lambda * (r.ln().abs() + 2.0)) * r
            } else {
                self.a.hypot(self.b) * r.powf(self.alpha)
            }
        };
        x.abs() * (r_hi - r_lo) + (m(r_hi) - m(r_lo)).abs()
    }
}

#[derive(Debug, Clone, Copy)]
struct Ray {
    psi: f64,
    radius: f64,
    subtract: bool,
}

fn cexpm1(z: Complex64) -> Complex64 {
    let e = z.re.exp();
    let (s, c) = z.im.sin_cos();
    let half = (0.5 * z.im).sin();
    Complex64::new(z.re.exp_m1() * c - 2.0 * half * half, e * s)
}

struct RayEval<'a> {
    shape: &'a Shape,
    x: f64,
    ray: Ray,
    dir: Complex64,
    dir_a: Complex64,
    ln_r: f64,
}

impl<'a> RayEval<'a> {
    fn new(shape: &'a Shape, x: f64, ray: Ray) -> Self {
        RayEval {
            shape,
            x,
            ray,
            dir: Complex64::from_polar(1.0, ray.psi),
            dir_a: Complex64::from_polar(1.0, shape.alpha * ray.psi),
            ln_r: ray.radius.ln(),
        }
    }

    /// Integrand in σ (r = R e^{-σ}) for every requested multiplier,
    /// accumulated with `weight` into `acc`.
    #[inline]
    fn accumulate(&self, sigma: f64, weight: f64, ms: &[Multiplier], acc: &mut [Complex64]) {
        let lr = self.ln_r - sigma;
        let r = lr.exp();
        let xi = r * self.dir;
        let xi_a = if self.shape.one {
            xi
        } else {
            (self.shape.alpha * lr).exp() * self.dir_a
        };
        let ln_xi = Complex64::new(lr, self.ray.psi);
        let n = self.shape.nonlinear(xi, xi_a, ln_xi);
        let lin = Complex64::new(0.0, -self.x) * xi;
        let full = (n + lin).exp();
        let sub = if self.ray.subtract {
            cexpm1(n) * lin.exp()
        } else {
            full
        };
        let jac = r * self.dir * weight;
        for (k, &m) in ms.iter().enumerate() {
            let mult = self.shape.multiplier(m, xi, xi_a, ln_xi, n);
            let e = if matches!(m, Multiplier::Density | Multiplier::Dw | Multiplier::Dww) {
                sub
            } else {
                full
            };
            acc[k] += mult * e * jac;
        }
    }

    /// CDF integrand `expm1(N - ixξ) / (iξ)`; the dropped `1/(iξ)` has zero
    /// real part along any ray.
    #[inline]
    fn cdf_term(&self, sigma: f64) -> f64 {
        let lr = self.ln_r - sigma;
        let r = lr.exp();
        let xi = r * self.dir;
        let xi_a = if self.shape.one {
            xi
        } else {
            (self.shape.alpha * lr).exp() * self.dir_a
        };
        let ln_xi = Complex64::new(lr, self.ray.psi);
        let n = self.shape.nonlinear(xi, xi_a, ln_xi);
        let lin = Complex64::new(0.0, -self.x) * xi;
        // dξ/(iξ) = dσ·(-1/i) after r = R e^{-σ}; keep the sign explicit
        let v = cexpm1(n + lin) / Complex64::new(0.0, 1.0);
        v.re
    }

    fn panels(&self) -> Vec<(f64, f64, usize)> {
        panel_plan(self.shape, self.x, self.ray.radius)
    }
}

/// σ-panels `(σ0, σ1, sub-panel count)` covering `r ∈ (R e^{-σmax}, R]`.
fn panel_plan(shape: &Shape, x: f64, radius: f64) -> Vec<(f64, f64, usize)> {
    let mut out = Vec::new();
    let mut s0 = 0.0;
    while s0 < SIGMA_MAX {
        let s1 = (s0 + SIGMA_PANEL).min(SIGMA_MAX);
        let r_hi = radius * (-s0).exp();
        let r_lo = radius * (-s1).exp();
        let var = shape.variation(x, r_lo, r_hi);
        let n = ((var / 3.0).ceil() as usize).clamp(1, 20_000);
        out.push((s0, s1, n));
        s0 = s1;
    }
    out
}

fn transform_many(
    p: &StableParams,
    w: f64,
    ms: &[Multiplier],
    spec: &InversionSpec,
) -> Result<Vec<f64>, StableError> {
    p.validate()?;
    let shape = Shape::new(p);
    let x = w - shape.mu;
    let ray = shape.contour(x, spec.xi_max);
    let ev = RayEval::new(&shape, x, ray);
    let panels = ev.panels();
    let mut acc = vec![Complex64::new(0.0, 0.0); ms.len()];
    match spec.mode {
        InversionMode::Fast => {
            let rule = gl(spec.n_nodes);
            for &(s0, s1, n) in &panels {
                let h = (s1 - s0) / n as f64;
                for j in 0..n {
                    let a = s0 + j as f64 * h;
                    let c = a + 0.5 * h;
                    for (t, wgt) in rule.nodes.iter().zip(&rule.weights) {
                        ev.accumulate(c + 0.5 * h * t, 0.5 * h * wgt, ms, &mut acc);
                    }
                }
            }
        }
        InversionMode::Adaptive => {
            let mut pts = vec![0.0];
            for &(s0, s1, n) in &panels {
                let h = (s1 - s0) / n as f64;
                for j in 1..=n {
                    pts.push(s0 + j as f64 * h);
                }
            }
            let tol = Tol {
                abs: 1e-16,
                rel: 1e-13,
                max_segments: 50_000,
            };
            for (k, &m) in ms.iter().enumerate() {
                let f = |s: f64| {
                    let mut one = [Complex64::new(0.0, 0.0)];
                    ev.accumulate(s, 1.0, &[m], &mut one);
                    one[0].re
                };
                let v = quad::integrate_pts(f, &pts, tol).map_err(|source| {
                    StableError::Quadrature {
                        region: "Fourier inversion",
                        source,
                    }
                })?;
                acc[k] = Complex64::new(v, 0.0);
            }
        }
    }
    Ok(acc.iter().map(|z| z.re / PI).collect())
}

/// `(1/2π) ∫ m(ξ) e^{Ψ(ξ) - iwξ} dξ` for each multiplier in `ms`.
pub fn stable_transform(
    p: &StableParams,
    w: f64,
    ms: &[Multiplier],
    spec: &InversionSpec,
) -> Result<Vec<f64>, StableError> {
    transform_many(p, w, ms, spec)
}

pub fn stable_density(p: &StableParams, w: f64, spec: &InversionSpec) -> Result<f64, StableError> {
    let v = transform_many(p, w, &[Multiplier::Density], spec)?[0];
    if v < -1e-9 {
        return Err(StableError::InversionAccuracy { w, value: v });
    }
    Ok(v.max(0.0))
}

pub fn stable_density_grid(
    p: &StableParams,
    ws: &[f64],
    spec: &InversionSpec,
) -> Result<Vec<f64>, StableError> {
    ws.iter().map(|&w| stable_density(p, w, spec)).collect()
}

pub fn stable_density_derivs(
    p: &StableParams,
    w: f64,
    which: Deriv,
    spec: &InversionSpec,
) -> Result<f64, StableError> {
    Ok(transform_many(p, w, &[which.into()], spec)?[0])
}

/// Distribution function by Gil-Pelaez inversion on the same ray.
pub fn stable_cdf(p: &StableParams, w: f64, spec: &InversionSpec) -> Result<f64, StableError> {
    p.validate()?;
    let shape = Shape::new(p);
    let x = w - shape.mu;
    let ray = shape.contour(x, spec.xi_max);
    let ev = RayEval::new(&shape, x, ray);
    let panels = ev.panels();
    let integral = match spec.mode {
        InversionMode::Fast => {
            let rule = gl(spec.n_nodes);
            let mut acc = 0.0;
            for &(s0, s1, n) in &panels {
                let h = (s1 - s0) / n as f64;
                for j in 0..n {
                    let c = s0 + (j as f64 + 0.5) * h;
                    for (t, wgt) in rule.nodes.iter().zip(&rule.weights) {
                        acc += 0.5 * h * wgt * ev.cdf_term(c + 0.5 * h * t);
                    }
                }
            }
            acc
        }
        InversionMode::Adaptive => {
            let mut pts = vec![0.0];
            for &(s0, s1, n) in &panels {
                let h = (s1 - s0) / n as f64;
                for j in 1..=n {
                    pts.push(s0 + j as f64 * h);
                }
            }
            quad::integrate_pts(|s| ev.cdf_term(s), &pts, Tol::new(1e-15, 1e-12)).map_err(
                |source| StableError::Quadrature {
                    region: "distribution inversion",
                    source,
                },
            )?
        }
    };
    // the `-1/(iξ)` part picks up the angle of the rotation on the arc at
    // infinity
    Ok((0.5 - (integral + ray.psi) / PI).clamp(0.0, 1.0))
}
