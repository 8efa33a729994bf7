//! Comparison kernels `G^{(α,β,γ)}_t`, `F^{(α,β,γ)}_t`, `G^{(α)}`, `N_β`
//! and randomized checks of their inequalities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelSpec, ResidualKernel};
use crate::quad::{self, QuadError, Tol};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid kernel parameters: {0}")]
    Invalid(String),
    #[error("model has no density residual kernel")]
    NotRegular,
    #[error("quadrature for {what}: {source}")]
    Quadrature {
        what: &'static str,
        #[source]
        source: QuadError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub t: f64,
}

impl KernelParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, t: f64) -> Result<Self, KernelError> {
        if !(alpha > 0.0 && beta > 0.0 && gamma > 0.0 && t > 0.0) || !t.is_finite() {
            return Err(KernelError::Invalid(format!(
                "need positive alpha, beta, gamma, t; got {alpha}, {beta}, {gamma}, {t}"
            )));
        }
        Ok(KernelParams { alpha, beta, gamma, t })
    }

    pub fn at(&self, t: f64) -> Self {
        KernelParams { t, ..*self }
    }

    fn scale(&self) -> f64 {
        self.t.powf(1.0 / self.alpha)
    }
}

/// `G_t^{(α,β,γ)}(x, y)`.
pub fn g_abg(kp: &KernelParams, x: f64, y: f64) -> f64 {
    let d = (y - x).abs();
    let s = kp.scale();
    if d <= s.min(1.0) {
        1.0 / s
    } else if d <= 1.0 {
        kp.t.powf(kp.beta / kp.alpha) * d.powf(-kp.beta - 1.0)
    } else {
        kp.t.powf(kp.beta / kp.alpha) * d.powf(-kp.gamma - 1.0)
    }
}

/// Rescaled form: `G_t(x, y) = F_t((y − x) / t^{1/α})`.
pub fn f_abg(kp: &KernelParams, z: f64) -> f64 {
    let a = z.abs();
    let s_inv = kp.t.powf(-1.0 / kp.alpha);
    if a <= s_inv.min(1.0) {
        s_inv
    } else if a <= s_inv {
        s_inv * a.powf(-kp.beta - 1.0)
    } else {
        kp.t.powf((kp.beta - kp.gamma - 1.0) / kp.alpha) * a.powf(-kp.gamma - 1.0)
    }
}

/// `G^{(α)}(x) = |x|^{-α-1} ∧ 1`.
pub fn g_alpha(alpha: f64, x: f64) -> f64 {
    let a = x.abs();
    if a <= 1.0 {
        1.0
    } else {
        a.powf(-alpha - 1.0)
    }
}

/// `N_β(ε)`: `ε^{1-β}/|1-β|`, or `1 + ln(1/ε)` at β = 1.
pub fn n_beta(beta: f64, eps: f64) -> f64 {
    if beta == 1.0 {
        1.0 - eps.ln()
    } else {
        eps.powf(1.0 - beta) / (1.0 - beta).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualExponents {
    pub beta_prime: f64,
    pub gamma_prime: f64,
    pub delta_prime: f64,
}

pub fn residual_exponents(
    alpha: f64,
    beta: f64,
    zeta: f64,
    gamma: f64,
) -> Result<ResidualExponents, KernelError> {
    let beta_prime = beta.max(alpha - zeta);
    let delta_prime = (alpha - beta_prime) / alpha;
    if !(delta_prime > 0.0) {
        return Err(KernelError::Invalid(format!(
            "delta' = {delta_prime} is not positive (beta'={beta_prime}, alpha={alpha})"
        )));
    }
    Ok(ResidualExponents {
        beta_prime,
        gamma_prime: alpha.min(gamma),
        delta_prime,
    })
}

/// `(β′, γ′, δ′)` for a model with a density residual kernel.
pub fn residual_bound_params(model: &ModelSpec) -> Result<ResidualExponents, KernelError> {
    match model.nu() {
        ResidualKernel::Density { beta, gamma, .. } => {
            residual_exponents(model.alpha, *beta, model.zeta, *gamma)
        }
        _ => Err(KernelError::NotRegular),
    }
}

const CONV_TOL: Tol = Tol {
    abs: 1e-300,
    rel: 1e-9,
    max_segments: 4000,
};

/// `∫ f(z) dz` for a kernel product that is smooth between `breaks` and decays
/// at both ends like `|z|^{-p-1}`.
fn integrate_line(f: impl Fn(f64) -> f64, breaks: &mut Vec<f64>, p: f64) -> Result<f64, QuadError> {
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let (lo, hi) = (breaks[0], *breaks.last().unwrap());
    let span = (hi - lo).max(1.0);
    let body = quad::integrate_pts(&f, breaks, CONV_TOL)?;
    let right = quad::integrate_tail(&f, hi, span, p, CONV_TOL)?;
    let left = quad::integrate_tail(|z| f(-z), -lo, span, p, CONV_TOL)?;
    Ok(body + right + left)
}

/// `(G^{(α)} ∗ G^{(α)})(x)`.
pub fn g_alpha_self_convolution(alpha: f64, x: f64) -> Result<f64, KernelError> {
    let mut br = vec![-1.0, 0.0, 1.0, x - 1.0, x, x + 1.0];
    integrate_line(|z| g_alpha(alpha, z) * g_alpha(alpha, x - z), &mut br, alpha).map_err(
        |source| KernelError::Quadrature {
            what: "G^(alpha) self-convolution",
            source,
        },
    )
}

/// `∫ G_{t−s}(x, z) G_s(z, y) dz`.
pub fn g_abg_convolution(kp: &KernelParams, s: f64, x: f64, y: f64) -> Result<f64, KernelError> {
    let (k1, k2) = (kp.at(kp.t - s), kp.at(s));
    let (r1, r2) = (k1.scale().min(1.0), k2.scale().min(1.0));
    let mut br = vec![x - 1.0, x - r1, x, x + r1, x + 1.0, y - 1.0, y - r2, y, y + r2, y + 1.0];
    integrate_line(|z| g_abg(&k1, x, z) * g_abg(&k2, z, y), &mut br, kp.gamma).map_err(|source| {
        KernelError::Quadrature {
            what: "G_abg sub-convolution",
            source,
        }
    })
}

/// `∫ G_t(x, y) dy`, in closed form.
pub fn g_abg_mass(kp: &KernelParams) -> f64 {
    let s = kp.scale();
    let r = s.min(1.0);
    let tb = kp.t.powf(kp.beta / kp.alpha);
    let mid = if r < 1.0 {
        (r.powf(-kp.beta) - 1.0) / kp.beta
    } else {
        0.0
    };
    2.0 * (r / s + tb * mid + tb / kp.gamma)
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyCheck {
    pub name: String,
    /// Largest ratio over the first `samples` draws.
    pub constant: f64,
    /// Largest ratio over twice as many draws from the same stream.
    pub constant_doubled: f64,
    pub samples: usize,
    pub seed: u64,
}

impl PropertyCheck {
    pub fn stable(&self) -> bool {
        self.constant.is_finite()
            && self.constant_doubled.is_finite()
            && self.constant_doubled <= 2.0 * self.constant
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub horizon: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            alpha: 1.2,
            beta: 0.7,
            gamma: 1.5,
            horizon: 1.0,
            samples: 1000,
            seed: 7,
        }
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.random_range(lo..hi))
}

fn signed(rng: &mut ChaCha8Rng, v: f64) -> f64 {
    if rng.random::<bool>() {
        v
    } else {
        -v
    }
}

/// Point on the real line mixing the flat core and the tails.
fn sample_point(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<f64>() < 0.2 {
        rng.random_range(-2.0..2.0)
    } else {
        let v = log_uniform(rng, -3.0, 4.0);
        signed(rng, v)
    }
}

fn fit(
    name: &str,
    cfg: &SuiteConfig,
    salt: u64,
    mut ratio: impl FnMut(&mut ChaCha8Rng) -> Result<f64, KernelError>,
) -> Result<PropertyCheck, KernelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(salt);
    let mut first: f64 = 0.0;
    let mut all: f64 = 0.0;
    for i in 0..2 * cfg.samples {
        let r = ratio(&mut rng)?;
        if i < cfg.samples {
            first = first.max(r);
        }
        all = all.max(r);
    }
    Ok(PropertyCheck {
        name: name.to_string(),
        constant: first,
        constant_doubled: all,
        samples: cfg.samples,
        seed: cfg.seed,
    })
}

/// Fits the constant of every kernel inequality by maximizing the ratio of
/// the two sides over random draws.
pub fn kernel_property_suite(cfg: &SuiteConfig) -> Result<Vec<PropertyCheck>, KernelError> {
    let (a, t_max) = (cfg.alpha, cfg.horizon);
    let kp = KernelParams::new(a, cfg.beta, cfg.gamma, t_max)?;
    let half = 0.5 * a;
    let mut out = Vec::new();

    out.push(fit("G_comp", cfg, 1, |r| {
        let x = sample_point(r);
        let b = a * r.random_range(0.05..1.0);
        Ok(g_alpha(a, x) / g_alpha(b, x))
    })?);
    out.push(fit("G_pol", cfg, 2, |r| {
        let x = sample_point(r);
        Ok((1.0 + x.abs()).powf(half) * g_alpha(a, x) / g_alpha(a - half, x))
    })?);
    out.push(fit("vague", cfg, 3, |r| {
        let x = sample_point(r);
        let nearest = (x.abs() - 1.0).max(0.0);
        Ok(g_alpha(a, nearest) / g_alpha(a, x))
    })?);
    out.push(fit("G_mult", cfg, 4, |r| {
        let x = sample_point(r);
        Ok(g_alpha(a, 0.5 * x) / g_alpha(a, x))
    })?);
    out.push(fit("vagueF", cfg, 5, |r| {
        let k = kp.at(t_max * log_uniform(r, -4.0, 0.0));
        let z = sample_point(r) * k.t.powf(-1.0 / a).max(1.0);
        let v = r.random_range(-1.0..1.0);
        Ok(f_abg(&k, z + v) / f_abg(&k, z))
    })?);
    out.push(fit("F_mult", cfg, 6, |r| {
        let k = kp.at(t_max * log_uniform(r, -4.0, 0.0));
        let z = sample_point(r) * k.t.powf(-1.0 / a).max(1.0);
        Ok(f_abg(&k, 0.5 * z) / f_abg(&k, z))
    })?);
    out.push(fit("sub_conv_simple", cfg, 7, |r| {
        let x = sample_point(r);
        Ok(g_alpha_self_convolution(a, x)? / g_alpha(a, x))
    })?);
    out.push(fit("H0", cfg, 8, |r| {
        let t = t_max * log_uniform(r, -4.0, 0.0);
        let s = t * r.random_range(1e-3..1.0 - 1e-3);
        let x = sample_point(r);
        let d = log_uniform(r, -5.0, 3.0);
        let d = signed(r, d);
        let k = kp.at(t);
        Ok(g_abg_convolution(&k, s, x, x + d)? / g_abg(&k, x, x + d))
    })?);
    out.push(fit("bint", cfg, 9, |r| {
        Ok(g_abg_mass(&kp.at(t_max * log_uniform(r, -6.0, 0.0))))
    })?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_branches() {
        let kp = KernelParams::new(1.3, 0.6, 1.0, 1.0).unwrap();
        assert_eq!(g_abg(&kp, 0.0, 0.7), 1.0);
        assert_eq!(g_abg(&kp, 0.0, -1.0), 1.0);
        // t^{β/α} |2|^{-γ-1}
        assert!((g_abg(&kp, 0.0, 2.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn g_continuous_at_breakpoints() {
        for &t in &[1e-3, 0.2, 0.9, 1.0] {
            let kp = KernelParams::new(1.4, 0.5, 2.0, t).unwrap();
            let r = kp.scale().min(1.0);
            for b in [r, 1.0] {
                let lo = g_abg(&kp, 0.0, b * (1.0 - 1e-12));
                let hi = g_abg(&kp, 0.0, b * (1.0 + 1e-12));
                assert!((lo - hi).abs() < 1e-9 * lo, "t={t} at {b}: {lo} {hi}");
            }
        }
    }

    #[test]
    fn f_matches_g() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let kp = KernelParams::new(
                rng.random_range(0.2..1.9),
                rng.random_range(0.1..2.0),
                rng.random_range(0.1..2.0),
                rng.random_range(1e-4..1.0),
            )
            .unwrap();
            let (x, y) = (sample_point(&mut rng), sample_point(&mut rng));
            let g = g_abg(&kp, x, y);
            let f = f_abg(&kp, (y - x) / kp.scale());
            assert!((g - f).abs() <= 1e-12 * g, "{kp:?} {x} {y}: {g} {f}");
        }
    }

    #[test]
    fn n_beta_values() {
        assert!((n_beta(0.5, 1.0) - 2.0).abs() < 1e-15);
        assert_eq!(n_beta(1.0, 1.0), 1.0);
        assert!((n_beta(1.5, 0.25) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn residual_exponents_example() {
        let r = residual_exponents(1.5, 0.5, 0.8, 2.0).unwrap();
        assert!((r.beta_prime - 0.7).abs() < 1e-15);
        assert_eq!(r.gamma_prime, 1.5);
        assert!((r.delta_prime - 8.0 / 15.0).abs() < 1e-15);
        assert_eq!(residual_exponents(1.5, 0.5, 1.5, 2.0).unwrap().beta_prime, 0.5);
        assert_eq!(residual_exponents(1.5, 0.5, 0.8, 1.1).unwrap().gamma_prime, 1.1);
        assert!(residual_exponents(1.0, 1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn mass_matches_quadrature() {
        for &t in &[1e-4, 0.3, 1.0] {
            let kp = KernelParams::new(1.2, 0.7, 1.5, t).unwrap();
            let mut br = vec![-1.0, -kp.scale(), 0.0, kp.scale(), 1.0];
            let q = integrate_line(|y| g_abg(&kp, 0.0, y), &mut br, 1.5).unwrap();
            assert!((q - g_abg_mass(&kp)).abs() < 1e-8 * q, "t={t}: {q}");
        }
    }

    #[test]
    fn self_convolution_of_box() {
        // x = 0: ∫ G(z)² dz = 2 + 2/(2α+1)
        let a = 0.8;
        let v = g_alpha_self_convolution(a, 0.0).unwrap();
        assert!((v - (2.0 + 2.0 / (2.0 * a + 1.0))).abs() < 1e-9);
    }

    #[test]
    fn suite_constants_are_stable() {
        let cfg = SuiteConfig {
            samples: 200,
            ..SuiteConfig::default()
        };
        for c in kernel_property_suite(&cfg).unwrap() {
            assert!(c.stable(), "{c:?}");
            if c.name == "G_comp" {
                assert!(c.constant_doubled <= 1.0);
            }
        }
    }
}
