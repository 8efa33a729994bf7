//! Conditionally stable approximation of the transition law: regressor,
//! flow-averaged innovation parameters, and the resulting densities.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flows::{DriftField, FlowConfig, FlowError, Trajectory};
use crate::model::{ModelError, ModelSpec};
use crate::quad::GaussLegendre;
use crate::stable::{
    expm1_over, stable_cdf, stable_density, InversionSpec, StableError, StableParams, StableSampler,
};

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stable(#[from] StableError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition failed for `{variant}`: {reason}")]
    Precondition { variant: String, reason: String },
    #[error("unknown regressor `{0}`; known: chi, overline, frozen, frozen-overline, picard:<k>")]
    UnknownVariant(String),
}

/// `W_α(t; s) = t^{-1/α} ∫_{s^{1/α}}^{t^{1/α}} r^{-α} dr`.
pub fn weight_w(alpha: f64, t: f64, s: f64) -> Result<f64, RegressionError> {
    if !(t > 0.0) || !(0.0..=t).contains(&s) {
        return Err(RegressionError::Domain(format!("need 0 <= s <= t, t > 0; got s={s}, t={t}")));
    }
    let l = (s / t).ln();
    if alpha == 1.0 {
        return Ok(-l / t);
    }
    Ok(-expm1_over((1.0 - alpha) / alpha, l) / (alpha * t))
}

/// Nodes and weights on `[0, t]` from Gauss–Legendre cells in `u`, `s = t u^γ`.
pub fn graded_rule(t: f64, gamma: f64, cells: usize, order: usize) -> Vec<(f64, f64)> {
    let gl = GaussLegendre::new(order);
    let h = 1.0 / cells as f64;
    let mut out = Vec::with_capacity(cells * order);
    for j in 0..cells {
        let c = (j as f64 + 0.5) * h;
        for (g, w) in gl.nodes.iter().zip(&gl.weights) {
            let u = c + 0.5 * h * g;
            out.push((t * u.powf(gamma), 0.5 * h * w * t * gamma * u.powf(gamma - 1.0)));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowVariant {
    Chi,
    KappaTilde,
    ChiTOverline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AveragedParams {
    pub lambda_t: f64,
    pub rho_t: f64,
    pub upsilon_t: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub flow: FlowConfig,
    /// Cells of the graded averaging rule.
    pub cells: usize,
    pub inversion_fast: bool,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            flow: FlowConfig::default(),
            cells: 48,
            inversion_fast: true,
        }
    }
}

impl RegressionConfig {
    pub fn inversion(&self) -> InversionSpec {
        if self.inversion_fast {
            InversionSpec::default()
        } else {
            InversionSpec::adaptive()
        }
    }
}

/// Averages of `λ`, `λρ` (uniform in time) and `υ` (weighted by `W_α`)
/// along a trajectory on `[0, t]`.
pub fn averages_along(
    model: &ModelSpec,
    traj: &Trajectory,
    t: f64,
    cfg: &RegressionConfig,
) -> Result<AveragedParams, RegressionError> {
    let gamma = 4.0 * model.alpha.max(1.0);
    let (mut lam, mut lr, mut ups) = (0.0, 0.0, 0.0);
    for (s, w) in graded_rule(t, gamma, cfg.cells, 8) {
        let z = traj.eval(s);
        let (l, r) = (model.lambda_at(z), model.rho_at(z));
        lam += w * l;
        lr += w * l * r;
        ups += w * 2.0 * l * r * weight_w(model.alpha, t, s)?;
    }
    let lambda_t = lam / t;
    Ok(AveragedParams {
        lambda_t,
        rho_t: (lr / (t * lambda_t)).clamp(-1.0, 1.0),
        upsilon_t: ups,
    })
}

pub fn averaged_params(
    model: &ModelSpec,
    x: f64,
    t: f64,
    variant: FlowVariant,
    cfg: &RegressionConfig,
) -> Result<AveragedParams, RegressionError> {
    let field = DriftField::new(model, cfg.flow.mollifier);
    let traj = match variant {
        FlowVariant::Chi => field.chi(x, t, &cfg.flow)?,
        FlowVariant::KappaTilde => field.kappa(x, t, &cfg.flow)?,
        FlowVariant::ChiTOverline => field.chi_bar(x, t, &cfg.flow)?,
    };
    averages_along(model, &traj, t, cfg)
}

/// Law of `𝔣_t(x) + t^{1/α} U` with `U` stable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionLaw {
    pub regressor: f64,
    pub scale: f64,
    pub innovation: StableParams,
}

impl RegressionLaw {
    pub fn density(&self, y: f64, spec: &InversionSpec) -> Result<f64, RegressionError> {
        let w = (y - self.regressor) / self.scale;
        Ok(stable_density(&self.innovation, w, spec)? / self.scale)
    }

    pub fn cdf(&self, y: f64, spec: &InversionSpec) -> Result<f64, RegressionError> {
        Ok(stable_cdf(&self.innovation, (y - self.regressor) / self.scale, spec)?)
    }

    pub fn sampler(&self) -> Result<LawSampler, RegressionError> {
        Ok(LawSampler {
            law: *self,
            inner: StableSampler::new(&self.innovation)?,
        })
    }

    /// `y,value` rows.
    pub fn density_csv(&self, ys: &[f64], spec: &InversionSpec) -> Result<String, RegressionError> {
        let mut out = String::from("y,value\n");
        for &y in ys {
            writeln!(out, "{y:e},{:e}", self.density(y, spec)?).unwrap();
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct LawSampler {
    law: RegressionLaw,
    inner: StableSampler,
}

impl LawSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.law.regressor + self.law.scale * self.inner.sample(rng)
    }
}

fn innovation(model: &ModelSpec, a: AveragedParams, upsilon: f64) -> Result<StableParams, RegressionError> {
    Ok(StableParams::new(model.alpha, a.lambda_t, a.rho_t, upsilon)?)
}

/// A choice of regressor together with the matching innovation parameters.
pub trait Regressor: Send + Sync {
    fn name(&self) -> String;

    fn check(&self, _model: &ModelSpec) -> Result<(), RegressionError> {
        Ok(())
    }

    fn law(
        &self,
        model: &ModelSpec,
        x: f64,
        t: f64,
        cfg: &RegressionConfig,
    ) -> Result<RegressionLaw, RegressionError>;
}

struct Chi;
struct Overline;
struct Frozen;
struct FrozenOverline;
struct Picard(usize);

fn require_bounded(name: &str, model: &ModelSpec) -> Result<(), RegressionError> {
    if model.drift_bounded {
        Ok(())
    } else {
        Err(RegressionError::Precondition {
            variant: name.to_string(),
            reason: "frozen parameters need a bounded compensated drift".into(),
        })
    }
}

fn frozen_params(model: &ModelSpec, x: f64) -> AveragedParams {
    AveragedParams {
        lambda_t: model.lambda_at(x),
        rho_t: model.rho_at(x),
        upsilon_t: model.upsilon(x),
    }
}

impl Regressor for Chi {
    fn name(&self) -> String {
        "chi".into()
    }

    fn law(&self, model: &ModelSpec, x: f64, t: f64, cfg: &RegressionConfig) -> Result<RegressionLaw, RegressionError> {
        let traj = DriftField::new(model, cfg.flow.mollifier).chi(x, t, &cfg.flow)?;
        let a = averages_along(model, &traj, t, cfg)?;
        Ok(RegressionLaw {
            regressor: traj.endpoint(),
            scale: t.powf(1.0 / model.alpha),
            innovation: innovation(model, a, a.upsilon_t)?,
        })
    }
}

impl Regressor for Overline {
    fn name(&self) -> String {
        "overline".into()
    }

    fn law(&self, model: &ModelSpec, x: f64, t: f64, cfg: &RegressionConfig) -> Result<RegressionLaw, RegressionError> {
        let traj = DriftField::new(model, cfg.flow.mollifier).chi_bar(x, t, &cfg.flow)?;
        let a = averages_along(model, &traj, t, cfg)?;
        Ok(RegressionLaw {
            regressor: traj.endpoint(),
            scale: t.powf(1.0 / model.alpha),
            innovation: innovation(model, a, 0.0)?,
        })
    }
}

impl Regressor for Frozen {
    fn name(&self) -> String {
        "frozen".into()
    }

    fn check(&self, model: &ModelSpec) -> Result<(), RegressionError> {
        require_bounded("frozen", model)
    }

    fn law(&self, model: &ModelSpec, x: f64, t: f64, cfg: &RegressionConfig) -> Result<RegressionLaw, RegressionError> {
        self.check(model)?;
        let traj = DriftField::new(model, cfg.flow.mollifier).chi(x, t, &cfg.flow)?;
        let a = frozen_params(model, x);
        Ok(RegressionLaw {
            regressor: traj.endpoint(),
            scale: t.powf(1.0 / model.alpha),
            innovation: innovation(model, a, a.upsilon_t)?,
        })
    }
}

impl Regressor for FrozenOverline {
    fn name(&self) -> String {
        "frozen-overline".into()
    }

    fn check(&self, model: &ModelSpec) -> Result<(), RegressionError> {
        require_bounded("frozen-overline", model)
    }

    fn law(&self, model: &ModelSpec, x: f64, t: f64, cfg: &RegressionConfig) -> Result<RegressionLaw, RegressionError> {
        self.check(model)?;
        let traj = DriftField::new(model, cfg.flow.mollifier).chi_bar(x, t, &cfg.flow)?;
        Ok(RegressionLaw {
            regressor: traj.endpoint(),
            scale: t.powf(1.0 / model.alpha),
            innovation: innovation(model, frozen_params(model, x), 0.0)?,
        })
    }
}

impl Regressor for Picard {
    fn name(&self) -> String {
        format!("picard:{}", self.0)
    }

    fn check(&self, model: &ModelSpec) -> Result<(), RegressionError> {
        let sum: f64 = (0..=self.0).map(|j| model.eta.powi(j as i32)).sum();
        if sum > 1.0 / model.alpha {
            Ok(())
        } else {
            Err(RegressionError::Precondition {
                variant: self.name(),
                reason: format!("1 + eta + ... + eta^k = {sum} does not exceed 1/alpha = {}", 1.0 / model.alpha),
            })
        }
    }

    fn law(&self, model: &ModelSpec, x: f64, t: f64, cfg: &RegressionConfig) -> Result<RegressionLaw, RegressionError> {
        self.check(model)?;
        let traj = DriftField::new(model, cfg.flow.mollifier).picard(x, t, self.0, &cfg.flow)?;
        let a = averages_along(model, &traj, t, cfg)?;
        Ok(RegressionLaw {
            regressor: traj.endpoint(),
            scale: t.powf(1.0 / model.alpha),
            innovation: innovation(model, a, a.upsilon_t)?,
        })
    }
}

type Factory = fn(Option<&str>) -> Result<Box<dyn Regressor>, String>;

/// Name-indexed set of regressor constructors. Names take an optional
/// `:argument` suffix, as in `picard:2`.
pub struct RegressorRegistry {
    entries: Vec<(&'static str, &'static str, Factory)>,
}

fn no_arg(arg: Option<&str>, r: Box<dyn Regressor>) -> Result<Box<dyn Regressor>, String> {
    match arg {
        None => Ok(r),
        Some(a) => Err(format!("takes no argument, got `{a}`")),
    }
}

impl RegressorRegistry {
    pub fn empty() -> Self {
        RegressorRegistry { entries: Vec::new() }
    }

    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register("chi", "flow endpoint with chi-averaged parameters", |a| no_arg(a, Box::new(Chi)));
        r.register("overline", "frozen-field flow, averaged lambda and rho, zero shift", |a| {
            no_arg(a, Box::new(Overline))
        });
        r.register("frozen", "flow endpoint with parameters frozen at x", |a| no_arg(a, Box::new(Frozen)));
        r.register("frozen-overline", "frozen-field flow with parameters frozen at x", |a| {
            no_arg(a, Box::new(FrozenOverline))
        });
        r.register("picard", "k-th Picard iterate of the flow, picard:<k>", |a| {
            let k = a
                .ok_or("needs an iteration count, e.g. picard:2")?
                .parse::<usize>()
                .map_err(|e| format!("bad iteration count: {e}"))?;
            Ok(Box::new(Picard(k)))
        });
        r
    }

    pub fn register(&mut self, name: &'static str, help: &'static str, f: Factory) {
        self.entries.retain(|(n, _, _)| *n != name);
        self.entries.push((name, help, f));
    }

    pub fn names(&self) -> Vec<(&'static str, &'static str)> {
        self.entries.iter().map(|(n, h, _)| (*n, *h)).collect()
    }

    pub fn build(&self, spec: &str) -> Result<Box<dyn Regressor>, RegressionError> {
        let (name, arg) = match spec.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (spec, None),
        };
        let (_, _, f) = self
            .entries
            .iter()
            .find(|(n, _, _)| *n == name)
            .ok_or_else(|| RegressionError::UnknownVariant(spec.to_string()))?;
        f(arg).map_err(|reason| RegressionError::Precondition {
            variant: spec.to_string(),
            reason,
        })
    }
}

pub fn regression_law(
    model: &ModelSpec,
    x: f64,
    t: f64,
    variant: &str,
    cfg: &RegressionConfig,
) -> Result<RegressionLaw, RegressionError> {
    RegressorRegistry::standard().build(variant)?.law(model, x, t, cfg)
}

/// `t^{-1/α} g^{t,x}((y − χ_t(x)) / t^{1/α})`.
pub fn principal_density(
    model: &ModelSpec,
    x: f64,
    y: f64,
    t: f64,
    cfg: &RegressionConfig,
) -> Result<f64, RegressionError> {
    Chi.law(model, x, t, cfg)?.density(y, &cfg.inversion())
}

/// Zero-order kernel data for a fixed `y`: `κ_t(y)` and the κ-averaged law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZeroOrder {
    pub kappa_t: f64,
    pub scale: f64,
    pub params: StableParams,
}

impl ZeroOrder {
    pub fn new(model: &ModelSpec, y: f64, t: f64, cfg: &RegressionConfig) -> Result<Self, RegressionError> {
        let traj = DriftField::new(model, cfg.flow.mollifier).kappa(y, t, &cfg.flow)?;
        Self::from_kappa(model, &traj, t, cfg)
    }

    pub fn from_kappa(
        model: &ModelSpec,
        kappa: &Trajectory,
        t: f64,
        cfg: &RegressionConfig,
    ) -> Result<Self, RegressionError> {
        let a = averages_along(model, kappa, t, cfg)?;
        Ok(ZeroOrder {
            kappa_t: kappa.endpoint(),
            scale: t.powf(1.0 / model.alpha),
            params: innovation(model, a, a.upsilon_t)?,
        })
    }

    /// `w = (κ_t(y) − x) / t^{1/α}`.
    pub fn arg(&self, x: f64) -> f64 {
        (self.kappa_t - x) / self.scale
    }

    pub fn density(&self, x: f64, spec: &InversionSpec) -> Result<f64, RegressionError> {
        Ok(stable_density(&self.params, self.arg(x), spec)? / self.scale)
    }
}

/// `p⁰_t(x, y) = t^{-1/α} g̃^{t,y}((κ_t(y) − x) / t^{1/α})`.
pub fn zero_order_density(
    model: &ModelSpec,
    x: f64,
    y: f64,
    t: f64,
    cfg: &RegressionConfig,
) -> Result<f64, RegressionError> {
    ZeroOrder::new(model, y, t, cfg)?.density(x, &cfg.inversion())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{self, Tol};
    use crate::stable::stable_exponent;
    use num_complex::Complex64;

    fn smooth() -> ModelSpec {
        let mut m = ModelSpec::from_sources(1.2, "1+0.3*sin(x)", "0.5*cos(x)", "sin(x)").unwrap();
        m.zeta = 1.0;
        m
    }

    #[test]
    fn w_values() {
        assert_eq!(weight_w(0.7, 2.0, 2.0).unwrap(), 0.0);
        assert!((weight_w(0.5, 1.0, 0.0).unwrap() - 2.0).abs() < 1e-15);
        let o = quad::integrate(|r| r.powf(-0.5), 0.0, 1.0, Tol::default()).unwrap();
        assert!((weight_w(0.5, 1.0, 0.0).unwrap() - o).abs() < 1e-9);
        assert!(weight_w(1.2, 1.0, 1.5).is_err());
        // the exact log branch and its neighbours agree
        let a = weight_w(1.0, 0.3, 0.01).unwrap();
        let b = weight_w(1.0 + 1e-9, 0.3, 0.01).unwrap();
        assert!((a - b).abs() < 1e-7 * a);
    }

    #[test]
    fn w_is_a_probability_density() {
        for &a in &[0.3, 0.8, 1.0, 1.2, 1.9] {
            for &t in &[1.0, 0.05] {
                let total: f64 = graded_rule(t, 4.0 * f64::max(a, 1.0), 48, 8)
                    .into_iter()
                    .map(|(s, w)| w * weight_w(a, t, s).unwrap())
                    .sum();
                assert!((total - 1.0).abs() < 1e-10, "a={a} t={t}: {total}");
            }
        }
    }

    #[test]
    fn constant_coefficients_average_to_themselves() {
        let m = ModelSpec::constant(1.5, 0.8, -0.4, 0.3).unwrap();
        let cfg = RegressionConfig::default();
        for v in [FlowVariant::Chi, FlowVariant::KappaTilde, FlowVariant::ChiTOverline] {
            let a = averaged_params(&m, 0.2, 0.3, v, &cfg).unwrap();
            assert!((a.lambda_t - 0.8).abs() < 1e-12);
            assert!((a.rho_t + 0.4).abs() < 1e-12);
            assert!((a.upsilon_t + 0.64).abs() < 1e-10);
        }
        let laws: Vec<_> = ["chi", "frozen", "picard:3"]
            .iter()
            .map(|v| regression_law(&m, 0.2, 0.3, v, &cfg).unwrap())
            .collect();
        for l in &laws[1..] {
            assert!((l.regressor - laws[0].regressor).abs() < 1e-8);
            assert!((l.innovation.upsilon - laws[0].innovation.upsilon).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_lambda_along_linear_flow() {
        // b = c, rho = 0 gives χ_s = x + cs
        let m = ModelSpec::from_json_str(
            r#"{"alpha":1.3,"lambda":"1+x","rho":"0","b":"0.5","eta":1,"zeta":1,
                "beta_activity":0.1,"lambda_min":0.1,"lambda_max":10}"#,
        )
        .unwrap();
        let (x, t) = (0.4, 0.6);
        let a = averaged_params(&m, x, t, FlowVariant::Chi, &RegressionConfig::default()).unwrap();
        assert!((a.lambda_t - (1.0 + x + 0.5 * t / 2.0)).abs() < 1e-8, "{a:?}");
    }

    #[test]
    fn registry_builds_variants() {
        let r = RegressorRegistry::standard();
        assert_eq!(r.build("picard:2").unwrap().name(), "picard:2");
        assert!(matches!(r.build("nope"), Err(RegressionError::UnknownVariant(_))));
        assert!(r.build("picard").is_err());
        assert!(r.build("chi:1").is_err());
        let mut m = smooth();
        m.eta = 0.0;
        m.alpha = 0.4;
        assert!(matches!(
            r.build("picard:1").unwrap().check(&m),
            Err(RegressionError::Precondition { .. })
        ));
        m.drift_bounded = false;
        assert!(r.build("frozen").unwrap().check(&m).is_err());
    }

    #[test]
    fn principal_density_integrates_to_one() {
        let m = smooth();
        let cfg = RegressionConfig::default();
        let law = Chi.law(&m, 0.3, 0.2, &cfg).unwrap();
        let spec = cfg.inversion();
        let mass = quad::integrate_pts(
            |y| law.density(y, &spec).unwrap(),
            &[law.regressor - 20.0, law.regressor, law.regressor + 20.0],
            Tol::new(1e-12, 1e-10),
        )
        .unwrap();
        let tails = law.cdf(law.regressor - 20.0, &spec).unwrap()
            + (1.0 - law.cdf(law.regressor + 20.0, &spec).unwrap());
        assert!((mass + tails - 1.0).abs() < 1e-6, "{mass} {tails}");
    }

    #[test]
    fn cauchy_principal_density() {
        let m = ModelSpec::constant(1.0, 0.7, 0.0, 0.4).unwrap();
        let cfg = RegressionConfig::default();
        let (x, t) = (0.1, 0.5);
        // X_t = x + bt + Cauchy with scale πλt
        let c = std::f64::consts::PI * 0.7 * t;
        for &y in &[-2.0, 0.3, 1.7] {
            let d = y - x - 0.4 * t;
            let exact = c / (std::f64::consts::PI * (d * d + c * c));
            let v = principal_density(&m, x, y, t, &cfg).unwrap();
            assert!((v - exact).abs() < 1e-8 * exact.max(1e-3), "y={y}: {v} {exact}");
        }
    }

    #[test]
    fn zero_order_matches_principal_for_constants() {
        let m = ModelSpec::constant(1.4, 1.1, 0.3, -0.2).unwrap();
        let cfg = RegressionConfig::default();
        for &(x, y) in &[(0.0, 0.5), (1.0, -0.4)] {
            let a = principal_density(&m, x, y, 0.3, &cfg).unwrap();
            let b = zero_order_density(&m, x, y, 0.3, &cfg).unwrap();
            assert!((a - b).abs() < 1e-7 * a, "{a} {b}");
        }
    }

    #[test]
    fn q1_identity() {
        let m = smooth();
        let cfg = RegressionConfig::default();
        let field = DriftField::new(&m, cfg.flow.mollifier);
        let a = m.alpha;
        for &(z, t, xi) in &[(0.3, 0.2, 1.7), (-1.1, 0.05, -4.0), (2.0, 0.7, 0.4)] {
            let kap = field.kappa(z, t, &cfg.flow).unwrap();
            let zo = ZeroOrder::from_kappa(&m, &kap, t, &cfg).unwrap();
            let rhs = stable_exponent(&zo.params, f64::powf(t, 1.0 / a) * xi);
            let part = |im: bool| {
                quad::integrate(
                    |v: f64| {
                        // s = t v^5 removes the endpoint singularity
                        let s = t * v.powi(5);
                        let k = kap.eval(s);
                        let p = StableParams::new(a, m.lambda_at(k), m.rho_at(k), 0.0).unwrap();
                        let trunc = -expm1_over((1.0 - a) / a, s.ln()) / a;
                        let val = stable_exponent(&p, xi)
                            + Complex64::new(0.0, xi * m.upsilon(k) * trunc);
                        5.0 * t * v.powi(4) * if im { val.im } else { val.re }
                    },
                    0.0,
                    1.0,
                    Tol::new(1e-13, 1e-12),
                )
                .unwrap()
            };
            let lhs = Complex64::new(part(false), part(true));
            assert!((lhs - rhs).norm() < 1e-8, "z={z} t={t}: {lhs} {rhs}");
        }
    }
}
