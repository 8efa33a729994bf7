//! Locally α-stable model: drift, stable intensity and skewness, residual
//! Lévy kernel, and the drift-compensation quantities built from them.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::grid::Grid;
use crate::quad::{self, GaussLegendre, QuadError, Tol};
use crate::stable::expm1_over;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("field `{field}`: {source}")]
    Expr {
        field: String,
        #[source]
        source: ExprError,
    },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("integral `{integral}` at x={x}: {source}")]
    Quadrature {
        integral: &'static str,
        x: f64,
        #[source]
        source: QuadError,
    },
    #[error("non-finite value of `{what}` at x={x}")]
    NonFinite { what: &'static str, x: f64 },
    #[error("reading model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone)]
pub struct Atom {
    pub position: Expr,
    pub weight: Expr,
}

#[derive(Debug, Clone)]
pub enum ResidualKernel {
    None,
    /// `ν(x, du) = q(x, u) du`, with `|q| ≲ |u|^{-β-1}` near 0 and `|u|^{-γ-1}` at ∞.
    Density { q: Expr, beta: f64, gamma: f64 },
    /// `ν(x, du) = Σ wᵢ(x) δ_{uᵢ(x)}(du)`.
    PointMasses(Vec<Atom>),
}

impl ResidualKernel {
    pub fn is_none(&self) -> bool {
        matches!(self, ResidualKernel::None)
    }
}

const QTOL: Tol = Tol {
    abs: 1e-14,
    rel: 1e-10,
    max_segments: 4000,
};

/// Cached `M(r) = ∫_{r<|u|≤1} u q(u) du` for an x-independent density.
#[derive(Debug)]
struct NuProfile {
    ln_r: Vec<f64>,
    m1: Vec<f64>,
    gl: GaussLegendre,
}

const PROFILE_LN_MIN: f64 = -46.0;
const PROFILE_H: f64 = 0.25;

fn odd_part_log(q: &dyn Fn(f64) -> f64, s: f64) -> f64 {
    let u = s.exp();
    u * u * (q(u) - q(-u))
}

impl NuProfile {
    fn build(q: &dyn Fn(f64) -> f64) -> Self {
        let n = (-PROFILE_LN_MIN / PROFILE_H).round() as usize;
        let gl = GaussLegendre::new(12);
        let ln_r: Vec<f64> = (0..=n).map(|k| PROFILE_LN_MIN + k as f64 * PROFILE_H).collect();
        let mut m1 = vec![0.0; n + 1];
        for k in (0..n).rev() {
            m1[k] = m1[k + 1] + gl.integrate(ln_r[k], ln_r[k + 1], |s| odd_part_log(q, s));
        }
        NuProfile { ln_r, m1, gl }
    }

    fn eval(&self, q: &dyn Fn(f64) -> f64, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        let lr = r.ln().max(PROFILE_LN_MIN);
        let k = (((lr - PROFILE_LN_MIN) / PROFILE_H).floor() as usize).min(self.ln_r.len() - 2);
        self.m1[k + 1] + self.gl.integrate(lr, self.ln_r[k + 1], |s| odd_part_log(q, s))
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub alpha: f64,
    pub lambda: Expr,
    pub rho: Expr,
    pub b: Expr,
    nu: ResidualKernel,
    nu_profile: Option<Arc<NuProfile>>,
    pub eta: f64,
    pub zeta: f64,
    pub beta_activity: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub horizon: f64,
    /// Whether `b` is bounded; the frozen regressor relies on it.
    pub drift_bounded: bool,
    /// Overrides the default `0.9·min(δ_η, δ_ζ, δ_β)`.
    pub delta: Option<f64>,
    pub delta_nu: Option<f64>,
}

fn parse(field: &str, src: &str) -> Result<Expr, ModelError> {
    Expr::parse(src).map_err(|source| ModelError::Expr {
        field: field.to_string(),
        source,
    })
}

/// `∫_{t^{1/α}}^1 u^{-α} du`, zero for t ≥ 1.
pub fn stable_truncated_moment(alpha: f64, t: f64) -> f64 {
    if t >= 1.0 {
        return 0.0;
    }
    -expm1_over((1.0 - alpha) / alpha, t.ln()) / alpha
}

impl ModelSpec {
    /// Model without residual part. Exponents default to η = 1,
    /// ζ = min(1, 0.99α), β = min(0.1, α/2), and the λ bounds are sampled on [-10, 10].
    pub fn from_sources(alpha: f64, lambda: &str, rho: &str, b: &str) -> Result<Self, ModelError> {
        let lambda = parse("lambda", lambda)?;
        let (lo, hi) = sampled_range(&lambda);
        let m = ModelSpec {
            alpha,
            lambda,
            rho: parse("rho", rho)?,
            b: parse("b", b)?,
            nu: ResidualKernel::None,
            nu_profile: None,
            eta: 1.0,
            zeta: 1.0f64.min(0.99 * alpha),
            beta_activity: 0.1f64.min(0.5 * alpha),
            lambda_min: lo,
            lambda_max: hi,
            horizon: 1.0,
            drift_bounded: true,
            delta: None,
            delta_nu: None,
        };
        m.check_structure()?;
        Ok(m)
    }

    /// Constant coefficients.
    pub fn constant(alpha: f64, lambda: f64, rho: f64, b: f64) -> Result<Self, ModelError> {
        Self::from_sources(alpha, &fmt_num(lambda), &fmt_num(rho), &fmt_num(b))
    }

    pub fn with_nu(mut self, nu: ResidualKernel) -> Result<Self, ModelError> {
        self.nu_profile = match &nu {
            ResidualKernel::Density { q, .. } if !q.uses_x() => {
                let qf = |u: f64| q.eval(0.0, u);
                Some(Arc::new(NuProfile::build(&qf)))
            }
            _ => None,
        };
        self.nu = nu;
        self.check_structure()?;
        Ok(self)
    }

    pub fn nu(&self) -> &ResidualKernel {
        &self.nu
    }

    /// Parameter-range checks that make every other operation well defined.
    /// Pointwise conditions are left to [`validate_model`].
    pub fn check_structure(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Invalid(m));
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return bad(format!("alpha={} outside (0,2)", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta={} outside [0,1]", self.eta));
        }
        if !(self.zeta > 0.0) || !(self.beta_activity >= 0.0) {
            return bad("zeta and beta_activity must be positive".into());
        }
        if !(self.lambda_min > 0.0 && self.lambda_min <= self.lambda_max) {
            return bad(format!(
                "need 0 < lambda_min <= lambda_max, got {} and {}",
                self.lambda_min, self.lambda_max
            ));
        }
        if !(self.horizon > 0.0) {
            return bad(format!("horizon={} must be positive", self.horizon));
        }
        if let ResidualKernel::Density { beta, gamma, .. } = &self.nu {
            if !(*beta >= 0.0 && *beta < 2.0 && *gamma > 0.0) {
                return bad(format!("density kernel needs 0<=beta<2, gamma>0; got {beta}, {gamma}"));
            }
        }
        Ok(())
    }

    pub fn lambda_at(&self, x: f64) -> f64 {
        self.lambda.eval_x(x)
    }

    pub fn rho_at(&self, x: f64) -> f64 {
        self.rho.eval_x(x)
    }

    pub fn b_at(&self, x: f64) -> f64 {
        self.b.eval_x(x)
    }

    /// `υ(x) = 2λ(x)ρ(x)`.
    pub fn upsilon(&self, x: f64) -> f64 {
        2.0 * self.lambda_at(x) * self.rho_at(x)
    }

    pub fn has_constant_coefficients(&self) -> bool {
        self.lambda.as_constant().is_some()
            && self.rho.as_constant().is_some()
            && self.b.as_constant().is_some()
    }

    /// `∫_{r<|u|≤1} u ν(x, du)`; `r = 0` gives the full small-jump moment.
    pub fn nu_odd_moment(&self, x: f64, r: f64) -> Result<f64, ModelError> {
        if r >= 1.0 {
            return Ok(0.0);
        }
        match &self.nu {
            ResidualKernel::None => Ok(0.0),
            ResidualKernel::PointMasses(atoms) => Ok(atoms
                .iter()
                .map(|a| {
                    let u = a.position.eval_x(x);
                    if u.abs() > r && u.abs() <= 1.0 {
                        u * a.weight.eval_x(x)
                    } else {
                        0.0
                    }
                })
                .sum()),
            ResidualKernel::Density { q, beta, .. } => {
                let qx = |u: f64| q.eval(x, u);
                if r == 0.0 && *beta < 1.0 {
                    // u = v^k with k(1-β) = 2 makes the integrand regular at 0
                    let k = 2.0 / (1.0 - beta);
                    let v = quad::integrate(
                        |v| {
                            if v <= 0.0 {
                                return 0.0;
                            }
                            let u = v.powf(k);
                            u * (qx(u) - qx(-u)) * k * v.powf(k - 1.0)
                        },
                        0.0,
                        1.0,
                        QTOL,
                    );
                    return v.map_err(|source| ModelError::Quadrature {
                        integral: "small-jump moment of nu",
                        x,
                        source,
                    });
                }
                if let Some(p) = &self.nu_profile {
                    return Ok(p.eval(&qx, r));
                }
                let lo = r.max(1e-300).ln();
                quad::integrate(|s| odd_part_log(&qx, s), lo, 0.0, QTOL).map_err(|source| {
                    ModelError::Quadrature {
                        integral: "truncated moment of nu",
                        x,
                        source,
                    }
                })
            }
        }
    }

    /// `|ν|(x, {|u| > r})`.
    pub fn nu_tail_mass(&self, x: f64, r: f64) -> Result<f64, ModelError> {
        match &self.nu {
            ResidualKernel::None => Ok(0.0),
            ResidualKernel::PointMasses(atoms) => Ok(atoms
                .iter()
                .filter(|a| a.position.eval_x(x).abs() > r)
                .map(|a| a.weight.eval_x(x).abs())
                .sum()),
            ResidualKernel::Density { q, gamma, .. } => {
                let qa = |u: f64| q.eval(x, u).abs() + q.eval(x, -u).abs();
                let err = |source| ModelError::Quadrature {
                    integral: "tail mass of nu",
                    x,
                    source,
                };
                let start = r.max(1.0);
                let mut total = quad::integrate_tail(qa, start, start, *gamma, QTOL).map_err(err)?;
                if r < 1.0 {
                    total += quad::integrate(
                        |s| {
                            let u = s.exp();
                            u * qa(u)
                        },
                        r.ln(),
                        0.0,
                        QTOL,
                    )
                    .map_err(err)?;
                }
                Ok(total)
            }
        }
    }

    /// `b̃(x) = b(x) − 1_{α<1}∫_{|u|≤1}u μ^{(α)}(x,du) − 1_{β<1}∫_{|u|≤1}u ν(x,du)`.
    pub fn compensated_drift(&self, x: f64) -> Result<f64, ModelError> {
        let mut v = self.b_at(x);
        if self.alpha < 1.0 {
            v -= self.upsilon(x) / (1.0 - self.alpha);
        }
        if self.beta_activity < 1.0 {
            v -= self.nu_odd_moment(x, 0.0)?;
        }
        finite(v, "compensated drift", x)
    }

    /// `m_t(x) = ∫_{t^{1/α}<|u|≤1} u μ(x, du)`.
    pub fn partial_compensator(&self, t: f64, x: f64) -> Result<f64, ModelError> {
        if t >= 1.0 {
            return Ok(0.0);
        }
        let stable = self.upsilon(x) * stable_truncated_moment(self.alpha, t);
        let nu = self.nu_odd_moment(x, t.powf(1.0 / self.alpha))?;
        finite(stable + nu, "partial compensator", x)
    }

    /// `b_t(x) = b(x) − m_t(x)`.
    pub fn partially_compensated_drift(&self, t: f64, x: f64) -> Result<f64, ModelError> {
        Ok(self.b_at(x) - self.partial_compensator(t, x)?)
    }

    pub fn deltas(&self) -> Result<DeltaExponents, ModelError> {
        let d = DeltaExponents::new(self.alpha, self.eta, self.zeta, self.beta_activity);
        let d = match self.delta {
            Some(v) => d.with_delta(v)?,
            None => d,
        };
        Ok(match self.delta_nu {
            Some(v) => d.with_nu(v),
            None => d,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        let f: ModelFile = serde_json::from_str(s)?;
        f.into_model()
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from_model(self)).expect("model serializes")
    }
}

fn fmt_num(v: f64) -> String {
    format!("({v:?})")
}

fn sampled_range(e: &Expr) -> (f64, f64) {
    if let Some(c) = e.as_constant() {
        return (c, c);
    }
    Grid::new(-10.0, 10.0, 2001)
        .points()
        .into_iter()
        .map(|x| e.eval_x(x))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn finite(v: f64, what: &'static str, x: f64) -> Result<f64, ModelError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ModelError::NonFinite { what, x })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaExponents {
    pub delta_eta: f64,
    pub delta_zeta: f64,
    pub delta_beta: f64,
    pub delta: f64,
    pub delta_nu: Option<f64>,
    pub delta_infty: f64,
}

impl DeltaExponents {
    pub fn new(alpha: f64, eta: f64, zeta: f64, beta: f64) -> Self {
        let delta_eta = (eta + alpha - 1.0) / alpha;
        let delta_zeta = zeta / alpha;
        let delta_beta = (alpha - beta) / alpha;
        let delta = 0.9 * delta_eta.min(delta_zeta).min(delta_beta);
        DeltaExponents {
            delta_eta,
            delta_zeta,
            delta_beta,
            delta,
            delta_nu: None,
            delta_infty: delta,
        }
    }

    pub fn bound(&self) -> f64 {
        self.delta_eta.min(self.delta_zeta).min(self.delta_beta)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self, ModelError> {
        if !(delta > 0.0 && delta < self.bound()) {
            return Err(ModelError::Invalid(format!(
                "delta={delta} must lie in (0, {})",
                self.bound()
            )));
        }
        self.delta = delta;
        self.delta_infty = self.delta_nu.map_or(delta, |n| n.min(delta));
        Ok(self)
    }

    pub fn with_nu(mut self, delta_nu: f64) -> Self {
        self.delta_nu = Some(delta_nu);
        self.delta_infty = self.delta.min(delta_nu);
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Measured constant (quotient, bound, or extreme value).
    pub constant: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, constant: f64, detail: String) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            constant,
            detail,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<4} {:<22} {:>14.6e}  {}",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.constant,
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Largest `|f(x)-f(y)| / |x-y|^h` over grid pairs with `0 < |x-y| ≤ 1`.
pub fn holder_quotient(values: &[f64], grid: &Grid, h: f64) -> f64 {
    let step = grid.step();
    let reach = ((1.0 / step).floor() as usize).max(1);
    let mut best: f64 = 0.0;
    for i in 0..values.len() {
        for j in i + 1..values.len().min(i + reach + 1) {
            let d = (j - i) as f64 * step;
            best = best.max((values[i] - values[j]).abs() / d.powf(h));
        }
    }
    best
}

/// Refinement factor tolerated before a sampled constant is declared unbounded.
const STABILITY: f64 = 2.0;

fn holder_check(
    report: &mut ValidationReport,
    name: &str,
    grid: &Grid,
    h: f64,
    f: &dyn Fn(f64) -> Result<f64, ModelError>,
) {
    let sample = |g: &Grid| -> Result<Vec<f64>, ModelError> { g.points().into_iter().map(f).collect() };
    let fine = grid.refined();
    match (sample(grid), sample(&fine)) {
        (Ok(a), Ok(b)) => {
            let (qa, qb) = (holder_quotient(&a, grid, h), holder_quotient(&b, &fine, h));
            let ok = qa.is_finite() && qb <= STABILITY * qa + 1e-12;
            report.push(
                name,
                ok,
                qb,
                format!("index {h}; quotient {qa:.6e} on {} pts, {qb:.6e} on {}", grid.n, fine.n),
            );
        }
        (Err(e), _) | (_, Err(e)) => report.push(name, false, f64::NAN, e.to_string()),
    }
}

/// Probes the model conditions on `grid`. Failures become report entries.
pub fn validate_model(model: &ModelSpec, grid: &Grid) -> ValidationReport {
    let mut r = ValidationReport::default();
    let (a, eta, zeta, beta) = (model.alpha, model.eta, model.zeta, model.beta_activity);
    r.push(
        "balance",
        a + eta > 1.0,
        a + eta - 1.0,
        format!("alpha + eta - 1 = {}", a + eta - 1.0),
    );
    r.push("zeta<alpha", zeta < a, a - zeta, format!("zeta={zeta}, alpha={a}"));
    r.push("beta<alpha", beta < a, a - beta, format!("beta={beta}, alpha={a}"));

    let pts = grid.points();
    let lam: Vec<f64> = pts.iter().map(|&x| model.lambda_at(x)).collect();
    let (lo, hi) = lam
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let ok = lo.is_finite() && hi.is_finite() && lo >= model.lambda_min && hi <= model.lambda_max;
    r.push(
        "H^(α)(ii)",
        ok && lo > 0.0,
        lo,
        format!(
            "lambda range [{lo:.6}, {hi:.6}] vs bounds [{}, {}]",
            model.lambda_min, model.lambda_max
        ),
    );
    let rho_max = pts.iter().map(|&x| model.rho_at(x).abs()).fold(0.0, f64::max);
    r.push("|rho|<=1", rho_max <= 1.0, rho_max, format!("max |rho| = {rho_max:.6}"));

    holder_check(&mut r, "H^drift", grid, eta, &|x| model.compensated_drift(x));
    holder_check(&mut r, "H^(α)(i) lambda", grid, zeta, &|x| Ok(model.lambda_at(x)));
    holder_check(&mut r, "H^(α)(i) rho", grid, zeta, &|x| Ok(model.rho_at(x)));

    if !model.nu.is_none() {
        activity_check(&mut r, model, &pts);
        domination_check(&mut r, model, &pts);
        if let ResidualKernel::Density { q, beta, gamma } = &model.nu {
            reg_cond_check(&mut r, q, *beta, *gamma, &pts);
        }
    }
    r
}

fn activity_check(r: &mut ValidationReport, model: &ModelSpec, pts: &[f64]) {
    let beta = model.beta_activity;
    let sup = |k_max: usize| -> Result<f64, ModelError> {
        let mut best: f64 = 0.0;
        for &x in pts {
            for k in 0..=k_max {
                let rr = 10f64.powf(-(k as f64) / 4.0);
                best = best.max(rr.powf(beta) * model.nu_tail_mass(x, rr)?);
            }
        }
        Ok(best)
    };
    match (sup(24), sup(32)) {
        (Ok(c), Ok(f)) => r.push(
            "H^ν activity",
            c.is_finite() && f <= STABILITY * c + 1e-12,
            f,
            format!("sup r^beta |nu|(|u|>r): {c:.6e} down to r=1e-6, {f:.6e} down to 1e-8"),
        ),
        (Err(e), _) | (_, Err(e)) => r.push("H^ν activity", false, f64::NAN, e.to_string()),
    }
}

fn domination_check(r: &mut ValidationReport, model: &ModelSpec, pts: &[f64]) {
    let a = model.alpha;
    match &model.nu {
        ResidualKernel::Density { q, .. } => {
            let mut worst: f64 = 0.0;
            for &x in pts {
                let (l, rho) = (model.lambda_at(x), model.rho_at(x));
                for k in -24..=24 {
                    let u = 10f64.powf(k as f64 / 4.0);
                    for s in [1.0, -1.0] {
                        let v = q.eval(x, s * u);
                        if v < 0.0 {
                            let mu = l * (1.0 + s * rho) * u.powf(-a - 1.0);
                            worst = worst.max(-v / mu);
                        }
                    }
                }
            }
            r.push(
                "ν_- domination",
                worst <= 1.0,
                worst,
                format!("max nu_-/mu ratio {worst:.6e}"),
            );
        }
        ResidualKernel::PointMasses(atoms) => {
            let neg = pts
                .iter()
                .flat_map(|&x| atoms.iter().map(move |at| at.weight.eval_x(x)))
                .fold(0.0, |m: f64, w| m.max(-w));
            r.push(
                "ν_- domination",
                neg <= 0.0,
                neg,
                "point masses must carry non-negative weights".into(),
            );
        }
        ResidualKernel::None => {}
    }
}

fn reg_cond_check(r: &mut ValidationReport, q: &Expr, beta: f64, gamma: f64, pts: &[f64]) {
    let sup = |k_lo: i32, k_hi: i32| {
        let mut best: f64 = 0.0;
        for &x in pts {
            for k in k_lo..=k_hi {
                let u = 10f64.powf(k as f64 / 4.0);
                let w = if u <= 1.0 { u.powf(beta + 1.0) } else { u.powf(gamma + 1.0) };
                best = best.max(q.eval(x, u).abs() * w).max(q.eval(x, -u).abs() * w);
            }
        }
        best
    };
    let (c, f) = (sup(-24, 12), sup(-32, 16));
    r.push(
        "H^ν(ii) reg_cond",
        c.is_finite() && f <= STABILITY * c + 1e-12,
        f,
        format!("sup |q| |u|^(beta+1 or gamma+1): {c:.6e}, extended range {f:.6e}"),
    );
}

// On-disk format.

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum NuFile {
    None,
    Density { q: String, beta: f64, gamma: f64 },
    PointMasses { atoms: Vec<AtomFile> },
}

#[derive(Debug, Serialize, Deserialize)]
struct AtomFile {
    position: String,
    weight: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    alpha: f64,
    lambda: String,
    rho: String,
    b: String,
    #[serde(default = "nu_none")]
    nu: NuFile,
    eta: f64,
    zeta: f64,
    beta_activity: f64,
    lambda_min: f64,
    lambda_max: f64,
    #[serde(default = "one")]
    horizon: f64,
    #[serde(default = "yes")]
    drift_bounded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_nu: Option<f64>,
}

fn nu_none() -> NuFile {
    NuFile::None
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

impl ModelFile {
    fn into_model(self) -> Result<ModelSpec, ModelError> {
        let nu = match self.nu {
            NuFile::None => ResidualKernel::None,
            NuFile::Density { q, beta, gamma } => ResidualKernel::Density {
                q: parse("nu.q", &q)?,
                beta,
                gamma,
            },
            NuFile::PointMasses { atoms } => ResidualKernel::PointMasses(
                atoms
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        Ok(Atom {
                            position: parse(&format!("nu.atoms[{i}].position"), &a.position)?,
                            weight: parse(&format!("nu.atoms[{i}].weight"), &a.weight)?,
                        })
                    })
                    .collect::<Result<_, ModelError>>()?,
            ),
        };
        let m = ModelSpec {
            alpha: self.alpha,
            lambda: parse("lambda", &self.lambda)?,
            rho: parse("rho", &self.rho)?,
            b: parse("b", &self.b)?,
            nu: ResidualKernel::None,
            nu_profile: None,
            eta: self.eta,
            zeta: self.zeta,
            beta_activity: self.beta_activity,
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max,
            horizon: self.horizon,
            drift_bounded: self.drift_bounded,
            delta: self.delta,
            delta_nu: self.delta_nu,
        };
        m.with_nu(nu)
    }

    fn from_model(m: &ModelSpec) -> Self {
        let nu = match &m.nu {
            ResidualKernel::None => NuFile::None,
            ResidualKernel::Density { q, beta, gamma } => NuFile::Density {
                q: q.source().to_string(),
                beta: *beta,
                gamma: *gamma,
            },
            ResidualKernel::PointMasses(atoms) => NuFile::PointMasses {
                atoms: atoms
                    .iter()
                    .map(|a| AtomFile {
                        position: a.position.source().to_string(),
                        weight: a.weight.source().to_string(),
                    })
                    .collect(),
            },
        };
        ModelFile {
            alpha: m.alpha,
            lambda: m.lambda.source().to_string(),
            rho: m.rho.source().to_string(),
            b: m.b.source().to_string(),
            nu,
            eta: m.eta,
            zeta: m.zeta,
            beta_activity: m.beta_activity,
            lambda_min: m.lambda_min,
            lambda_max: m.lambda_max,
            horizon: m.horizon,
            drift_bounded: m.drift_bounded,
            delta: m.delta,
            delta_nu: m.delta_nu,
        }
    }
}
