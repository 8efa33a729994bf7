//! Euler simulation of the process, sampling of regression laws and
//! Kolmogorov-distance rate experiments.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expr;
use crate::fit::loglog_fit;
use crate::model::{ModelError, ModelSpec, ResidualKernel};
use crate::regression::{regression_law, RegressionConfig, RegressionError};
use crate::stable::{StableParams, StableSampler};

#[derive(Debug, Error)]
pub enum MonteCarloError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error("invalid simulation input: {0}")]
    Invalid(String),
    #[error("path exploded at step {step} (|X| = {value:e})")]
    Explosion { step: usize, value: f64 },
    #[error("empty sample")]
    Empty,
}

type Result<T> = std::result::Result<T, MonteCarloError>;

const CHUNK: usize = 1 << 12;
const EXPLOSION: f64 = 1e12;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EulerConfig {
    /// Time step; `None` uses `t / 64`. Rounded down so that it divides `t`.
    pub dt: Option<f64>,
    /// Residual jumps with `|u| ≤ jump_cut` are dropped (their compensated
    /// contribution is second order).
    pub jump_cut: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for EulerConfig {
    fn default() -> Self {
        EulerConfig {
            dt: None,
            jump_cut: 0.01,
            n_paths: 100_000,
            seed: 1,
        }
    }
}

impl EulerConfig {
    /// Number of steps and the step size for horizon `t`.
    pub fn steps(&self, t: f64) -> Result<(usize, f64)> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(MonteCarloError::Invalid(format!("time {t} must be positive")));
        }
        let dt = self.dt.unwrap_or(t / 64.0);
        if !(dt > 0.0 && dt <= t / 16.0 * (1.0 + 1e-12)) {
            return Err(MonteCarloError::Invalid(format!("dt={dt} must lie in (0, t/16]")));
        }
        if !(self.jump_cut > 0.0 && self.jump_cut <= 1.0) {
            return Err(MonteCarloError::Invalid(format!("jump_cut={} not in (0,1]", self.jump_cut)));
        }
        let n = (t / dt - 1e-9).ceil() as usize;
        Ok((n, t / n as f64))
    }
}

/// Inverse-CDF table for one side of a jump-size envelope on `|u| > cut`.
#[derive(Debug, Clone)]
struct SideTable {
    ln_u: Vec<f64>,
    cum: Vec<f64>,
    /// Mass beyond the last node, sampled as a Pareto tail.
    tail: f64,
    gamma: f64,
}

impl SideTable {
    fn build(env: &dyn Fn(f64) -> f64, cut: f64, gamma: f64) -> Self {
        let (lo, hi) = (cut.ln(), 1e4f64.ln());
        let n = 2000;
        let h = (hi - lo) / n as f64;
        let ln_u: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
        let dens: Vec<f64> = ln_u.iter().map(|&s| s.exp() * env(s.exp())).collect();
        let mut cum = vec![0.0; n + 1];
        for i in 1..=n {
            cum[i] = cum[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);
        }
        let tail = dens[n] / gamma;
        SideTable { ln_u, cum, tail, gamma }
    }

    fn mass(&self) -> f64 {
        self.cum[self.cum.len() - 1] + self.tail
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let body = self.cum[self.cum.len() - 1];
        let target = rng.random::<f64>() * self.mass();
        if target >= body {
            let v: f64 = rng.random();
            return self.ln_u[self.ln_u.len() - 1].exp() * (1.0 - v).powf(-1.0 / self.gamma);
        }
        let k = self.cum.partition_point(|&c| c <= target).clamp(1, self.cum.len() - 1);
        let (c0, c1) = (self.cum[k - 1], self.cum[k]);
        let f = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
        (self.ln_u[k - 1] + f * (self.ln_u[k] - self.ln_u[k - 1])).exp()
    }
}

/// Residual jumps with `|u| > cut`, proposed from an `x`-free envelope and thinned.
#[derive(Debug, Clone)]
enum JumpPart {
    None,
    Density {
        q: Expr,
        plus: SideTable,
        minus: SideTable,
        /// `None` when the envelope is exact.
        env_scale: Option<f64>,
        envelope_q: EnvelopeKind,
    },
    Atoms(Vec<(Expr, Expr)>),
}

#[derive(Debug, Clone)]
enum EnvelopeKind {
    Exact,
    Sup(Vec<f64>),
}

fn envelope_xs() -> Vec<f64> {
    (0..=400).map(|i| -20.0 + 0.1 * i as f64).collect()
}

impl JumpPart {
    fn new(model: &ModelSpec, cut: f64) -> Result<Self> {
        match model.nu() {
            ResidualKernel::None => Ok(JumpPart::None),
            ResidualKernel::PointMasses(atoms) => Ok(JumpPart::Atoms(
                atoms.iter().map(|a| (a.position.clone(), a.weight.clone())).collect(),
            )),
            ResidualKernel::Density { q, gamma, .. } => {
                let xs = if q.uses_x() { envelope_xs() } else { vec![0.0] };
                for &x in &xs {
                    for k in -40..=40 {
                        let u = (k as f64 * 0.25).exp() * if k % 2 == 0 { 1.0 } else { -1.0 };
                        if q.eval(x, u) < 0.0 {
                            return Err(MonteCarloError::Invalid(
                                "signed residual kernels cannot be simulated by jumps".into(),
                            ));
                        }
                    }
                }
                let sup = |u: f64| xs.iter().map(|&x| q.eval(x, u)).fold(0.0, f64::max);
                let scale = if q.uses_x() { 1.25 } else { 1.0 };
                let plus = SideTable::build(&|u| scale * sup(u), cut, *gamma);
                let minus = SideTable::build(&|u| scale * sup(-u), cut, *gamma);
                Ok(JumpPart::Density {
                    q: q.clone(),
                    plus,
                    minus,
                    env_scale: q.uses_x().then_some(scale),
                    envelope_q: if q.uses_x() {
                        EnvelopeKind::Sup(xs)
                    } else {
                        EnvelopeKind::Exact
                    },
                })
            }
        }
    }

    /// Sum of the residual jumps over one step of length `dt` from state `x`.
    fn step<R: Rng + ?Sized>(&self, x: f64, dt: f64, rng: &mut R) -> f64 {
        match self {
            JumpPart::None => 0.0,
            JumpPart::Atoms(atoms) => {
                let mut total = 0.0;
                for (pos, wt) in atoms {
                    let rate = wt.eval_x(x).max(0.0) * dt;
                    if rate > 0.0 && rng.random::<f64>() < -(-rate).exp_m1() {
                        total += pos.eval_x(x);
                    }
                }
                total
            }
            JumpPart::Density {
                q,
                plus,
                minus,
                env_scale,
                envelope_q,
            } => {
                let (mp, mm) = (plus.mass(), minus.mass());
                let mean = (mp + mm) * dt;
                let count = if mean > 0.0 {
                    Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0)
                } else {
                    0
                };
                let mut total = 0.0;
                for _ in 0..count {
                    let u = if rng.random::<f64>() * (mp + mm) < mp {
                        plus.sample(rng)
                    } else {
                        -minus.sample(rng)
                    };
                    let keep = match (env_scale, envelope_q) {
                        (Some(s), EnvelopeKind::Sup(xs)) => {
                            let env = s * xs.iter().map(|&xx| q.eval(xx, u)).fold(0.0, f64::max);
                            env > 0.0 && rng.random::<f64>() * env < q.eval(x, u)
                        }
                        _ => true,
                    };
                    if keep {
                        total += u;
                    }
                }
                total
            }
        }
    }
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

/// Terminal values `X_t` of `n_paths` Euler paths started at `x0`.
///
/// Each step adds `b(X)dt`, an exact increment of the stable part frozen at
/// `X` (Lévy measure `dt·μ^{(α)}(X; du)` with the `|u| ≤ 1` compensation),
/// the residual jumps with `|u| > jump_cut`, and the drift
/// `−dt ∫_{cut<|u|≤1} u ν(X; du)`.
pub fn simulate_paths(model: &ModelSpec, x0: f64, t: f64, cfg: &EulerConfig) -> Result<Vec<f64>> {
    let (steps, dt) = cfg.steps(t)?;
    if !x0.is_finite() {
        return Err(MonteCarloError::Invalid("x0 must be finite".into()));
    }
    let jumps = JumpPart::new(model, cfg.jump_cut)?;
    let cut = cfg.jump_cut;
    let comp_shared = match model.nu() {
        ResidualKernel::Density { q, .. } if !q.uses_x() => Some(model.nu_odd_moment(0.0, cut)?),
        ResidualKernel::None => Some(0.0),
        _ => None,
    };
    let alpha = model.alpha;
    let mut out = vec![0.0; cfg.n_paths];
    let failures: Vec<MonteCarloError> = out
        .par_chunks_mut(CHUNK)
        .enumerate()
        .filter_map(|(k, chunk)| {
            let mut rng = chunk_rng(cfg.seed, k);
            for v in chunk.iter_mut() {
                let mut x = x0;
                for step in 0..steps {
                    let lam = model.lambda_at(x);
                    let rho = model.rho_at(x).clamp(-1.0, 1.0);
                    let p = StableParams {
                        alpha,
                        lambda: lam * dt,
                        rho,
                        upsilon: 0.0,
                    };
                    let comp = match comp_shared {
                        Some(c) => c,
                        None => match model.nu_odd_moment(x, cut) {
                            Ok(c) => c,
                            Err(e) => return Some(e.into()),
                        },
                    };
                    x += (model.b_at(x) - comp) * dt
                        + StableSampler::unchecked(&p).sample(&mut rng)
                        + jumps.step(x, dt, &mut rng);
                    if !(x.abs() <= EXPLOSION) {
                        return Some(MonteCarloError::Explosion { step: step + 1, value: x });
                    }
                }
                *v = x;
            }
            None
        })
        .collect();
    match failures.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// `count` draws of `𝔣_t(x) + t^{1/α} U` for the named regressor variant.
pub fn sample_regression(
    model: &ModelSpec,
    x: f64,
    t: f64,
    variant: &str,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let law = regression_law(model, x, t, variant, &RegressionConfig::default())?;
    let sampler = law.sampler()?;
    let mut out = vec![0.0; count];
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(k, chunk)| {
        let mut rng = chunk_rng(seed, k);
        for v in chunk.iter_mut() {
            *v = sampler.sample(&mut rng);
        }
    });
    Ok(out)
}

fn sorted(a: &[f64]) -> Vec<f64> {
    let mut v = a.to_vec();
    v.par_sort_unstable_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov distance between empirical laws given as sorted
/// samples with optional multiplicities.
fn ks_sorted(a: &[f64], wa: Option<&[u32]>, b: &[f64], wb: Option<&[u32]>) -> f64 {
    let na: f64 = wa.map_or(a.len() as f64, |w| w.iter().map(|&c| c as f64).sum());
    let nb: f64 = wb.map_or(b.len() as f64, |w| w.iter().map(|&c| c as f64).sum());
    let (mut i, mut j) = (0, 0);
    let (mut ca, mut cb) = (0.0, 0.0);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => break,
        };
        while i < a.len() && a[i] <= x {
            ca += wa.map_or(1.0, |w| w[i] as f64);
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            cb += wb.map_or(1.0, |w| w[j] as f64);
            j += 1;
        }
        d = d.max((ca / na - cb / nb).abs());
    }
    d
}

/// `sup_y |F_a(y) − F_b(y)|` of the empirical distribution functions.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(MonteCarloError::Empty);
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(MonteCarloError::Invalid("NaN in sample".into()));
    }
    Ok(ks_sorted(&sorted(a), None, &sorted(b), None))
}

/// `∫ (F_a − F_b)² dy` of the empirical distribution functions.
pub fn cramer_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(MonteCarloError::Empty);
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => break,
        };
        if let Some(p) = prev {
            let diff = i as f64 / na - j as f64 / nb;
            total += diff * diff * (x - p);
        }
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        prev = Some(x);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentStatus {
    Ok,
    /// Every distance sits below the Monte Carlo noise floor.
    InconclusiveByExactness,
}

impl ExperimentStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentStatus::Ok => "ok",
            ExperimentStatus::InconclusiveByExactness => "inconclusive-by-exactness",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRow {
    pub t: f64,
    pub n_paths: usize,
    pub ks: f64,
    pub cramer: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub variant: String,
    pub x0: f64,
    pub seed: u64,
    pub dt_ratio: f64,
    pub rows: Vec<ExperimentRow>,
    pub slope: f64,
    /// Half-width of the 95% bootstrap interval of the slope.
    pub half_width: f64,
    pub noise_floor: f64,
    pub all_above_floor: bool,
    pub status: ExperimentStatus,
}

/// `v` rounded to ten significant digits, in shortest form.
fn sig(v: f64) -> String {
    format!("{}", format!("{v:.9e}").parse::<f64>().unwrap_or(v))
}

impl ExperimentResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,n_paths,ks,cramer,variant,slope,slope_half_width\n");
        for r in &self.rows {
            writeln!(
                out,
                "{:e},{},{:e},{:e},{},{},{}",
                r.t,
                r.n_paths,
                r.ks,
                r.cramer,
                self.variant,
                sig(self.slope),
                sig(self.half_width)
            )
            .unwrap();
        }
        out
    }

    /// `key=value` metadata.
    pub fn metadata(&self) -> String {
        let mut out = String::new();
        for (k, v) in [
            ("variant", self.variant.clone()),
            ("x0", format!("{:e}", self.x0)),
            ("seed", self.seed.to_string()),
            ("dt", format!("t*{:e}", self.dt_ratio)),
            ("slope", sig(self.slope)),
            ("slope_half_width", sig(self.half_width)),
            ("noise_floor", format!("{:e}", self.noise_floor)),
            ("all_above_floor", self.all_above_floor.to_string()),
            ("status", self.status.as_str().to_string()),
        ] {
            writeln!(out, "{k}={v}").unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingConfig {
    pub euler: EulerConfig,
    /// `dt = dt_ratio · t`.
    pub dt_ratio: f64,
    pub bootstrap: usize,
    /// Replaces the simulated distances by `t^v` (testing hook).
    pub synthetic_inject: Option<f64>,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            euler: EulerConfig::default(),
            dt_ratio: 1.0 / 64.0,
            bootstrap: 100,
            synthetic_inject: None,
        }
    }
}

/// Multinomial resampling weights for a sample of size `n`.
fn resample_counts<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u32> {
    let mut c = vec![0u32; n];
    for _ in 0..n {
        c[rng.random_range(0..n)] += 1;
    }
    c
}

/// KS distances between simulated paths and the regression law over `t_list`,
/// with the log-log slope and a bootstrap interval.
pub fn scaling_experiment(
    model: &ModelSpec,
    x0: f64,
    t_list: &[f64],
    variant: &str,
    cfg: &ScalingConfig,
) -> Result<ExperimentResult> {
    if t_list.len() < 3 || t_list.windows(2).any(|w| !(w[0] > w[1])) || t_list[t_list.len() - 1] <= 0.0 {
        return Err(MonteCarloError::Invalid("t_list must hold at least three descending positive times".into()));
    }
    let n = cfg.euler.n_paths;
    if let Some(v) = cfg.synthetic_inject {
        let rows: Vec<ExperimentRow> = t_list
            .iter()
            .map(|&t| ExperimentRow {
                t,
                n_paths: n,
                ks: t.powf(v),
                cramer: 0.0,
            })
            .collect();
        let ks: Vec<f64> = rows.iter().map(|r| r.ks).collect();
        return Ok(ExperimentResult {
            variant: variant.to_string(),
            x0,
            seed: cfg.euler.seed,
            dt_ratio: cfg.dt_ratio,
            slope: loglog_fit(t_list, &ks).0,
            half_width: 0.0,
            noise_floor: 0.0,
            all_above_floor: true,
            status: ExperimentStatus::Ok,
            rows,
        });
    }
    if n == 0 {
        return Err(MonteCarloError::Empty);
    }
    let floor = 2.0 / (n as f64).sqrt();
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    for (k, &t) in t_list.iter().enumerate() {
        let euler = EulerConfig {
            dt: Some(cfg.dt_ratio * t),
            seed: cfg.euler.seed.wrapping_add(2 * k as u64),
            ..cfg.euler
        };
        let sim = sorted(&simulate_paths(model, x0, t, &euler)?);
        let reg = sorted(&sample_regression(model, x0, t, variant, n, cfg.euler.seed.wrapping_add(2 * k as u64 + 1))?);
        rows.push(ExperimentRow {
            t,
            n_paths: n,
            ks: ks_sorted(&sim, None, &reg, None),
            cramer: cramer_distance(&sim, &reg)?,
        });
        samples.push((sim, reg));
    }
    let ks: Vec<f64> = rows.iter().map(|r| r.ks).collect();
    let all_below = ks.iter().all(|&d| d < floor);
    let all_above = ks.iter().all(|&d| d > floor);
    let slope = loglog_fit(t_list, &ks).0;
    let boot: Vec<f64> = (0..cfg.bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = chunk_rng(cfg.euler.seed ^ 0x5eed_b007, b);
            let d: Vec<f64> = samples
                .iter()
                .map(|(s, r)| {
                    let (cs, cr) = (resample_counts(s.len(), &mut rng), resample_counts(r.len(), &mut rng));
                    ks_sorted(s, Some(&cs), r, Some(&cr)).max(f64::MIN_POSITIVE)
                })
                .collect();
            loglog_fit(t_list, &d).0
        })
        .collect();
    let half_width = if boot.len() >= 2 {
        let mut sorted_b = boot.clone();
        sorted_b.sort_by(f64::total_cmp);
        let q = |p: f64| sorted_b[((p * (sorted_b.len() - 1) as f64).round()) as usize];
        0.5 * (q(0.975) - q(0.025))
    } else {
        f64::NAN
    };
    Ok(ExperimentResult {
        variant: variant.to_string(),
        x0,
        seed: cfg.euler.seed,
        dt_ratio: cfg.dt_ratio,
        rows,
        slope,
        half_width,
        noise_floor: floor,
        all_above_floor: all_above,
        status: if all_below {
            ExperimentStatus::InconclusiveByExactness
        } else {
            ExperimentStatus::Ok
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Atom;
    use std::f64::consts::PI;

    fn cauchy_cdf(y: f64, loc: f64, gam: f64) -> f64 {
        0.5 + ((y - loc) / gam).atan() / PI
    }

    fn ks_to_cdf(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
        let s = sorted(sample);
        let n = s.len() as f64;
        s.iter()
            .enumerate()
            .map(|(i, &y)| {
                let f = cdf(y);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn cauchy_paths_match_closed_form() {
        let lam = 0.5;
        let m = ModelSpec::constant(1.0, lam, 0.0, 0.3).unwrap();
        let n = 20_000;
        let cfg = EulerConfig {
            n_paths: n,
            seed: 7,
            ..EulerConfig::default()
        };
        let t = 0.5;
        let xs = simulate_paths(&m, 0.2, t, &cfg).unwrap();
        let d = ks_to_cdf(&xs, |y| cauchy_cdf(y, 0.2 + 0.3 * t, PI * lam * t));
        assert!(d < 1.63 / (n as f64).sqrt(), "{d}");
    }

    #[test]
    fn drift_dominated_median() {
        let m = ModelSpec::constant(1.5, 1e-8, 0.0, 2.0).unwrap();
        let cfg = EulerConfig {
            n_paths: 1001,
            ..EulerConfig::default()
        };
        let mut xs = simulate_paths(&m, 1.0, 0.25, &cfg).unwrap();
        xs.sort_by(f64::total_cmp);
        assert!((xs[500] - 1.5).abs() < 1e-4, "{}", xs[500]);
    }

    #[test]
    fn empty_batches() {
        let m = ModelSpec::constant(1.5, 1.0, 0.0, 0.0).unwrap();
        let cfg = EulerConfig {
            n_paths: 0,
            ..EulerConfig::default()
        };
        assert!(simulate_paths(&m, 0.0, 1.0, &cfg).unwrap().is_empty());
        assert!(sample_regression(&m, 0.0, 1.0, "chi", 0, 1).unwrap().is_empty());
        assert!(matches!(ks_distance(&[], &[1.0]), Err(MonteCarloError::Empty)));
    }

    #[test]
    fn explosion_names_the_step() {
        let m = ModelSpec::from_sources(1.5, "1", "0", "exp(x)").unwrap();
        let cfg = EulerConfig {
            n_paths: 4,
            ..EulerConfig::default()
        };
        match simulate_paths(&m, 30.0, 1.0, &cfg) {
            Err(MonteCarloError::Explosion { step, .. }) => assert!(step >= 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let m = ModelSpec::from_sources(1.2, "1 + 0.3*sin(x)", "0.5*cos(x)", "sin(x)").unwrap();
        let cfg = EulerConfig {
            n_paths: 5000,
            seed: 3,
            ..EulerConfig::default()
        };
        let a = simulate_paths(&m, 0.1, 0.2, &cfg).unwrap();
        let b = simulate_paths(&m, 0.1, 0.2, &cfg).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| simulate_paths(&m, 0.1, 0.2, &cfg).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn regression_sample_matches_paths_for_constant_model() {
        let m = ModelSpec::constant(1.3, 0.8, 0.4, -0.2).unwrap();
        let n = 40_000;
        let cfg = EulerConfig {
            n_paths: n,
            seed: 11,
            ..EulerConfig::default()
        };
        let sim = simulate_paths(&m, 0.0, 0.3, &cfg).unwrap();
        let reg = sample_regression(&m, 0.0, 0.3, "chi", n, 12).unwrap();
        // two-sample 99% critical value 1.63·sqrt(2/n)
        let d = ks_distance(&sim, &reg).unwrap();
        assert!(d < 1.63 * (2.0 / n as f64).sqrt(), "{d}");
    }

    #[test]
    fn ks_basic_cases() {
        let a = [0.1, 0.5, 0.9];
        assert_eq!(ks_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_distance(&a, &[2.0, 3.0]).unwrap(), 1.0);
        assert!((ks_distance(&[0.0, 1.0], &[0.5]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_uniform_null_rate() {
        // 95% two-sample critical value 1.358·sqrt(2/n)
        let n = 10_000;
        let crit = 1.358 * (2.0 / n as f64).sqrt();
        let mut hits = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            if ks_distance(&a, &b).unwrap() < crit {
                hits += 1;
            }
        }
        assert!(hits >= 90, "{hits}");
    }

    #[test]
    fn cramer_of_shifted_points() {
        let d = cramer_distance(&[0.0], &[0.5]).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn synthetic_slope_is_exact() {
        let m = ModelSpec::constant(1.5, 1.0, 0.0, 0.0).unwrap();
        let cfg = ScalingConfig {
            synthetic_inject: Some(0.3),
            ..ScalingConfig::default()
        };
        let r = scaling_experiment(&m, 0.0, &[0.4, 0.2, 0.1, 0.05], "chi", &cfg).unwrap();
        assert!((r.slope - 0.3).abs() < 1e-12);
        assert!(r.to_csv().lines().nth(1).unwrap().ends_with(",0.3,0"));
    }

    #[test]
    fn constant_model_is_inconclusive() {
        let m = ModelSpec::constant(1.5, 1.0, 0.3, 0.5).unwrap();
        let cfg = ScalingConfig {
            euler: EulerConfig {
                n_paths: 20_000,
                ..EulerConfig::default()
            },
            bootstrap: 10,
            ..ScalingConfig::default()
        };
        let r = scaling_experiment(&m, 0.0, &[0.4, 0.2, 0.1], "chi", &cfg).unwrap();
        assert_eq!(r.status, ExperimentStatus::InconclusiveByExactness, "{:?}", r.rows);
    }

    #[test]
    fn unsorted_times_rejected() {
        let m = ModelSpec::constant(1.5, 1.0, 0.0, 0.0).unwrap();
        let r = scaling_experiment(&m, 0.0, &[0.1, 0.2, 0.4], "chi", &ScalingConfig::default());
        assert!(matches!(r, Err(MonteCarloError::Invalid(_))));
    }

    #[test]
    fn point_mass_jumps_reach_the_origin() {
        // ν(x, du) = δ_{−x}(du): jumps land exactly at 0
        let atom = Atom {
            position: Expr::parse("-x").unwrap(),
            weight: Expr::parse("1").unwrap(),
        };
        let m = ModelSpec::constant(0.8, 1.0, 0.0, 0.0)
            .unwrap()
            .with_nu(ResidualKernel::PointMasses(vec![atom]))
            .unwrap();
        let near = |t: f64| {
            let cfg = EulerConfig {
                n_paths: 20_000,
                ..EulerConfig::default()
            };
            let xs = simulate_paths(&m, 1.0, t, &cfg).unwrap();
            xs.iter().filter(|v| v.abs() < 0.02).count() as f64 / xs.len() as f64
        };
        let (a, b) = (near(0.4), near(0.1));
        assert!(a > 0.0 && b > 0.0);
    }

    #[test]
    fn density_jump_rate_matches_tail_mass() {
        let q = Expr::parse("min(abs(u)^(-1.5), abs(u)^(-3))").unwrap();
        let m = ModelSpec::constant(1.2, 1e-9, 0.0, 0.0)
            .unwrap()
            .with_nu(ResidualKernel::Density {
                q,
                beta: 0.5,
                gamma: 2.0,
            })
            .unwrap();
        let jp = JumpPart::new(&m, 0.5).unwrap();
        let mass = match &jp {
            JumpPart::Density { plus, minus, .. } => plus.mass() + minus.mass(),
            _ => unreachable!(),
        };
        let exact = m.nu_tail_mass(0.0, 0.5).unwrap();
        assert!((mass - exact).abs() < 1e-4 * exact, "{mass} {exact}");
        // P(|X_t − x| > 2) is about t·ν(|u|>2) for small t
        let cfg = EulerConfig {
            n_paths: 200_000,
            jump_cut: 0.5,
            ..EulerConfig::default()
        };
        let t = 0.05;
        let xs = simulate_paths(&m, 0.0, t, &cfg).unwrap();
        let frac = xs.iter().filter(|v| v.abs() > 2.0).count() as f64 / xs.len() as f64;
        let want = -(-t * m.nu_tail_mass(0.0, 2.0).unwrap()).exp_m1();
        assert!((frac - want).abs() < 4.0 * (want / cfg.n_paths as f64).sqrt(), "{frac} {want}");
    }
}
