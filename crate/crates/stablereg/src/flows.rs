//! Mollified drift `B_t` and the deterministic flows driven by it.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::model::{stable_truncated_moment, ModelError, ModelSpec, ResidualKernel};
use crate::quad::{GaussHermite, GaussLegendre};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite {what} at t={t}, x={x}")]
    NonFinite { what: &'static str, t: f64, x: f64 },
    #[error("flow endpoint still changes by {change:e} with {steps} steps")]
    NoConvergence { steps: usize, change: f64 },
    #[error("invalid flow input: {0}")]
    Invalid(String),
}

/// Gaussian mollifier with standard deviation `t^{1/α}/√2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub nodes: usize,
}

impl Default for MollifierSpec {
    fn default() -> Self {
        MollifierSpec { nodes: 64 }
    }
}

fn hermite_rule(n: usize) -> Arc<(Vec<f64>, Vec<f64>)> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    cache
        .lock()
        .unwrap()
        .entry(n)
        .or_insert_with(|| {
            let gh = GaussHermite::new(n);
            let norm = std::f64::consts::PI.sqrt();
            Arc::new((gh.nodes, gh.weights.iter().map(|w| w / norm).collect()))
        })
        .clone()
}

/// `b_t` and its mollification `B_t` for one model.
#[derive(Debug, Clone)]
pub struct DriftField<'a> {
    pub model: &'a ModelSpec,
    rule: Arc<(Vec<f64>, Vec<f64>)>,
    nu_shared: bool,
}

fn nu_depends_on_x(nu: &ResidualKernel) -> bool {
    match nu {
        ResidualKernel::None => false,
        ResidualKernel::Density { q, .. } => q.uses_x(),
        ResidualKernel::PointMasses(atoms) => {
            atoms.iter().any(|a| a.position.uses_x() || a.weight.uses_x())
        }
    }
}

impl<'a> DriftField<'a> {
    pub fn new(model: &'a ModelSpec, spec: MollifierSpec) -> Self {
        DriftField {
            model,
            rule: hermite_rule(spec.nodes.max(1)),
            nu_shared: !nu_depends_on_x(model.nu()),
        }
    }

    fn check_t(t: f64) -> Result<(), FlowError> {
        if t > 0.0 && t.is_finite() {
            Ok(())
        } else {
            Err(FlowError::Invalid(format!("time {t} must be positive")))
        }
    }

    /// `b_t(x)`.
    pub fn b_t(&self, t: f64, x: f64) -> Result<f64, FlowError> {
        Self::check_t(t)?;
        let v = self.model.partially_compensated_drift(t, x)?;
        finite(v, "b_t", t, x)
    }

    /// `B_t(x) = E b_t(x − t^{1/α} ξ)`, ξ with density `e^{-ξ²}/√π`.
    pub fn eval(&self, t: f64, x: f64) -> Result<f64, FlowError> {
        Self::check_t(t)?;
        let m = self.model;
        let scale = t.powf(1.0 / m.alpha);
        let moment = stable_truncated_moment(m.alpha, t);
        let nu_fixed = if self.nu_shared {
            m.nu_odd_moment(0.0, scale)?
        } else {
            0.0
        };
        let (nodes, weights) = (&self.rule.0, &self.rule.1);
        let mut acc = 0.0;
        for (xi, w) in nodes.iter().zip(weights) {
            let z = x - scale * xi;
            let ups = m.upsilon(z);
            let mut v = m.b_at(z);
            if ups != 0.0 {
                v -= ups * moment;
            }
            v -= if self.nu_shared {
                nu_fixed
            } else {
                m.nu_odd_moment(z, scale)?
            };
            if !v.is_finite() {
                return Err(FlowError::NonFinite {
                    what: "b_t sample",
                    t,
                    x: z,
                });
            }
            acc += w * v;
        }
        Ok(acc)
    }
}

fn finite(v: f64, what: &'static str, t: f64, x: f64) -> Result<f64, FlowError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(FlowError::NonFinite { what, t, x })
    }
}

pub fn mollified_drift(model: &ModelSpec, t: f64, x: f64, spec: MollifierSpec) -> Result<f64, FlowError> {
    DriftField::new(model, spec).eval(t, x)
}

/// Which end of `[0, t]` the time mesh is refined towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Start,
    End,
}

/// `s(u) = t u^γ` (or its mirror image), `u ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub t: f64,
    pub gamma: f64,
    pub side: Side,
}

impl Mesh {
    pub fn s(&self, u: f64) -> f64 {
        match self.side {
            Side::Start => self.t * u.powf(self.gamma),
            Side::End => self.t - self.t * (1.0 - u).powf(self.gamma),
        }
    }

    pub fn ds(&self, u: f64) -> f64 {
        let g = self.gamma;
        match self.side {
            Side::Start => self.t * g * u.powf(g - 1.0),
            Side::End => self.t * g * (1.0 - u).powf(g - 1.0),
        }
    }

    pub fn u(&self, s: f64) -> f64 {
        let r = (s / self.t).clamp(0.0, 1.0);
        match self.side {
            Side::Start => r.powf(1.0 / self.gamma),
            Side::End => 1.0 - (1.0 - r).powf(1.0 / self.gamma),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Initial step count; doubled until the endpoint settles when `adaptive`.
    pub n_steps: usize,
    /// Mesh exponent; `None` means `4·max(1, α)`.
    pub grading: Option<f64>,
    pub tol: f64,
    pub max_steps: usize,
    pub adaptive: bool,
    pub mollifier: MollifierSpec,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            n_steps: 32,
            grading: None,
            tol: 1e-9,
            max_steps: 1 << 14,
            adaptive: true,
            mollifier: MollifierSpec::default(),
        }
    }
}

impl FlowConfig {
    pub fn fixed(n_steps: usize) -> Self {
        FlowConfig {
            n_steps,
            adaptive: false,
            ..Self::default()
        }
    }

    pub fn grading_for(&self, alpha: f64) -> f64 {
        self.grading.unwrap_or(4.0 * alpha.max(1.0))
    }
}

/// Flow states on a graded mesh, interpolated by 4-point Lagrange cubics
/// in the mesh variable.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    mesh: Option<Mesh>,
}

fn lagrange4(nodes: [f64; 4], vals: [f64; 4], x: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        let mut w = 1.0;
        for j in 0..4 {
            if i != j {
                w *= (x - nodes[j]) / (nodes[i] - nodes[j]);
            }
        }
        acc += w * vals[i];
    }
    acc
}

impl Trajectory {
    pub fn from_points(times: Vec<f64>, states: Vec<f64>) -> Self {
        assert_eq!(times.len(), states.len());
        Trajectory {
            times,
            states,
            mesh: None,
        }
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn endpoint(&self) -> f64 {
        *self.states.last().unwrap()
    }

    pub fn start(&self) -> f64 {
        self.states[0]
    }

    pub fn eval(&self, s: f64) -> f64 {
        let n = self.times.len() - 1;
        if n < 3 {
            // too short for a cubic
            let j = self.times.partition_point(|&v| v < s).clamp(1, n);
            let (t0, t1) = (self.times[j - 1], self.times[j]);
            let w = ((s - t0) / (t1 - t0)).clamp(0.0, 1.0);
            return self.states[j - 1] * (1.0 - w) + self.states[j] * w;
        }
        let (pos, coord): (f64, Box<dyn Fn(usize) -> f64>) = match self.mesh {
            Some(m) => (m.u(s) * n as f64, Box::new(|j| j as f64)),
            None => {
                let j = self.times.partition_point(|&v| v < s).clamp(1, n);
                let t0 = self.times[j - 1];
                let frac = ((s - t0) / (self.times[j] - t0)).clamp(0.0, 1.0);
                (j as f64 - 1.0 + frac, Box::new(|j| self.times[j]))
            }
        };
        let j = (pos.floor() as usize).clamp(1, n - 2);
        let idx = [j - 1, j, j + 1, j + 2];
        let x = match self.mesh {
            Some(_) => pos,
            None => s,
        };
        lagrange4(idx.map(&coord), idx.map(|i| self.states[i]), x)
    }

    /// Two columns `s,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,value\n");
        for (t, v) in self.times.iter().zip(&self.states) {
            writeln!(out, "{t:e},{v:e}").unwrap();
        }
        out
    }
}

type Field<'f> = dyn Fn(f64, f64) -> Result<f64, FlowError> + 'f;

fn rk4(field: &Field, x0: f64, mesh: Mesh, n: usize) -> Result<Trajectory, FlowError> {
    let rhs = |u: f64, x: f64| -> Result<f64, FlowError> {
        let d = mesh.ds(u);
        if d == 0.0 {
            Ok(0.0)
        } else {
            Ok(field(mesh.s(u), x)? * d)
        }
    };
    let h = 1.0 / n as f64;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut x = x0;
    times.push(0.0);
    states.push(x0);
    for j in 0..n {
        let u = j as f64 * h;
        let k1 = rhs(u, x)?;
        let k2 = rhs(u + 0.5 * h, x + 0.5 * h * k1)?;
        let k3 = rhs(u + 0.5 * h, x + 0.5 * h * k2)?;
        let k4 = rhs(u + h, x + h * k3)?;
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        times.push(if j + 1 == n { mesh.t } else { mesh.s(u + h) });
        states.push(x);
    }
    Ok(Trajectory {
        times,
        states,
        mesh: Some(mesh),
    })
}

fn solve(field: &Field, x0: f64, mesh: Mesh, cfg: &FlowConfig) -> Result<Trajectory, FlowError> {
    if !(mesh.t > 0.0) {
        return Err(FlowError::Invalid(format!("horizon {} must be positive", mesh.t)));
    }
    let mut n = cfg.n_steps.max(4);
    let mut coarse = rk4(field, x0, mesh, n)?;
    if !cfg.adaptive {
        return Ok(coarse);
    }
    loop {
        let fine = rk4(field, x0, mesh, 2 * n)?;
        let change = (fine.endpoint() - coarse.endpoint()).abs();
        if change <= cfg.tol * fine.endpoint().abs().max(1.0) {
            return Ok(fine);
        }
        n *= 2;
        if 2 * n > cfg.max_steps {
            return Err(FlowError::NoConvergence { steps: n, change });
        }
        coarse = fine;
    }
}

impl DriftField<'_> {
    fn mesh(&self, t: f64, side: Side, cfg: &FlowConfig) -> Mesh {
        Mesh {
            t,
            gamma: cfg.grading_for(self.model.alpha),
            side,
        }
    }

    /// `dχ_s/ds = B_s(χ_s)`, `χ_0 = x`.
    pub fn chi(&self, x: f64, t: f64, cfg: &FlowConfig) -> Result<Trajectory, FlowError> {
        solve(&|s, v| self.eval(s, v), x, self.mesh(t, Side::Start, cfg), cfg)
    }

    /// `dκ_s/ds = −B_s(κ_s)`, `κ_0 = y`.
    pub fn kappa(&self, y: f64, t: f64, cfg: &FlowConfig) -> Result<Trajectory, FlowError> {
        solve(&|s, v| Ok(-self.eval(s, v)?), y, self.mesh(t, Side::Start, cfg), cfg)
    }

    /// `dχ^t_s/ds = B_{t−s}(χ^t_s)`, `χ^t_0 = x`.
    pub fn chi_t(&self, x: f64, t: f64, cfg: &FlowConfig) -> Result<Trajectory, FlowError> {
        solve(&|s, v| self.eval(t - s, v), x, self.mesh(t, Side::End, cfg), cfg)
    }

    /// Flow of the frozen field `B_t`: `dχ̄^t_s/ds = B_t(χ̄^t_s)`.
    pub fn chi_bar(&self, x: f64, t: f64, cfg: &FlowConfig) -> Result<Trajectory, FlowError> {
        let mesh = Mesh {
            t,
            gamma: 1.0,
            side: Side::Start,
        };
        solve(&|_, v| self.eval(t, v), x, mesh, cfg)
    }

    /// k-th Picard iterate `χ^{(k)}` on the graded mesh.
    pub fn picard(&self, x: f64, t: f64, k: usize, cfg: &FlowConfig) -> Result<Trajectory, FlowError> {
        let mesh = self.mesh(t, Side::Start, cfg);
        let n = cfg.n_steps.max(4);
        let mut cur = Trajectory {
            times: (0..=n).map(|j| mesh.s(j as f64 / n as f64)).collect(),
            states: vec![x; n + 1],
            mesh: Some(mesh),
        };
        *cur.times.last_mut().unwrap() = t;
        let gl = GaussLegendre::new(4);
        let h = 1.0 / n as f64;
        for _ in 0..k {
            let mut next = Vec::with_capacity(n + 1);
            let mut acc = x;
            next.push(acc);
            for j in 0..n {
                let (u0, u1) = (j as f64 * h, (j + 1) as f64 * h);
                let mut cell = 0.0;
                for (g, w) in gl.nodes.iter().zip(&gl.weights) {
                    let u = 0.5 * (u0 + u1) + 0.5 * h * g;
                    let s = mesh.s(u);
                    cell += 0.5 * h * w * self.eval(s, cur.eval(s))? * mesh.ds(u);
                }
                acc += cell;
                next.push(acc);
            }
            cur.states = next;
        }
        Ok(cur)
    }

    /// `ln(|κ_{t−s}(y) − χ^t_s(x)| / |κ_t(y) − x|)`; bounded by `C t^δ`
    /// in absolute value.
    pub fn sandwich_log_ratio(
        &self,
        x: f64,
        y: f64,
        s: f64,
        t: f64,
        cfg: &FlowConfig,
    ) -> Result<f64, FlowError> {
        let kappa = self.kappa(y, t, cfg)?;
        let chi_t = self.chi_t(x, t, cfg)?;
        let num = (kappa.eval(t - s) - chi_t.eval(s)).abs();
        let den = (kappa.endpoint() - x).abs();
        Ok((num / den).ln())
    }

    /// `sup_x |b_t(x) − B_t(x)|` over the grid.
    pub fn mollification_error(&self, t: f64, grid: &Grid) -> Result<f64, FlowError> {
        let mut worst: f64 = 0.0;
        for x in grid.points() {
            worst = worst.max((self.b_t(t, x)? - self.eval(t, x)?).abs());
        }
        Ok(worst)
    }

    /// Largest difference quotient of `B_t` between neighbouring grid points.
    pub fn lipschitz_estimate(&self, t: f64, grid: &Grid) -> Result<f64, FlowError> {
        let vals = grid
            .points()
            .into_iter()
            .map(|x| self.eval(t, x))
            .collect::<Result<Vec<_>, _>>()?;
        let h = grid.step();
        Ok(vals.windows(2).map(|w| (w[1] - w[0]).abs() / h).fold(0.0, f64::max))
    }
}

pub fn solve_chi(model: &ModelSpec, x: f64, t: f64, cfg: &FlowConfig) -> Result<Trajectory, FlowError> {
    DriftField::new(model, cfg.mollifier).chi(x, t, cfg)
}

pub fn solve_kappa(model: &ModelSpec, y: f64, t: f64, cfg: &FlowConfig) -> Result<Trajectory, FlowError> {
    DriftField::new(model, cfg.mollifier).kappa(y, t, cfg)
}

pub fn solve_chi_t(model: &ModelSpec, x: f64, t: f64, cfg: &FlowConfig) -> Result<Trajectory, FlowError> {
    DriftField::new(model, cfg.mollifier).chi_t(x, t, cfg)
}

pub fn solve_chi_bar(model: &ModelSpec, x: f64, t: f64, cfg: &FlowConfig) -> Result<Trajectory, FlowError> {
    DriftField::new(model, cfg.mollifier).chi_bar(x, t, cfg)
}

pub fn picard_regressor(
    model: &ModelSpec,
    x: f64,
    t: f64,
    k: usize,
    cfg: &FlowConfig,
) -> Result<f64, FlowError> {
    Ok(DriftField::new(model, cfg.mollifier).picard(x, t, k, cfg)?.endpoint())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(b: &str, rho: &str) -> ModelSpec {
        ModelSpec::from_sources(1.2, "1", rho, b).unwrap()
    }

    fn smooth() -> ModelSpec {
        ModelSpec::from_sources(1.2, "1+0.3*sin(x)", "0.5*cos(x)", "sin(x)").unwrap()
    }

    #[test]
    fn mollifier_preserves_affine_and_quadratics() {
        let spec = MollifierSpec::default();
        let c = model("2.5", "0");
        let lin = model("x", "0");
        let sq = model("x^2", "0");
        for &t in &[0.5, 0.01] {
            for &x in &[-1.0, 0.3] {
                assert!((mollified_drift(&c, t, x, spec).unwrap() - 2.5).abs() < 1e-12);
                assert!((mollified_drift(&lin, t, x, spec).unwrap() - x).abs() < 1e-12);
                // variance of the mollifier is t^{2/α}/2
                let s2 = f64::powf(t, 2.0 / 1.2) / 2.0;
                assert!((mollified_drift(&sq, t, x, spec).unwrap() - (x * x + s2)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trivial_flows() {
        let cfg = FlowConfig::default();
        let zero = model("0", "0");
        assert_eq!(solve_chi(&zero, 0.7, 0.5, &cfg).unwrap().endpoint(), 0.7);
        assert_eq!(solve_kappa(&zero, 0.7, 0.5, &cfg).unwrap().endpoint(), 0.7);
        let c = model("1.5", "0");
        assert!((solve_chi(&c, 0.7, 0.4, &cfg).unwrap().endpoint() - 1.3).abs() < 1e-9);
        assert!((solve_kappa(&c, 0.7, 0.4, &cfg).unwrap().endpoint() - 0.1).abs() < 1e-9);
        assert!((picard_regressor(&c, 0.7, 0.4, 3, &cfg).unwrap() - 1.3).abs() < 1e-9);
        assert_eq!(picard_regressor(&c, 0.7, 0.4, 0, &cfg).unwrap(), 0.7);
    }

    #[test]
    fn linear_drift_closed_form() {
        let cfg = FlowConfig::default();
        let m = model("-x", "0");
        for &(x, t) in &[(1.0, 1.0), (-2.5, 0.3), (0.4, 0.05)] {
            let chi = solve_chi(&m, x, t, &cfg).unwrap();
            assert!((chi.endpoint() - x * f64::exp(-t)).abs() < 1e-8);
            let kap = solve_kappa(&m, x, t, &cfg).unwrap();
            assert!((kap.endpoint() - x * f64::exp(t)).abs() < 1e-8);
            let back = solve_chi(&m, kap.endpoint(), t, &cfg).unwrap();
            assert!((back.endpoint() - x).abs() < 1e-7);
            let ct = solve_chi_t(&m, x, t, &cfg).unwrap();
            assert!((ct.endpoint() - chi.endpoint()).abs() < 1e-8);
            for &s in &[0.0, 0.3 * t, 0.8 * t] {
                assert!((ct.eval(s) - chi.eval(s)).abs() < 1e-7, "s={s}");
            }
            // Picard iterates approach the flow geometrically
            let errs: Vec<f64> = (1..6)
                .map(|k| (picard_regressor(&m, x, t, k, &cfg).unwrap() - chi.endpoint()).abs())
                .collect();
            for w in errs.windows(2) {
                assert!(w[1] < 0.7 * w[0] || w[1] < 1e-12, "{errs:?}");
            }
        }
    }

    #[test]
    fn smooth_model_refinement() {
        let m = smooth();
        let mut cfg = FlowConfig::default();
        for &t in &[0.4, 0.05] {
            let a = solve_chi(&m, 0.3, t, &cfg).unwrap();
            let n = a.times.len() - 1;
            cfg.n_steps = 2 * n;
            cfg.adaptive = false;
            let b = solve_chi(&m, 0.3, t, &cfg).unwrap();
            assert!((a.endpoint() - b.endpoint()).abs() < 1e-8 * a.endpoint().abs().max(1.0));
            cfg = FlowConfig::default();
            let k = solve_kappa(&m, 0.3, t, &cfg).unwrap();
            let ct = solve_chi_t(&m, k.endpoint(), t, &cfg).unwrap();
            assert!((ct.endpoint() - 0.3).abs() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn alpha_one_log_singularity() {
        let m = ModelSpec::from_sources(1.0, "1", "0.5*cos(x)", "0").unwrap();
        let cfg = FlowConfig::default();
        let a = solve_chi(&m, 0.2, 0.3, &cfg).unwrap();
        let k = solve_kappa(&m, a.endpoint(), 0.3, &cfg).unwrap();
        let back = solve_chi_t(&m, k.endpoint(), 0.3, &cfg);
        assert!(back.is_ok());
        assert!(a.endpoint().is_finite());
    }

    #[test]
    fn trajectory_interpolation_and_csv() {
        let m = model("-x", "0");
        let chi = solve_chi(&m, 1.0, 1.0, &FlowConfig::default()).unwrap();
        for &s in &[0.013, 0.25, 0.5, 0.99] {
            assert!((chi.eval(s) - f64::exp(-s)).abs() < 1e-7, "s={s}");
        }
        let csv = chi.to_csv();
        assert!(csv.starts_with("s,value\n0e0,1e0\n"));
        assert_eq!(csv.lines().count(), chi.times.len() + 1);
        assert_eq!(chi.times[0], 0.0);
        assert_eq!(chi.horizon(), 1.0);
    }
}
