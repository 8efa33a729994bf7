//! Parametrix construction on grids: the error kernel `Φ = (L − ∂_t)p⁰`, the
//! resolvent series `Ψ = Σ Φ^{⋆k}` and the corrected density `p = p⁰ + p⁰⋆Ψ`.
//!
//! Every field lives on fixed x-rows and a uniform y-grid that contains the
//! rows as nodes. Time-space convolutions use a uniform time grid
//! `τ_m = m t / M`; narrow kernels are integrated against piecewise-linear
//! hats on a locally refined grid, so the scheme stays meaningful when
//! `s^{1/α}` drops below the grid step.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expr;
use crate::flows::{DriftField, FlowConfig, FlowError, MollifierSpec, Trajectory};
use crate::grid::Grid;
use crate::kernels::{g_abg, residual_bound_params, KernelError, KernelParams};
use crate::model::{ModelError, ModelSpec, ResidualKernel};
use crate::quad::GaussLegendre;
use crate::regression::{averages_along, regression_law, RegressionConfig, RegressionError};
use crate::stable::{Reduction, StableError, StableParams, StableTable, TableFn};

#[derive(Debug, Error)]
pub enum ParametrixError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Stable(#[from] StableError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("invalid parametrix input: {0}")]
    Invalid(String),
    #[error("non-finite {what} at x={x}, y={y}")]
    NonFinite { what: &'static str, x: f64, y: f64 },
}

type Result<T> = std::result::Result<T, ParametrixError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    /// x-rows of every field.
    pub rows: Grid,
    /// y-nodes per `t^{1/α}`.
    pub resolution: f64,
    /// The y-grid extends `width_base + width_scale·t^{1/α}` beyond the rows
    /// and their flow images.
    pub width_base: f64,
    pub width_scale: f64,
    pub flow_steps: usize,
    pub avg_cells: usize,
    /// Half-width of refined windows, in units of `s^{1/α}`.
    pub window: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            rows: Grid::new(-PI, PI, 9),
            resolution: 6.0,
            width_base: 5.0,
            width_scale: 20.0,
            flow_steps: 32,
            avg_cells: 24,
            window: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SeriesConfig {
    /// Truncation order `K`.
    pub k: usize,
    pub n_time_nodes: usize,
    pub tail_bound_report: bool,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        SeriesConfig {
            k: 3,
            n_time_nodes: 16,
            tail_bound_report: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ParametrixConfig {
    pub field: FieldConfig,
    pub series: SeriesConfig,
}

impl FieldConfig {
    fn flow(&self) -> FlowConfig {
        FlowConfig::fixed(self.flow_steps)
    }

    fn regression(&self) -> RegressionConfig {
        RegressionConfig {
            flow: self.flow(),
            cells: self.avg_cells,
            inversion_fast: true,
        }
    }
}

/// Values on `rows × y`, row-major, with power-law tails beyond the y-grid.
#[derive(Debug, Clone, Serialize)]
pub struct DensityField {
    pub t: f64,
    pub rows: Grid,
    pub y: Grid,
    pub values: Vec<f64>,
    /// Tail centre of each row, `χ_t(x_i)`.
    pub centers: Vec<f64>,
    /// Values beyond the grid decay like `|y − centre|^{-tail_exponent}`.
    pub tail_exponent: f64,
}

impl DensityField {
    pub fn zeros(t: f64, rows: Grid, y: Grid, centers: Vec<f64>, tail_exponent: f64) -> Self {
        DensityField {
            t,
            values: vec![0.0; rows.n * y.n],
            rows,
            y,
            centers,
            tail_exponent,
        }
    }

    fn like(&self) -> Self {
        Self::zeros(self.t, self.rows, self.y, self.centers.clone(), self.tail_exponent)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.y.n..(i + 1) * self.y.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.y.n + j]
    }

    fn tail_value(&self, i: usize, y: f64) -> f64 {
        let row = self.row(i);
        let (edge, v) = if y < self.y.x_min {
            (self.y.x_min, row[0])
        } else {
            (self.y.x_max, row[self.y.n - 1])
        };
        let c = self.centers[i];
        let d0 = (edge - c).abs().max(self.y.step());
        v * ((y - c).abs() / d0).max(1.0).powf(-self.tail_exponent)
    }

    fn row_value(&self, i: usize, y: f64) -> f64 {
        if y < self.y.x_min || y > self.y.x_max {
            return self.tail_value(i, y);
        }
        let h = self.y.step();
        let pos = (y - self.y.x_min) / h;
        let j = (pos.floor() as usize).min(self.y.n - 2);
        let f = pos - j as f64;
        self.get(i, j) * (1.0 - f) + self.get(i, j + 1) * f
    }

    /// Bilinear interpolation; rows are clamped, y beyond the grid uses the tail model.
    pub fn interp(&self, x: f64, y: f64) -> f64 {
        if self.rows.n == 1 {
            return self.row_value(0, y);
        }
        let pos = ((x - self.rows.x_min) / self.rows.step()).clamp(0.0, (self.rows.n - 1) as f64);
        let i = (pos.floor() as usize).min(self.rows.n - 2);
        let f = pos - i as f64;
        self.row_value(i, y) * (1.0 - f) + self.row_value(i + 1, y) * f
    }

    fn tails(&self, i: usize, abs: bool) -> f64 {
        let row = self.row(i);
        let c = self.centers[i];
        let h = self.y.step();
        let p = self.tail_exponent;
        let side = |v: f64, edge: f64| {
            let v = if abs { v.abs() } else { v };
            v * (edge - c).abs().max(h) / (p - 1.0)
        };
        side(row[0], self.y.x_min) + side(row[self.y.n - 1], self.y.x_max)
    }

    /// `∫ f(x_i, y) dy`, trapezoid plus the analytic tail.
    pub fn row_integral(&self, i: usize) -> f64 {
        trapezoid(self.row(i), self.y.step()) + self.tails(i, false)
    }

    /// `∫ |f(x_i, y)| dy`.
    pub fn row_l1(&self, i: usize) -> f64 {
        let h = self.y.step();
        let row = self.row(i);
        let body: f64 = row.iter().map(|v| v.abs()).sum::<f64>()
            - 0.5 * (row[0].abs() + row[row.len() - 1].abs());
        body * h + self.tails(i, true)
    }

    pub fn sup_row_l1(&self) -> f64 {
        (0..self.rows.n).map(|i| self.row_l1(i)).fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &DensityField) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    fn sub(&self, other: &DensityField) -> DensityField {
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a -= b;
        }
        out
    }

    /// `t,x,y,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,value\n");
        for i in 0..self.rows.n {
            let x = self.rows.point(i);
            for j in 0..self.y.n {
                writeln!(out, "{:e},{x:e},{:e},{:e}", self.t, self.y.point(j), self.get(i, j)).unwrap();
            }
        }
        out
    }
}

fn trapezoid(v: &[f64], h: f64) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    (v.iter().sum::<f64>() - 0.5 * (v[0] + v[v.len() - 1])) * h
}

/// `Φ_t(x, y)` split into its three parts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhiParts {
    pub drift: f64,
    pub alpha: f64,
    pub nu: f64,
    /// `Φ^{ν,large,+}`, kept for the `Q_t` diagnostic.
    pub large_plus: f64,
}

impl PhiParts {
    pub fn total(&self) -> f64 {
        self.drift + self.alpha + self.nu
    }
}

/// Zero-order data of one y-column at one time.
#[derive(Debug, Clone, Copy, Default)]
struct Column {
    kappa: f64,
    k: f64,
    shift: f64,
    asym_d: f64,
    rho: f64,
    /// `B_s(κ_s(y))`
    drift: f64,
    lam: f64,
    lamrho: f64,
}

impl Column {
    fn red(&self) -> Reduction {
        Reduction {
            k: self.k,
            shift: self.shift,
            asym_d: self.asym_d,
        }
    }

    fn combine(cs: [&Column; 4], w: [f64; 4]) -> Column {
        let f = |g: fn(&Column) -> f64| (0..4).map(|i| w[i] * g(cs[i])).sum::<f64>();
        Column {
            kappa: f(|c| c.kappa),
            k: f(|c| c.k),
            shift: f(|c| c.shift),
            asym_d: f(|c| c.asym_d),
            rho: f(|c| c.rho).clamp(-1.0, 1.0),
            drift: f(|c| c.drift),
            lam: f(|c| c.lam),
            lamrho: f(|c| c.lamrho),
        }
    }
}

/// Coefficients of `L` at a point `z`.
#[derive(Debug, Clone, Copy)]
struct RowCoef {
    b: f64,
    lam: f64,
    lamrho: f64,
    nu_mass: f64,
}

fn column_at(
    model: &ModelSpec,
    field: &DriftField,
    traj: &Trajectory,
    s: f64,
    rcfg: &RegressionConfig,
) -> Result<Column> {
    let kz = traj.eval(s);
    let av = averages_along(model, traj, s, rcfg)?;
    let p = StableParams::new(model.alpha, av.lambda_t, av.rho_t, av.upsilon_t)?;
    let red = Reduction::new(&p);
    let lam = model.lambda_at(kz);
    Ok(Column {
        kappa: kz,
        k: red.k,
        shift: red.shift,
        asym_d: red.asym_d,
        rho: av.rho_t,
        drift: field.eval(s, kz)?,
        lam,
        lamrho: lam * model.rho_at(kz),
    })
}

/// Evaluation context for one time `s`.
struct Slice<'a> {
    model: &'a ModelSpec,
    table: &'a StableTable,
    s: f64,
    a: f64,
    nu_mass_const: Option<f64>,
    gl: &'a GaussLegendre,
}

fn nu_uses_x(nu: &ResidualKernel) -> bool {
    match nu {
        ResidualKernel::None => false,
        ResidualKernel::Density { q, .. } => q.uses_x(),
        ResidualKernel::PointMasses(atoms) => atoms.iter().any(|a| a.position.uses_x() || a.weight.uses_x()),
    }
}

impl<'a> Slice<'a> {
    fn new(model: &'a ModelSpec, table: &'a StableTable, s: f64, gl: &'a GaussLegendre) -> Result<Self> {
        let a = s.powf(1.0 / model.alpha);
        let nu_mass_const = if nu_uses_x(model.nu()) {
            None
        } else {
            Some(model.nu_tail_mass(0.0, a)?)
        };
        Ok(Slice {
            model,
            table,
            s,
            a,
            nu_mass_const,
            gl,
        })
    }

    fn coef(&self, z: f64) -> Result<RowCoef> {
        let m = self.model;
        let lam = m.lambda_at(z);
        let nu_mass = match self.nu_mass_const {
            Some(v) => v,
            None => m.nu_tail_mass(z, self.a)?,
        };
        Ok(RowCoef {
            b: m.partially_compensated_drift(self.s, z)?,
            lam,
            lamrho: lam * m.rho_at(z),
            nu_mass,
        })
    }

    fn p0(&self, c: &Column, z: f64) -> f64 {
        self.table.eval_reduced(TableFn::G, c.rho, &c.red(), (c.kappa - z) / self.a) / self.a
    }

    fn phi(&self, c: &Column, r: &RowCoef, z: f64) -> PhiParts {
        let red = c.red();
        let a = self.a;
        let w = (c.kappa - z) / a;
        let v = self.table.eval_all(c.rho, &red, w);
        let drift = (r.b - c.drift) * (-v[1] / (a * a));
        let alpha = ((r.lam - c.lam) * v[3] - (r.lamrho - c.lamrho) * v[4]) / (a * self.s);
        let (nu, large_plus) = self.phi_nu(c, &red, r, z, w, v[0], v[1]);
        PhiParts {
            drift,
            alpha,
            nu,
            large_plus,
        }
    }

    /// Returns `(Φ^ν, Φ^{ν,large,+})`.
    #[allow(clippy::too_many_arguments)]
    fn phi_nu(&self, c: &Column, red: &Reduction, r: &RowCoef, z: f64, w: f64, g0: f64, g1: f64) -> (f64, f64) {
        let a = self.a;
        let g = |wp: f64| self.table.eval_reduced(TableFn::G, c.rho, red, wp);
        match self.model.nu() {
            ResidualKernel::None => (0.0, 0.0),
            ResidualKernel::PointMasses(atoms) => {
                let (mut small, mut plus, mut minus) = (0.0, 0.0, 0.0);
                for atom in atoms {
                    let u = atom.position.eval_x(z);
                    let wt = atom.weight.eval_x(z);
                    let v = u / a;
                    if u.abs() <= a {
                        small += wt * (g(w - v) - g0 + v * g1) / a;
                    } else {
                        plus += wt * g(w - v) / a;
                        minus += wt * g0 / a;
                    }
                }
                (small + plus - minus, plus)
            }
            ResidualKernel::Density { q, .. } => {
                // v = ±r² on each side of the compensated window |u| ≤ a
                let mut small = 0.0;
                for (x, wx) in self.gl.nodes.iter().zip(&self.gl.weights) {
                    let rr = 0.5 * (x + 1.0);
                    let v = rr * rr;
                    let jac = 0.5 * wx * 2.0 * rr;
                    for sg in [1.0, -1.0] {
                        let vv = sg * v;
                        small += jac * (g(w - vv) - g0 + vv * g1) * q.eval(z, a * vv);
                    }
                }
                let plus = self.large_plus(q, &g, z, w);
                (small + plus - g0 / a * r.nu_mass, plus)
            }
        }
    }

    /// `∫_{|u|>a} p⁰(z+u, y) q(z, u) du` in the variable `u = ±a e^θ`.
    fn large_plus(&self, q: &Expr, g: &dyn Fn(f64) -> f64, z: f64, w: f64) -> f64 {
        let a = self.a;
        let theta_max = (1e3 / a).max(8.0 * w.abs() + 8.0).ln();
        let mut total = 0.0;
        for sg in [1.0, -1.0] {
            let mut br = vec![0.0, theta_max];
            if a < 1.0 {
                br.push(-a.ln());
            }
            let c0 = sg * w;
            if c0 > 1.0 {
                for k in [-16.0, -4.0, -1.0, 0.0, 1.0, 4.0, 16.0] {
                    let e: f64 = c0 + k;
                    if e > 1.0 {
                        br.push(e.ln());
                    }
                }
            }
            br.retain(|&b| (0.0..=theta_max).contains(&b));
            br.sort_by(f64::total_cmp);
            br.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
            for p in br.windows(2) {
                let len = p[1] - p[0];
                let pieces = (len / 1.5).ceil().max(1.0) as usize;
                let step = len / pieces as f64;
                for k in 0..pieces {
                    let lo = p[0] + k as f64 * step;
                    total += self.gl.integrate(lo, lo + step, |th| {
                        let e = th.exp();
                        g(w - sg * e) * q.eval(z, sg * a * e) * e
                    });
                }
            }
        }
        total
    }
}

fn kappa_trajectories(model: &ModelSpec, ys: &[f64], t: f64, fcfg: &FieldConfig) -> Result<Vec<Trajectory>> {
    let field = DriftField::new(model, MollifierSpec::default());
    let flow = fcfg.flow();
    ys.par_iter()
        .map(|&y| Ok(field.kappa(y, t, &flow)?))
        .collect()
}

fn columns_at(
    model: &ModelSpec,
    trajs: &[Trajectory],
    s: f64,
    fcfg: &FieldConfig,
) -> Result<Vec<Column>> {
    let field = DriftField::new(model, MollifierSpec::default());
    let rcfg = fcfg.regression();
    trajs
        .par_iter()
        .map(|tr| column_at(model, &field, tr, s, &rcfg))
        .collect()
}

/// Cubic interpolation of column data at an off-grid `y`.
fn column_interp(cols: &[Column], y_grid: &Grid, y: f64) -> Column {
    let n = cols.len();
    let pos = ((y - y_grid.x_min) / y_grid.step()).clamp(0.0, (n - 1) as f64);
    let j = (pos.floor() as usize).clamp(1, n - 3);
    let f = pos - j as f64;
    let (a, b, c, d) = (f + 1.0, f, f - 1.0, f - 2.0);
    let w = [-b * c * d / 6.0, a * c * d / 2.0, -a * b * d / 2.0, a * b * c / 6.0];
    Column::combine([&cols[j - 1], &cols[j], &cols[j + 1], &cols[j + 2]], w)
}

fn tail_exponent(model: &ModelSpec) -> f64 {
    match model.nu() {
        ResidualKernel::Density { gamma, .. } => 1.0 + model.alpha.min(*gamma),
        _ => 1.0 + model.alpha,
    }
}

/// Rows, y-grid and row positions on it.
#[derive(Debug, Clone)]
struct Layout {
    rows: Grid,
    y: Grid,
    row_index: Vec<usize>,
    /// `χ_τ(x_i)` trajectories of the rows.
    chi: Vec<Trajectory>,
}

impl Layout {
    fn new(model: &ModelSpec, t: f64, fcfg: &FieldConfig) -> Result<Self> {
        let rows = fcfg.rows;
        if !rows.is_valid() || !(fcfg.resolution > 0.0) {
            return Err(ParametrixError::Invalid(format!("bad rows {rows:?} or resolution")));
        }
        if !(t > 0.0) {
            return Err(ParametrixError::Invalid(format!("time {t} must be positive")));
        }
        let field = DriftField::new(model, MollifierSpec::default());
        let flow = fcfg.flow();
        let chi: Vec<Trajectory> = rows
            .points()
            .par_iter()
            .map(|&x| Ok(field.chi(x, t, &flow)?))
            .collect::<Result<_>>()?;
        let a = t.powf(1.0 / model.alpha);
        let h0 = a / fcfg.resolution;
        let (h, q) = if rows.n > 1 {
            let q = (rows.step() / h0).ceil().max(1.0) as usize;
            (rows.step() / q as f64, q)
        } else {
            (h0, 0)
        };
        let half = fcfg.width_base + fcfg.width_scale * a;
        let ends = chi.iter().map(|c| c.endpoint());
        let lo = ends.clone().fold(rows.x_min, f64::min) - half;
        let hi = ends.fold(rows.x_max, f64::max) + half;
        let n_l = ((rows.x_min - lo) / h).ceil() as usize;
        let n_r = ((hi - rows.x_max) / h).ceil() as usize;
        let n = n_l + (rows.n - 1) * q + n_r + 1;
        let y_min = rows.x_min - n_l as f64 * h;
        let y = Grid::new(y_min, y_min + (n - 1) as f64 * h, n);
        let row_index = (0..rows.n).map(|i| n_l + i * q).collect();
        Ok(Layout { rows, y, row_index, chi })
    }

    fn centers(&self, s: f64) -> Vec<f64> {
        self.chi.iter().map(|c| c.eval(s)).collect()
    }
}

/// Hat masses `∫ f φ_j` and `∫|f|` for a function that may be narrower than
/// the grid step near `center`.
fn refined_masses(
    values: &[f64],
    y: &Grid,
    f: &(dyn Fn(f64) -> f64 + Sync),
    center: f64,
    width: f64,
    window: f64,
) -> (Vec<f64>, f64) {
    let h = y.step();
    let mut masses: Vec<f64> = values.iter().map(|v| v * h).collect();
    let mut l1 = trapezoid(&values.iter().map(|v| v.abs()).collect::<Vec<_>>(), h);
    if width >= 2.0 * h {
        return (masses, l1);
    }
    let n = y.n;
    let r = window * width + 2.0 * h;
    let c0 = (((center - r - y.x_min) / h).floor().max(0.0) as usize).min(n - 2);
    let c1 = (((center + r - y.x_min) / h).ceil().max(0.0) as usize).min(n - 1);
    let q = ((4.0 * h / width).ceil() as usize).clamp(2, 256);
    let hf = h / q as f64;
    for i in c0..c1 {
        let z0 = y.point(i);
        let (mut m0, mut m1, mut fine_abs) = (0.0, 0.0, 0.0);
        for k in 0..=q {
            let v = if k == 0 {
                values[i]
            } else if k == q {
                values[i + 1]
            } else {
                f(z0 + k as f64 * hf)
            };
            let wt = if k == 0 || k == q { 0.5 * hf } else { hf };
            let phi = 1.0 - k as f64 / q as f64;
            m0 += wt * phi * v;
            m1 += wt * (1.0 - phi) * v;
            fine_abs += wt * v.abs();
        }
        masses[i] += m0 - 0.5 * h * values[i];
        masses[i + 1] += m1 - 0.5 * h * values[i + 1];
        l1 += fine_abs - 0.5 * h * (values[i].abs() + values[i + 1].abs());
    }
    (masses, l1)
}

/// `Φ_s` on the y-grid: point values `V[z][y]` and hat-projected weights
/// `W[z][y] = ∫ φ_z(z') Φ_s(z', y) dz'`.
struct KernelSlab {
    s: f64,
    cols: Vec<Column>,
    coefs: Vec<RowCoef>,
    v: Vec<f64>,
    w: Vec<f64>,
}

fn build_slab(
    model: &ModelSpec,
    table: &StableTable,
    gl: &GaussLegendre,
    layout: &Layout,
    cols: Vec<Column>,
    s: f64,
    fcfg: &FieldConfig,
) -> Result<KernelSlab> {
    let y = &layout.y;
    let n = y.n;
    let h = y.step();
    let slice = Slice::new(model, table, s, gl)?;
    let coefs: Vec<RowCoef> = (0..n)
        .into_par_iter()
        .map(|i| slice.coef(y.point(i)))
        .collect::<Result<_>>()?;
    let mut v = vec![0.0; n * n];
    v.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let z = y.point(i);
        for (j, out) in row.iter_mut().enumerate() {
            *out = slice.phi(&cols[j], &coefs[i], z).total();
        }
    });
    if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
        return Err(ParametrixError::NonFinite {
            what: "Phi",
            x: y.point(bad / n),
            y: y.point(bad % n),
        });
    }
    let mut w: Vec<f64> = v.iter().map(|x| x * h).collect();
    let a = slice.a;
    if a < 2.0 * h {
        let fixes: Vec<Vec<(usize, f64)>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let col = &cols[j];
                let column: Vec<f64> = (0..n).map(|i| v[i * n + j]).collect();
                let f = |z: f64| match slice.coef(z) {
                    Ok(r) => slice.phi(col, &r, z).total(),
                    Err(_) => f64::NAN,
                };
                let (m, _) = refined_masses(&column, y, &f, col.kappa, a, fcfg.window);
                m.iter()
                    .enumerate()
                    .filter(|(i, mi)| **mi != column[*i] * h)
                    .map(|(i, mi)| (i, *mi))
                    .collect()
            })
            .collect();
        for (j, list) in fixes.into_iter().enumerate() {
            for (i, m) in list {
                w[i * n + j] = m;
            }
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(ParametrixError::NonFinite {
                what: "projected Phi",
                x: f64::NAN,
                y: f64::NAN,
            });
        }
    }
    Ok(KernelSlab { s, cols, coefs, v, w })
}

/// `out += wt · left · M` for a row vector `left` and row-major `M`.
fn accumulate(out: &mut [f64], left: &[f64], mat: &[f64], wt: f64) {
    let n = out.len();
    for (z, &l) in left.iter().enumerate() {
        let c = wt * l;
        if c == 0.0 {
            continue;
        }
        for (o, m) in out.iter_mut().zip(&mat[z * n..(z + 1) * n]) {
            *o += c * m;
        }
    }
}

/// Rows of one field family member (`n_rows × n_y`).
type Rows = Vec<Vec<f64>>;

fn sup_l1(rows: &Rows, masses_l1: Option<&[f64]>, layout: &Layout, s: f64, tail_p: f64) -> f64 {
    let f = rows_to_field(rows, layout, s, tail_p);
    (0..rows.len())
        .map(|i| {
            let base = f.row_l1(i);
            match masses_l1 {
                Some(l) => base - trapezoid(&rows[i].iter().map(|v| v.abs()).collect::<Vec<_>>(), f.y.step()) + l[i],
                None => base,
            }
        })
        .fold(0.0, f64::max)
}

fn rows_to_field(rows: &Rows, layout: &Layout, s: f64, tail_p: f64) -> DensityField {
    let mut f = DensityField::zeros(s, layout.rows, layout.y, layout.centers(s), tail_p);
    for (i, r) in rows.iter().enumerate() {
        f.values[i * layout.y.n..(i + 1) * layout.y.n].copy_from_slice(r);
    }
    f
}

/// Sup-norm of the `Q_t` diagnostic and `Φ_t` on a rows × y grid.
#[derive(Debug, Clone, Serialize)]
pub struct PhiField {
    pub phi: DensityField,
    pub drift: DensityField,
    pub alpha: DensityField,
    pub nu: DensityField,
    /// `sup_x ∫ |Φ_t(x, y)| dy`
    pub sup_l1: f64,
    /// `sup_x ∫ t^{β/α} |Φ^{ν,large,+}_t(x, y)| dy`
    pub q_sup: f64,
}

/// `Φ_t = Φ^drift + Φ^(α) + Φ^ν` on the configured rows.
pub fn phi_total(model: &ModelSpec, t: f64, cfg: &FieldConfig) -> Result<PhiField> {
    let layout = Layout::new(model, t, cfg)?;
    let table = StableTable::shared(model.alpha)?;
    let gl = GaussLegendre::new(6);
    let ys = layout.y.points();
    let trajs = kappa_trajectories(model, &ys, t, cfg)?;
    let cols = columns_at(model, &trajs, t, cfg)?;
    let slice = Slice::new(model, &table, t, &gl)?;
    let tail_p = tail_exponent(model);
    let centers = layout.centers(t);
    let blank = DensityField::zeros(t, layout.rows, layout.y, centers, tail_p);
    let (mut phi, mut drift, mut alpha, mut nu, mut qf) =
        (blank.clone(), blank.clone(), blank.clone(), blank.clone(), blank);
    let n = layout.y.n;
    let parts: Vec<Vec<PhiParts>> = layout
        .rows
        .points()
        .par_iter()
        .map(|&x| {
            let r = slice.coef(x)?;
            Ok(cols.iter().map(|c| slice.phi(c, &r, x)).collect())
        })
        .collect::<Result<_>>()?;
    let tq = t.powf(model.beta_activity / model.alpha);
    for (i, row) in parts.iter().enumerate() {
        for (j, p) in row.iter().enumerate() {
            let k = i * n + j;
            phi.values[k] = p.total();
            drift.values[k] = p.drift;
            alpha.values[k] = p.alpha;
            nu.values[k] = p.nu;
            qf.values[k] = tq * p.large_plus.abs();
        }
    }
    if !phi.is_finite() {
        return Err(ParametrixError::NonFinite {
            what: "Phi",
            x: f64::NAN,
            y: f64::NAN,
        });
    }
    Ok(PhiField {
        sup_l1: phi.sup_row_l1(),
        q_sup: qf.sup_row_l1(),
        phi,
        drift,
        alpha,
        nu,
    })
}

fn pointwise(model: &ModelSpec, t: f64, x: f64, y: f64, cfg: &FieldConfig) -> Result<PhiParts> {
    if !(t > 0.0 && t <= model.horizon) {
        return Err(ParametrixError::Invalid(format!("need 0 < t <= {}, got {t}", model.horizon)));
    }
    let table = StableTable::shared(model.alpha)?;
    let gl = GaussLegendre::new(6);
    let field = DriftField::new(model, MollifierSpec::default());
    let traj = field.kappa(y, t, &cfg.flow())?;
    let col = column_at(model, &field, &traj, t, &cfg.regression())?;
    let slice = Slice::new(model, &table, t, &gl)?;
    let r = slice.coef(x)?;
    Ok(slice.phi(&col, &r, x))
}

/// `(b_t(x) − B_t(κ_t(y))) ∂_x p⁰_t(x, y)`.
pub fn phi_drift(model: &ModelSpec, t: f64, x: f64, y: f64, cfg: &FieldConfig) -> Result<f64> {
    Ok(pointwise(model, t, x, y, cfg)?.drift)
}

/// Coefficient-difference term of the stable part.
pub fn phi_alpha(model: &ModelSpec, t: f64, x: f64, y: f64, cfg: &FieldConfig) -> Result<f64> {
    Ok(pointwise(model, t, x, y, cfg)?.alpha)
}

/// Residual-kernel term `(L^ν p⁰_t(·, y))(x)`.
pub fn phi_nu(model: &ModelSpec, t: f64, x: f64, y: f64, cfg: &FieldConfig) -> Result<f64> {
    Ok(pointwise(model, t, x, y, cfg)?.nu)
}

/// `p⁰_t(x, y)` through the tables, for cross-checks.
pub fn zero_order_tabulated(model: &ModelSpec, t: f64, x: f64, y: f64, cfg: &FieldConfig) -> Result<f64> {
    let table = StableTable::shared(model.alpha)?;
    let gl = GaussLegendre::new(6);
    let field = DriftField::new(model, MollifierSpec::default());
    let traj = field.kappa(y, t, &cfg.flow())?;
    let col = column_at(model, &field, &traj, t, &cfg.regression())?;
    Ok(Slice::new(model, &table, t, &gl)?.p0(&col, x))
}

/// A family of square kernels `K_{τ_m}(z, y)` on one grid, `τ_m = m t / M`,
/// `m = 1..=M`, stored row-major.
#[derive(Debug, Clone)]
pub struct KernelFamily {
    pub grid: Grid,
    pub t: f64,
    pub mats: Vec<Vec<f64>>,
}

impl KernelFamily {
    pub fn from_fn(grid: Grid, t: f64, m: usize, f: impl Fn(f64, f64, f64) -> f64 + Sync) -> Self {
        let pts = grid.points();
        let mats = (1..=m)
            .map(|k| {
                let s = t * k as f64 / m as f64;
                let mut mat = vec![0.0; grid.n * grid.n];
                mat.par_chunks_mut(grid.n).enumerate().for_each(|(i, row)| {
                    for (j, o) in row.iter_mut().enumerate() {
                        *o = f(s, pts[i], pts[j]);
                    }
                });
                mat
            })
            .collect();
        KernelFamily { grid, t, mats }
    }

    fn step(&self) -> f64 {
        self.t / self.mats.len() as f64
    }
}

/// Time weights of `∫_0^{τ_m} F(s) ds` on the nodes `s = τ_j`, `1 ≤ j < m`,
/// open at both ends.
fn open_weights(m: usize, dt: f64) -> Vec<(usize, f64)> {
    match m {
        0 | 1 => Vec::new(),
        2 => vec![(1, 2.0 * dt)],
        _ => (1..m)
            .map(|j| (j, if j == 1 || j == m - 1 { 1.5 * dt } else { dt }))
            .collect(),
    }
}

/// Time weights for the `p⁰`-type convolution: open at `s = 0`, closed at `s = τ_m`.
fn half_open_weights(m: usize, dt: f64) -> Vec<(usize, f64)> {
    if m == 1 {
        return vec![(1, dt)];
    }
    (1..=m)
        .map(|j| {
            let w = if j == 1 {
                1.5 * dt
            } else if j == m {
                0.5 * dt
            } else {
                dt
            };
            (j, w)
        })
        .collect()
}

/// `(f ⋆ g)_t(x, y) = ∫_0^t ∫ f_{t−s}(x, z) g_s(z, y) dz ds` with trapezoid
/// in `z` and the open uniform rule in `s`.
pub fn time_space_convolve(f: &KernelFamily, g: &KernelFamily) -> Result<DensityField> {
    if f.grid != g.grid || f.mats.len() != g.mats.len() || (f.t - g.t).abs() > 1e-14 * f.t {
        return Err(ParametrixError::Invalid("families must share grid and time nodes".into()));
    }
    let n = f.grid.n;
    let m = f.mats.len();
    let h = f.grid.step();
    let dt = f.step();
    let mut out = DensityField::zeros(f.t, f.grid, f.grid, f.grid.points(), 2.0);
    out.values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, wt) in open_weights(m, dt) {
            let left = &f.mats[m - j - 1][i * n..(i + 1) * n];
            accumulate(row, left, &g.mats[j - 1], wt * h);
        }
    });
    Ok(out)
}

/// Norm diagnostics of the truncated series.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesReport {
    pub t: f64,
    pub delta: f64,
    pub times: Vec<f64>,
    /// `[k−1][m]`: `sup_x ∫|Φ^{⋆k}_{τ_m}(x, y)| dy`.
    pub phi_norms: Vec<Vec<f64>>,
    /// `sup_x ∫|(p⁰⋆Φ^{⋆k})_t| dy`.
    pub correction_norms: Vec<f64>,
    /// `C` fitted from `k = 1` over all time nodes.
    pub fitted_c: f64,
    /// Largest ratio of `Φ^{⋆k}` norms to the envelope with `fitted_c`.
    pub envelope_ratio: Vec<f64>,
    /// Envelope sum of the omitted terms `k > K` at time `t`.
    pub tail_bound: Option<f64>,
    pub diverging: bool,
    pub phi_norm: f64,
    pub r_norm: f64,
    pub residual_norm: f64,
    pub mass_error: f64,
    pub min_value: f64,
}

impl SeriesReport {
    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k}={v}").unwrap();
        kv("t", format!("{:e}", self.t));
        kv("delta", format!("{:e}", self.delta));
        kv("phi_norm", format!("{:e}", self.phi_norm));
        for (k, row) in self.phi_norms.iter().enumerate() {
            kv(&format!("phi_star_{}_norm", k + 1), format!("{:e}", row.last().copied().unwrap_or(0.0)));
        }
        for (k, v) in self.correction_norms.iter().enumerate() {
            kv(&format!("p0_star_phi_{}_norm", k + 1), format!("{v:e}"));
        }
        kv("fitted_c", format!("{:e}", self.fitted_c));
        for (k, v) in self.envelope_ratio.iter().enumerate() {
            kv(&format!("envelope_ratio_{}", k + 1), format!("{v:e}"));
        }
        if let Some(b) = self.tail_bound {
            kv("tail_bound", format!("{b:e}"));
        }
        kv("diverging", self.diverging.to_string());
        kv("r_norm", format!("{:e}", self.r_norm));
        kv("residual_norm", format!("{:e}", self.residual_norm));
        kv("mass_error", format!("{:e}", self.mass_error));
        kv("min_value", format!("{:e}", self.min_value));
        out
    }
}

/// `t^{−1+kδ} C^k Γ(δ)^k / Γ(kδ)`.
pub fn series_envelope(t: f64, k: usize, c: f64, delta: f64) -> f64 {
    let kf = k as f64;
    t.powf(-1.0 + kf * delta) * (c * libm::tgamma(delta)).powi(k as i32) / libm::tgamma(kf * delta)
}

#[derive(Debug, Clone, Serialize)]
pub struct TransitionDensity {
    pub p: DensityField,
    pub p0: DensityField,
    pub r: DensityField,
    pub psi: DensityField,
    pub phi: DensityField,
    /// `t^{-1/α} g^{t,x}((y − χ_t(x)) / t^{1/α})`
    pub main: DensityField,
    /// `R_t = p − p^main`
    pub residual: DensityField,
    pub report: SeriesReport,
}

/// `p = p⁰ + p⁰⋆Ψ` with `Ψ` truncated after `K` terms.
pub fn transition_density(model: &ModelSpec, t: f64, cfg: &ParametrixConfig) -> Result<TransitionDensity> {
    let sc = cfg.series;
    let fc = &cfg.field;
    if sc.k < 1 || sc.n_time_nodes < 2 {
        return Err(ParametrixError::Invalid("need K >= 1 and at least two time nodes".into()));
    }
    if !(t > 0.0 && t <= model.horizon) {
        return Err(ParametrixError::Invalid(format!("need 0 < t <= {}, got {t}", model.horizon)));
    }
    let delta = model.deltas()?.delta;
    let layout = Layout::new(model, t, fc)?;
    let table = StableTable::shared(model.alpha)?;
    let gl = GaussLegendre::new(6);
    let tail_p = tail_exponent(model);
    let ny = layout.y.n;
    let nx = layout.rows.n;
    let m_nodes = sc.n_time_nodes;
    let dt = t / m_nodes as f64;
    let times: Vec<f64> = (1..=m_nodes).map(|m| m as f64 * dt).collect();
    let ys = layout.y.points();
    let xs = layout.rows.points();
    let trajs = kappa_trajectories(model, &ys, t, fc)?;

    // slabs[m − 1] holds Φ_{τ_m}
    let mut slabs = Vec::with_capacity(m_nodes);
    for &s in &times {
        let cols = columns_at(model, &trajs, s, fc)?;
        slabs.push(build_slab(model, &table, &gl, &layout, cols, s, fc)?);
    }

    // analytic rows: p⁰_τ(x_i, ·) and Φ_τ(x_i, ·), with refined masses
    struct Analytic {
        values: Rows,
        masses: Rows,
        l1: Vec<f64>,
    }
    let analytic = |m: usize, which_phi: bool| -> Result<Analytic> {
        let slab = &slabs[m];
        let slice = Slice::new(model, &table, slab.s, &gl)?;
        let per_row: Vec<(Vec<f64>, Vec<f64>, f64)> = xs
            .par_iter()
            .enumerate()
            .map(|(i, &x)| {
                let values: Vec<f64> = if which_phi {
                    let iz = layout.row_index[i];
                    slab.v[iz * ny..(iz + 1) * ny].to_vec()
                } else {
                    slab.cols.iter().map(|c| slice.p0(c, x)).collect()
                };
                let rc = slab.coefs[layout.row_index[i]];
                let f = |yy: f64| {
                    let c = column_interp(&slab.cols, &layout.y, yy);
                    if which_phi {
                        slice.phi(&c, &rc, x).total()
                    } else {
                        slice.p0(&c, x)
                    }
                };
                let j = slab
                    .cols
                    .iter()
                    .enumerate()
                    .min_by(|a, b| (a.1.kappa - x).abs().total_cmp(&(b.1.kappa - x).abs()))
                    .map(|(j, _)| j)
                    .unwrap_or(0);
                let center = layout.y.point(j) + (x - slab.cols[j].kappa);
                let (masses, l1) = refined_masses(&values, &layout.y, &f, center, slice.a, fc.window);
                (values, masses, l1)
            })
            .collect();
        let mut out = Analytic {
            values: Vec::new(),
            masses: Vec::new(),
            l1: Vec::new(),
        };
        for (v, m, l) in per_row {
            out.values.push(v);
            out.masses.push(m);
            out.l1.push(l);
        }
        Ok(out)
    };
    let p0_rows: Vec<Analytic> = (0..m_nodes).map(|m| analytic(m, false)).collect::<Result<_>>()?;
    let phi_rows: Vec<Analytic> = (0..m_nodes).map(|m| analytic(m, true)).collect::<Result<_>>()?;

    // P^{(k)}_{τ_m}: p[k][m − 1]; A^{(k)}_{τ_m}: a[k − 1][m − 1]
    let mut p_fam: Vec<Vec<Rows>> = vec![p0_rows.iter().map(|a| a.values.clone()).collect()];
    let mut a_fam: Vec<Vec<Rows>> = vec![phi_rows.iter().map(|a| a.values.clone()).collect()];
    for k in 1..=sc.k {
        let prev = &p_fam[k - 1];
        let level: Vec<Rows> = (1..=m_nodes)
            .map(|m| {
                (0..nx)
                    .into_par_iter()
                    .map(|i| {
                        let mut out = vec![0.0; ny];
                        for (j, wt) in half_open_weights(m, dt) {
                            let l = m - j;
                            let slab = &slabs[j - 1];
                            if l == 0 {
                                if k == 1 {
                                    let iz = layout.row_index[i];
                                    for (o, v) in out.iter_mut().zip(&slab.v[iz * ny..(iz + 1) * ny]) {
                                        *o += wt * v;
                                    }
                                }
                                continue;
                            }
                            if k == 1 && l < j {
                                accumulate(&mut out, &p0_rows[l - 1].masses[i], &slab.v, wt);
                            } else {
                                accumulate(&mut out, &prev[l - 1][i], &slab.w, wt);
                            }
                        }
                        out
                    })
                    .collect()
            })
            .collect();
        p_fam.push(level);
    }
    for k in 2..=sc.k {
        let prev = &a_fam[k - 2];
        let level: Vec<Rows> = (1..=m_nodes)
            .map(|m| {
                (0..nx)
                    .into_par_iter()
                    .map(|i| {
                        let mut out = vec![0.0; ny];
                        for (j, wt) in open_weights(m, dt) {
                            let l = m - j;
                            let slab = &slabs[j - 1];
                            if k == 2 && l < j {
                                accumulate(&mut out, &phi_rows[l - 1].masses[i], &slab.v, wt);
                            } else {
                                accumulate(&mut out, &prev[l - 1][i], &slab.w, wt);
                            }
                        }
                        out
                    })
                    .collect()
            })
            .collect();
        a_fam.push(level);
    }
    drop(slabs);

    let last = m_nodes - 1;
    let phi_norms: Vec<Vec<f64>> = (0..sc.k)
        .map(|k| {
            (0..m_nodes)
                .map(|m| {
                    let l1 = if k == 0 { Some(phi_rows[m].l1.as_slice()) } else { None };
                    sup_l1(&a_fam[k][m], l1, &layout, times[m], tail_p)
                })
                .collect()
        })
        .collect();
    let correction_norms: Vec<f64> = (1..=sc.k)
        .map(|k| sup_l1(&p_fam[k][last], None, &layout, t, tail_p))
        .collect();
    let fitted_c = phi_norms[0]
        .iter()
        .zip(&times)
        .map(|(n, s)| n / s.powf(-1.0 + delta))
        .fold(0.0, f64::max);
    let envelope_ratio: Vec<f64> = (0..sc.k)
        .map(|k| {
            (1..m_nodes)
                .map(|m| phi_norms[k][m] / series_envelope(times[m], k + 1, fitted_c, delta))
                .fold(0.0, f64::max)
        })
        .collect();
    let diverging = envelope_ratio.iter().any(|r| !(r.is_finite() && *r <= 2.0));
    let tail_bound = sc.tail_bound_report.then(|| {
        (sc.k + 1..sc.k + 60)
            .map(|k| series_envelope(t, k, fitted_c, delta))
            .take_while(|v| v.is_finite())
            .sum()
    });

    let p0 = rows_to_field(&p_fam[0][last], &layout, t, tail_p);
    let mut r = p0.like();
    for k in 1..=sc.k {
        r.add_assign(&rows_to_field(&p_fam[k][last], &layout, t, tail_p));
    }
    let mut psi = p0.like();
    for k in 0..sc.k {
        psi.add_assign(&rows_to_field(&a_fam[k][last], &layout, t, tail_p));
    }
    let phi = rows_to_field(&a_fam[0][last], &layout, t, tail_p);
    let mut p = p0.clone();
    p.add_assign(&r);

    let rcfg = RegressionConfig::default();
    let mut main = p0.like();
    let laws = xs
        .par_iter()
        .map(|&x| Ok(regression_law(model, x, t, "chi", &rcfg)?))
        .collect::<Result<Vec<_>>>()?;
    for (i, law) in laws.iter().enumerate() {
        let red = Reduction::new(&law.innovation);
        for j in 0..ny {
            let w = (ys[j] - law.regressor) / law.scale;
            main.values[i * ny + j] =
                table.eval_reduced(TableFn::G, law.innovation.rho, &red, w) / law.scale;
        }
    }
    let residual = p.sub(&main);
    let mass_error = (0..nx).map(|i| (p.row_integral(i) - 1.0).abs()).fold(0.0, f64::max);
    let report = SeriesReport {
        t,
        delta,
        times,
        phi_norm: phi_norms[0][last],
        phi_norms,
        correction_norms,
        fitted_c,
        envelope_ratio,
        tail_bound,
        diverging,
        r_norm: r.sup_row_l1(),
        residual_norm: residual.sup_row_l1(),
        mass_error,
        min_value: p.min_value(),
    };
    if !p.is_finite() {
        return Err(ParametrixError::NonFinite {
            what: "transition density",
            x: f64::NAN,
            y: f64::NAN,
        });
    }
    Ok(TransitionDensity {
        p,
        p0,
        r,
        psi,
        phi,
        main,
        residual,
        report,
    })
}

/// `Ψ_t = Σ_{k≤K} Φ^{⋆k}_t` with its norm report.
pub fn resolvent_psi(model: &ModelSpec, t: f64, cfg: &ParametrixConfig) -> Result<(DensityField, SeriesReport)> {
    let td = transition_density(model, t, cfg)?;
    Ok((td.psi, td.report))
}

/// Smallest `C` with `|R_t(x,y)| ≤ C (t^δ G^{(α,α,α)}_t + t^{δ′} G^{(α,β′,γ′)}_t)(χ_t(x), y)`
/// over the grid.
pub fn residual_envelope_constant(model: &ModelSpec, td: &TransitionDensity) -> Result<f64> {
    let ex = residual_bound_params(model)?;
    let t = td.p.t;
    let delta = model.deltas()?.delta;
    let k1 = KernelParams::new(model.alpha, model.alpha, model.alpha, t)?;
    let k2 = KernelParams::new(model.alpha, ex.beta_prime, ex.gamma_prime, t)?;
    let (c1, c2) = (t.powf(delta), t.powf(ex.delta_prime));
    let res = &td.residual;
    let mut worst: f64 = 0.0;
    for i in 0..res.rows.n {
        let chi = res.centers[i];
        for j in 0..res.y.n {
            let y = res.y.point(j);
            let env = c1 * g_abg(&k1, chi, y) + c2 * g_abg(&k2, chi, y);
            worst = worst.max(res.get(i, j).abs() / env);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Atom;
    use crate::regression::zero_order_density;

    fn smooth() -> ModelSpec {
        let mut m = ModelSpec::from_sources(1.2, "1 + 0.3*sin(x)", "0.5*cos(x)", "sin(x)").unwrap();
        m.zeta = 1.0;
        m.beta_activity = 0.1;
        m
    }

    fn small_cfg(rows: Grid) -> ParametrixConfig {
        ParametrixConfig {
            field: FieldConfig {
                rows,
                resolution: 4.0,
                width_base: 2.0,
                width_scale: 10.0,
                ..FieldConfig::default()
            },
            series: SeriesConfig {
                k: 2,
                n_time_nodes: 6,
                tail_bound_report: true,
            },
        }
    }

    #[test]
    fn constant_model_has_zero_error_kernel() {
        let m = ModelSpec::constant(1.5, 0.8, 0.3, 0.4).unwrap();
        let cfg = FieldConfig {
            rows: Grid::new(-1.0, 1.0, 3),
            ..FieldConfig::default()
        };
        let f = phi_total(&m, 0.2, &cfg).unwrap();
        assert!(f.phi.values.iter().all(|v| v.abs() < 1e-9), "{}", f.sup_l1);
    }

    #[test]
    fn symmetric_driftless_model_has_zero_kernel() {
        let m = ModelSpec::from_sources(1.3, "1", "0", "0").unwrap();
        for &(x, y) in &[(0.0, 0.3), (1.0, -2.0)] {
            let v = pointwise(&m, 0.3, x, y, &FieldConfig::default()).unwrap();
            assert_eq!(v.total(), 0.0);
        }
    }

    #[test]
    fn alpha_part_vanishes_on_the_flow_image() {
        let m = smooth();
        let cfg = FieldConfig::default();
        let y = 0.4;
        let t = 0.1;
        let kappa = DriftField::new(&m, MollifierSpec::default()).kappa(y, t, &cfg.flow()).unwrap();
        let v = phi_alpha(&m, t, kappa.endpoint(), y, &cfg).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
        let off = phi_alpha(&m, t, kappa.endpoint() + 0.1, y, &cfg).unwrap();
        assert!(off.abs() > 1e-3);
    }

    #[test]
    fn tabulated_zero_order_matches_inversion() {
        let m = smooth();
        let cfg = FieldConfig::default();
        let rcfg = cfg.regression();
        for &(x, y) in &[(0.1, 0.2), (-0.5, 0.3), (1.0, 2.5)] {
            let a = zero_order_tabulated(&m, 0.2, x, y, &cfg).unwrap();
            let b = zero_order_density(&m, x, y, 0.2, &rcfg).unwrap();
            assert!((a - b).abs() < 1e-6 * b.abs().max(1e-3), "{a} {b}");
        }
    }

    #[test]
    fn error_kernel_matches_generator_minus_time_derivative() {
        // Φ_t(x, y) = L_x p⁰_t(x, y) − ∂_t p⁰_t(x, y), both sides from p⁰ values only
        let m = smooth();
        let cfg = FieldConfig::default();
        let table = StableTable::shared(m.alpha).unwrap();
        let gl = GaussLegendre::new(6);
        let field = DriftField::new(&m, MollifierSpec::default());
        let (t, y) = (0.1, 0.7);
        let dt = 1e-4 * t;
        let traj = field.kappa(y, t + dt, &FlowConfig::fixed(256)).unwrap();
        let p0_at = |s: f64, x: f64| {
            let col = column_at(&m, &field, &traj, s, &cfg.regression()).unwrap();
            Slice::new(&m, &table, s, &gl).unwrap().p0(&col, x)
        };
        let col = column_at(&m, &field, &traj, t, &cfg.regression()).unwrap();
        let slice = Slice::new(&m, &table, t, &gl).unwrap();
        let f = |x: f64| slice.p0(&col, x);
        let tol = crate::quad::Tol::new(1e-10, 1e-9);
        for x in [0.2, 0.75, 1.6] {
            let hd = 1e-4;
            let d1 = (f(x + hd) - f(x - hd)) / (2.0 * hd);
            let d2 = (f(x + hd) - 2.0 * f(x) + f(x - hd)) / (hd * hd);
            let (lam, rho) = (m.lambda_at(x), m.rho_at(x));
            let jump = |u: f64| {
                let diff = if u.abs() < 1e-3 {
                    0.5 * d2 * u * u
                } else {
                    f(x + u) - f(x) - if u.abs() <= 1.0 { u * d1 } else { 0.0 }
                };
                diff * lam * (1.0 + rho * u.signum()) * u.abs().powf(-1.0 - m.alpha)
            };
            let c = col.kappa - x;
            let mut br = vec![-1.0, -0.1, 0.0, 0.1, 1.0, c - 0.3, c, c + 0.3];
            br.sort_by(f64::total_cmp);
            let lo = br[0] - 1.0;
            let hi = br[br.len() - 1] + 1.0;
            br.insert(0, lo);
            br.push(hi);
            let mut lf = crate::quad::integrate_pts(jump, &br, tol).unwrap();
            lf += crate::quad::integrate_tail(jump, hi, 1.0, m.alpha, tol).unwrap();
            lf += crate::quad::integrate_tail(|u| jump(-u), -lo, 1.0, m.alpha, tol).unwrap();
            lf += m.b_at(x) * d1;
            let dtp = (p0_at(t + dt, x) - p0_at(t - dt, x)) / (2.0 * dt);
            let want = lf - dtp;
            let got = slice.phi(&col, &slice.coef(x).unwrap(), x).total();
            assert!((got - want).abs() < 1e-3 * (1.0 + want.abs()), "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn point_mass_large_jump_term() {
        // ν(x, du) = δ_{−x}: the large,+ part is p⁰(0, y) when |x| > t^{1/α}
        let atom = Atom {
            position: Expr::parse("-x").unwrap(),
            weight: Expr::parse("1").unwrap(),
        };
        let m = ModelSpec::constant(1.5, 1.0, 0.0, 0.0)
            .unwrap()
            .with_nu(ResidualKernel::PointMasses(vec![atom]))
            .unwrap();
        let cfg = FieldConfig::default();
        let t = 0.1;
        let (x, y) = (0.8, 0.3);
        let parts = pointwise(&m, t, x, y, &cfg).unwrap();
        let p00 = zero_order_tabulated(&m, t, 0.0, y, &cfg).unwrap();
        assert!((parts.large_plus - p00).abs() < 1e-10, "{} {p00}", parts.large_plus);
        let inside = pointwise(&m, t, 0.05, y, &cfg).unwrap();
        assert_eq!(inside.large_plus, 0.0);
    }

    #[test]
    fn density_nu_large_jump_term_matches_adaptive_quadrature() {
        let m = ModelSpec::constant(1.2, 1.0, 0.2, 0.0)
            .unwrap()
            .with_nu(ResidualKernel::Density {
                q: Expr::parse("min(abs(u)^(-1.5), abs(u)^(-3))").unwrap(),
                beta: 0.5,
                gamma: 2.0,
            })
            .unwrap();
        let cfg = FieldConfig::default();
        let t: f64 = 0.05;
        let a = t.powf(1.0 / 1.2);
        for &(x, y) in &[(0.0, 0.02), (0.0, 0.6), (0.3, -1.7)] {
            let parts = pointwise(&m, t, x, y, &cfg).unwrap();
            let p0 = |z: f64| zero_order_tabulated(&m, t, z, y, &cfg).unwrap();
            let q = |u: f64| (u.abs().powf(-1.5)).min(u.abs().powf(-3.0));
            let tol = crate::quad::Tol::new(1e-12, 1e-8);
            let mut br = vec![a, 1.0, (y - x).abs().max(2.0 * a)];
            br.sort_by(f64::total_cmp);
            let mut total = 0.0;
            for sg in [1.0, -1.0] {
                let g = |u: f64| p0(x + sg * u) * q(u);
                total += crate::quad::integrate_pts(&g, &br, tol).unwrap();
                total += crate::quad::integrate_tail(&g, *br.last().unwrap(), 1.0, 2.0, tol).unwrap();
            }
            assert!(
                (parts.large_plus - total).abs() < 2e-3 * total.abs().max(1e-6),
                "x={x} y={y}: {} vs {total}",
                parts.large_plus
            );
        }
    }

    #[test]
    fn convolution_with_zero_is_zero_and_linear() {
        let grid = Grid::new(-3.0, 3.0, 61);
        let t = 0.3;
        let f = KernelFamily::from_fn(grid, t, 6, |s, x, y| (-(x - y).powi(2) / s).exp() / s.sqrt());
        let zero = KernelFamily::from_fn(grid, t, 6, |_, _, _| 0.0);
        let out = time_space_convolve(&f, &zero).unwrap();
        assert!(out.values.iter().all(|v| *v == 0.0));
        let g1 = KernelFamily::from_fn(grid, t, 6, |s, x, y| (x * y + s).cos());
        let g2 = KernelFamily::from_fn(grid, t, 6, |s, x, y| (x - 2.0 * y).sin() * s);
        let sum = KernelFamily::from_fn(grid, t, 6, |s, x, y| 2.0 * (x * y + s).cos() - 3.0 * (x - 2.0 * y).sin() * s);
        let (a, b, c) = (
            time_space_convolve(&f, &g1).unwrap(),
            time_space_convolve(&f, &g2).unwrap(),
            time_space_convolve(&f, &sum).unwrap(),
        );
        for k in (0..a.values.len()).step_by(373).take(10) {
            let lin = 2.0 * a.values[k] - 3.0 * b.values[k];
            assert!((c.values[k] - lin).abs() < 1e-10 * (1.0 + lin.abs()));
        }
    }

    #[test]
    fn convolution_against_narrow_bump() {
        // g_s(z, y) = m(s) δ_c(z) smeared over one cell: result ≈ ∫ f_{t−s}(x, c) m(s) ds
        let grid = Grid::new(-4.0, 4.0, 161);
        let t = 0.5;
        let m_nodes = 40;
        let c_idx = 90;
        let c = grid.point(c_idx);
        let h = grid.step();
        let heat = |s: f64, x: f64, y: f64| (-(x - y).powi(2) / (4.0 * s)).exp() / (4.0 * PI * s).sqrt();
        let f = KernelFamily::from_fn(grid, t, m_nodes, |s, x, z| heat(s + 0.2, x, z));
        let g = KernelFamily::from_fn(grid, t, m_nodes, move |s, z, _| {
            if (z - c).abs() < 0.5 * h {
                (1.0 + s) / h
            } else {
                0.0
            }
        });
        let out = time_space_convolve(&f, &g).unwrap();
        let x = 0.3;
        let i = ((x - grid.x_min) / h).round() as usize;
        let xi = grid.point(i);
        let gl = GaussLegendre::new(20);
        let exact = gl.integrate(0.0, t, |s| heat(t - s + 0.2, xi, c) * (1.0 + s));
        let got = out.get(i, 0);
        assert!((got - exact).abs() < 0.02 * exact, "{got} {exact}");
    }

    #[test]
    fn constant_cauchy_transition_is_exact() {
        let lam = 1.0 / PI;
        let m = ModelSpec::constant(1.0, lam, 0.0, 0.0).unwrap();
        let cfg = small_cfg(Grid::new(-0.5, 0.5, 3));
        let t = 0.3;
        let td = transition_density(&m, t, &cfg).unwrap();
        assert!(td.r.values.iter().all(|v| v.abs() < 1e-12));
        for i in 0..td.p.rows.n {
            let x = td.p.rows.point(i);
            for j in (0..td.p.y.n).step_by(7) {
                let y = td.p.y.point(j);
                let gam = PI * lam * t;
                let exact = gam / (PI * ((y - x).powi(2) + gam * gam));
                assert!((td.p.get(i, j) - exact).abs() < 2e-6 * exact.max(1e-3), "{x} {y}");
            }
        }
    }

    #[test]
    fn smooth_model_rows_integrate_to_one() {
        let m = smooth();
        let cfg = small_cfg(Grid::new(-PI, PI, 3));
        let td = transition_density(&m, 0.2, &cfg).unwrap();
        assert!(td.report.mass_error < 0.01, "{}", td.report.mass_error);
        assert!(td.report.min_value > -1e-3, "{}", td.report.min_value);
        assert!(td.p.is_finite());
        assert!(td.report.r_norm > 0.0);
        assert!(td.report.residual_norm < 0.5);
        let txt = td.report.to_text();
        assert!(txt.contains("residual_norm="));
    }

    #[test]
    fn csv_layout() {
        let f = DensityField::zeros(0.1, Grid::new(0.0, 1.0, 2), Grid::new(-1.0, 1.0, 3), vec![0.0, 1.0], 2.2);
        let csv = f.to_csv();
        assert!(csv.starts_with("t,x,y,value\n"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn envelope_is_gamma_pattern() {
        let v = series_envelope(0.5, 1, 2.0, 0.5);
        assert!((v - 0.5f64.powf(-0.5) * 2.0).abs() < 1e-12);
        let v2 = series_envelope(0.5, 2, 2.0, 0.5);
        let g = libm::tgamma(0.5);
        assert!((v2 - 4.0 * g * g / 1.0).abs() < 1e-12);
    }
}
