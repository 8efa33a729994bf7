//! Precomputed unit-intensity tables `g₁^ρ`, its derivatives and generator
//! images for one α, reused for every (λ, ρ, υ) through [`Reduction`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;

use super::{
    inversion::stable_transform, InversionSpec, Multiplier, Reduction, StableError, StableParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFn {
    G,
    D1,
    D2,
    Lsym,
    Lasym,
}

const FNS: [Multiplier; 5] = [
    Multiplier::Density,
    Multiplier::Dw,
    Multiplier::Dww,
    Multiplier::Lsym,
    Multiplier::Lasym,
];

const N_RHO: usize = 81;
const DV: f64 = 0.025;
const V_MAX: f64 = 14.6;

#[derive(Debug)]
pub struct StableTable {
    pub alpha: f64,
    n_v: usize,
    /// `[fn][rho][v]`, stored as `f(w) (1 + w²)^{p/2}`
    data: Vec<f64>,
    powers: [f64; 5],
}

fn cubic_weights(t: f64) -> [f64; 4] {
    // Lagrange weights for nodes -1, 0, 1, 2
    let (a, b, c, d) = (t + 1.0, t, t - 1.0, t - 2.0);
    [
        -b * c * d / 6.0,
        a * c * d / 2.0,
        -a * b * d / 2.0,
        a * b * c / 6.0,
    ]
}

impl StableTable {
    pub fn build(alpha: f64) -> Result<Self, StableError> {
        let n_v = (2.0 * V_MAX / DV).round() as usize + 1;
        let powers = [alpha + 1.0, alpha + 2.0, alpha + 3.0, alpha + 1.0, alpha + 1.0];
        let spec = InversionSpec::default();
        let rows: Vec<Result<Vec<[f64; 5]>, StableError>> = (0..N_RHO)
            .into_par_iter()
            .map(|ir| {
                let rho = -1.0 + 2.0 * ir as f64 / (N_RHO - 1) as f64;
                let p = StableParams::new(alpha, 1.0, rho, 0.0)?;
                (0..n_v)
                    .map(|iv| {
                        let w = (-V_MAX + iv as f64 * DV).sinh();
                        let v = stable_transform(&p, w, &FNS, &spec)?;
                        let mut out = [0.0; 5];
                        for k in 0..5 {
                            out[k] = v[k] * (1.0 + w * w).powf(0.5 * powers[k]);
                        }
                        Ok(out)
                    })
                    .collect()
            })
            .collect();
        let mut data = vec![0.0; 5 * N_RHO * n_v];
        for (ir, row) in rows.into_iter().enumerate() {
            for (iv, vals) in row?.into_iter().enumerate() {
                for k in 0..5 {
                    data[(k * N_RHO + ir) * n_v + iv] = vals[k];
                }
            }
        }
        Ok(StableTable {
            alpha,
            n_v,
            data,
            powers,
        })
    }

    /// Process-wide cache keyed by α.
    pub fn shared(alpha: f64) -> Result<Arc<StableTable>, StableError> {
        static CACHE: OnceLock<Mutex<HashMap<u64, Arc<StableTable>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(t) = cache.lock().unwrap().get(&alpha.to_bits()) {
            return Ok(t.clone());
        }
        let t = Arc::new(Self::build(alpha)?);
        cache.lock().unwrap().insert(alpha.to_bits(), t.clone());
        Ok(t)
    }

    fn index(f: TableFn) -> usize {
        match f {
            TableFn::G => 0,
            TableFn::D1 => 1,
            TableFn::D2 => 2,
            TableFn::Lsym => 3,
            TableFn::Lasym => 4,
        }
    }

    /// Unit-intensity, zero-shift value at skewness `rho`.
    pub fn unit(&self, f: TableFn, rho: f64, z: f64) -> f64 {
        let k = Self::index(f);
        let v = z.asinh();
        let pos = ((v + V_MAX) / DV).clamp(0.0, (self.n_v - 1) as f64);
        let iv = (pos.floor() as isize).clamp(1, self.n_v as isize - 3) as usize;
        let wv = cubic_weights(pos - iv as f64);
        let rpos = ((rho.clamp(-1.0, 1.0) + 1.0) * 0.5 * (N_RHO - 1) as f64).clamp(0.0, (N_RHO - 1) as f64);
        let ir = (rpos.floor() as isize).clamp(1, N_RHO as isize - 3) as usize;
        let wr = cubic_weights(rpos - ir as f64);
        let mut acc = 0.0;
        for (a, &wa) in wr.iter().enumerate() {
            let base = (k * N_RHO + ir + a - 1) * self.n_v + iv - 1;
            let row = &self.data[base..base + 4];
            acc += wa * (wv[0] * row[0] + wv[1] * row[1] + wv[2] * row[2] + wv[3] * row[3]);
        }
        acc * (1.0 + z * z).powf(-0.5 * self.powers[k])
    }

    /// Value for general (λ, ρ, υ).
    pub fn eval(&self, f: TableFn, p: &StableParams, w: f64) -> f64 {
        let red = Reduction::new(p);
        self.eval_reduced(f, p.rho, &red, w)
    }

    /// All five functions `[G, D1, D2, Lsym, Lasym]` at one point.
    pub fn eval_all(&self, rho: f64, red: &Reduction, w: f64) -> [f64; 5] {
        let z = (w - red.shift) / red.k;
        let v = z.asinh();
        let pos = ((v + V_MAX) / DV).clamp(0.0, (self.n_v - 1) as f64);
        let iv = (pos.floor() as isize).clamp(1, self.n_v as isize - 3) as usize;
        let wv = cubic_weights(pos - iv as f64);
        let rpos = ((rho.clamp(-1.0, 1.0) + 1.0) * 0.5 * (N_RHO - 1) as f64).clamp(0.0, (N_RHO - 1) as f64);
        let ir = (rpos.floor() as isize).clamp(1, N_RHO as isize - 3) as usize;
        let wr = cubic_weights(rpos - ir as f64);
        let l = (1.0 + z * z).ln();
        let mut u = [0.0; 5];
        for (k, out) in u.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (a, &wa) in wr.iter().enumerate() {
                let base = (k * N_RHO + ir + a - 1) * self.n_v + iv - 1;
                let row = &self.data[base..base + 4];
                acc += wa * (wv[0] * row[0] + wv[1] * row[1] + wv[2] * row[2] + wv[3] * row[3]);
            }
            *out = acc * (-0.5 * self.powers[k] * l).exp();
        }
        let k = red.k;
        let ka = k.powf(-1.0 - self.alpha);
        [
            u[0] / k,
            u[1] / (k * k),
            u[2] / (k * k * k),
            u[3] * ka,
            (u[4] - red.asym_d * u[1]) * ka,
        ]
    }

    pub fn eval_reduced(&self, f: TableFn, rho: f64, red: &Reduction, w: f64) -> f64 {
        let z = (w - red.shift) / red.k;
        let k = red.k;
        match f {
            TableFn::G => self.unit(f, rho, z) / k,
            TableFn::D1 => self.unit(f, rho, z) / (k * k),
            TableFn::D2 => self.unit(f, rho, z) / (k * k * k),
            TableFn::Lsym => self.unit(f, rho, z) * k.powf(-1.0 - self.alpha),
            TableFn::Lasym => {
                (self.unit(f, rho, z) - red.asym_d * self.unit(TableFn::D1, rho, z))
                    * k.powf(-1.0 - self.alpha)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_matches_direct_inversion() {
        let t = StableTable::build(1.2).unwrap();
        let spec = InversionSpec::default();
        for &(l, r, u) in &[(0.7, 0.3, 0.1), (1.8, -0.85, -0.4), (1.0, 1.0, 0.0)] {
            let p = StableParams::new(1.2, l, r, u).unwrap();
            for &w in &[-30.0, -2.0, 0.0, 0.37, 5.0, 2e3] {
                let direct = stable_transform(&p, w, &FNS, &spec).unwrap();
                let tab = [
                    t.eval(TableFn::G, &p, w),
                    t.eval(TableFn::D1, &p, w),
                    t.eval(TableFn::D2, &p, w),
                    t.eval(TableFn::Lsym, &p, w),
                    t.eval(TableFn::Lasym, &p, w),
                ];
                for k in 0..5 {
                    let scale = direct[k].abs().max(1e-3 * (1.0 + w * w).powf(-0.5 * (1.2 + 1.0)));
                    assert!(
                        (tab[k] - direct[k]).abs() < 1e-5 * scale + 1e-9,
                        "fn {k} p={p:?} w={w}: {} {}",
                        tab[k],
                        direct[k]
                    );
                }
            }
        }
    }

    #[test]
    fn eval_all_agrees_with_single_lookups() {
        let t = StableTable::shared(1.2).unwrap();
        let p = StableParams::new(1.2, 0.8, -0.4, 0.3).unwrap();
        let red = Reduction::new(&p);
        let fns = [TableFn::G, TableFn::D1, TableFn::D2, TableFn::Lsym, TableFn::Lasym];
        for &w in &[-7.0, -0.2, 0.0, 1.3, 40.0] {
            let all = t.eval_all(p.rho, &red, w);
            for (k, f) in fns.iter().enumerate() {
                let one = t.eval_reduced(*f, p.rho, &red, w);
                assert!((all[k] - one).abs() <= 1e-13 * one.abs().max(1e-12), "{k} {w}");
            }
        }
    }
}
