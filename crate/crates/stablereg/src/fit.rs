//! Power-law fits for rate diagnostics.

use serde::Serialize;

/// Least-squares slope and intercept of `ln v` against `ln t`.
pub fn loglog_fit(ts: &[f64], vs: &[f64]) -> (f64, f64) {
    assert_eq!(ts.len(), vs.len());
    assert!(ts.len() >= 2, "need at least two points");
    let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = vs.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub fn loglog_slope(ts: &[f64], vs: &[f64]) -> f64 {
    loglog_fit(ts, vs).0
}

/// One constant `C` fitted for the bound `v(t) ≤ C t^p`, with the spread of
/// the individual ratios.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PowerBound {
    pub exponent: f64,
    pub constant: f64,
    pub min_ratio: f64,
}

impl PowerBound {
    pub fn fit(ts: &[f64], vs: &[f64], exponent: f64) -> Self {
        let ratios = ts.iter().zip(vs).map(|(t, v)| v / t.powf(exponent));
        let (lo, hi) = ratios.fold((f64::INFINITY, 0.0f64), |(l, h), r| (l.min(r), h.max(r)));
        PowerBound {
            exponent,
            constant: hi,
            min_ratio: lo,
        }
    }

    /// Largest over smallest ratio; a bounded spread means the rate is not
    /// worse than `exponent` over the sampled range.
    pub fn spread(&self) -> f64 {
        self.constant / self.min_ratio
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let ts = [0.4, 0.2, 0.1, 0.05];
        let vs: Vec<f64> = ts.iter().map(|t: &f64| 3.0 * t.powf(0.7)).collect();
        let (s, c) = loglog_fit(&ts, &vs);
        assert!((s - 0.7).abs() < 1e-12);
        assert!((c - 3f64.ln()).abs() < 1e-12);
        let b = PowerBound::fit(&ts, &vs, 0.7);
        assert!((b.constant - 3.0).abs() < 1e-12 && (b.spread() - 1.0).abs() < 1e-12);
    }
}
