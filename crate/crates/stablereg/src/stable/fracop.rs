//! Real-space evaluation of the unit stable generators
//! `L^{sym} f(x) = ∫ (f(x+u) - f(x) - u f'(x) 1_{|u|≤c}) |u|^{-α-1} du`
//! and its `sgn u` weighted counterpart `L^{asym}`.

use crate::quad::{self, GaussLegendre, Tol};

use super::StableError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FracKind {
    Sym,
    Asym,
}

/// Below this jump size the Taylor remainder form is used.
const TAYLOR_CUT: f64 = 0.1;

/// Applies the generator to `f` at `x`, given `f`, `f'` and `f''`.
/// `trunc` is the compensation level `c` (1 for the unit operators).
pub fn frac_op(
    alpha: f64,
    f: &dyn Fn(f64) -> f64,
    df: &dyn Fn(f64) -> f64,
    d2f: &dyn Fn(f64) -> f64,
    x: f64,
    kind: FracKind,
    trunc: f64,
) -> Result<f64, StableError> {
    let sign = match kind {
        FracKind::Sym => 1.0,
        FracKind::Asym => -1.0,
    };
    let tol = Tol::new(1e-14, 1e-11);
    let fx = f(x);
    let dfx = df(x);
    let gl = GaussLegendre::new(6);
    let err = |region: &'static str| move |source| StableError::Quadrature { region, source };

    // f(x+u) - f(x) - u f'(x) = u² ∫₀¹ (1-τ) f''(x+τu) dτ
    let taylor = |u: f64| {
        let mut s = 0.0;
        for (t, w) in gl.nodes.iter().zip(&gl.weights) {
            let tau = 0.5 * (t + 1.0);
            s += 0.5 * w * (1.0 - tau) * (d2f(x + tau * u) + sign * d2f(x - tau * u));
        }
        s * u * u
    };
    let small_top = TAYLOR_CUT.min(trunc);
    let small = quad::integrate(
        |u| {
            if u == 0.0 {
                0.0
            } else {
                taylor(u) * u.powf(-alpha - 1.0)
            }
        },
        0.0,
        small_top,
        tol,
    )
    .map_err(err("small jumps"))?;

    let mut total = small;
    if trunc > TAYLOR_CUT {
        let mid = quad::integrate(
            |u| {
                let d = (f(x + u) - fx - u * dfx) + sign * (f(x - u) - fx + u * dfx);
                d * u.powf(-alpha - 1.0)
            },
            TAYLOR_CUT,
            trunc,
            tol,
        )
        .map_err(err("compensated jumps"))?;
        total += mid;
    }

    let body_lo = trunc;
    let reach = x.abs() + 10.0;
    let mut pts = vec![body_lo];
    for p in [1.0, x.abs() - 3.0, x.abs() - 1.0, x.abs(), x.abs() + 1.0, x.abs() + 3.0, reach] {
        if p > body_lo {
            pts.push(p);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let top = *pts.last().unwrap();
    let big = |u: f64| (f(x + u) + sign * f(x - u)) * u.powf(-alpha - 1.0);
    let body = quad::integrate_pts(big, &pts, tol).map_err(err("large jumps"))?;
    let tail = quad::integrate_tail(big, top, top, alpha, tol).map_err(err("tail"))?;
    total += body + tail;
    if sign > 0.0 {
        total -= 2.0 * fx * body_lo.powf(-alpha) / alpha;
    }
    if !total.is_finite() {
        return Err(StableError::Quadrature {
            region: "result",
            source: quad::QuadError::NonFinite { at: x },
        });
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stable::{
        stable_density, stable_transform, InversionSpec, Multiplier, StableParams,
    };

    fn gauss(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn odd_integrand_vanishes_for_symmetric_f() {
        let v = frac_op(
            1.2,
            &gauss,
            &|x| -x * gauss(x),
            &|x| (x * x - 1.0) * gauss(x),
            0.0,
            FracKind::Asym,
            1.0,
        )
        .unwrap();
        assert!(v.abs() < 1e-13);
    }

    #[test]
    fn matches_fourier_side() {
        let spec = InversionSpec::default();
        for &(a, rho) in &[(0.7, 0.5), (1.0, -0.3), (1.5, 0.8)] {
            let p = StableParams::new(a, 1.0, rho, 0.0).unwrap();
            let g = |w: f64| stable_density(&p, w, &spec).unwrap();
            let d = |w: f64| stable_transform(&p, w, &[Multiplier::Dw], &spec).unwrap()[0];
            let d2 = |w: f64| stable_transform(&p, w, &[Multiplier::Dww], &spec).unwrap()[0];
            for &x in &[-1.5, 0.0, 0.8, 4.0] {
                let f = stable_transform(&p, x, &[Multiplier::Lsym, Multiplier::Lasym], &spec)
                    .unwrap();
                let s = frac_op(a, &g, &d, &d2, x, FracKind::Sym, 1.0).unwrap();
                let t = frac_op(a, &g, &d, &d2, x, FracKind::Asym, 1.0).unwrap();
                assert!((s - f[0]).abs() < 1e-6, "sym a={a} x={x}: {s} {}", f[0]);
                assert!((t - f[1]).abs() < 1e-6, "asym a={a} x={x}: {t} {}", f[1]);
            }
        }
    }
}
