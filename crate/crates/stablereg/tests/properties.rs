use proptest::prelude::*;

use stablereg::expr::Expr;
use stablereg::fit::{loglog_fit, PowerBound};
use stablereg::flows::{solve_chi_t, solve_kappa, FlowConfig};
use stablereg::grid::Grid;
use stablereg::kernels::{g_abg, g_abg_mass, KernelParams};
use stablereg::model::ModelSpec;
use stablereg::montecarlo::{cramer_distance, ks_distance};
use stablereg::regression::weight_w;
use stablereg::stable::{sample_stable, stable_cdf, stable_density, InversionSpec, StableParams};

fn stable_params() -> impl Strategy<Value = StableParams> {
    (0.4f64..1.9, 0.2f64..3.0, -1.0f64..=1.0, -1.0f64..1.0)
        .prop_map(|(a, l, r, u)| StableParams::new(a, l, r, u).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn density_is_nonnegative_and_cdf_monotone(p in stable_params(), w in -20.0f64..20.0, h in 0.01f64..5.0) {
        let spec = InversionSpec::default();
        let g = stable_density(&p, w, &spec).unwrap();
        prop_assert!(g.is_finite() && g >= -1e-12);
        let (lo, hi) = (stable_cdf(&p, w, &spec).unwrap(), stable_cdf(&p, w + h, &spec).unwrap());
        prop_assert!((-1e-10..=1.0 + 1e-10).contains(&lo));
        prop_assert!(hi >= lo - 1e-10);
    }

    #[test]
    fn sampler_is_seed_deterministic(p in stable_params(), seed in any::<u64>()) {
        let a = sample_stable(&p, 64, seed).unwrap();
        let b = sample_stable(&p, 64, seed).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ks_is_a_symmetric_distance(
        a in prop::collection::vec(-100.0f64..100.0, 1..60),
        b in prop::collection::vec(-100.0f64..100.0, 1..60),
        shift in -10.0f64..10.0,
    ) {
        let d = ks_distance(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_distance(&b, &a).unwrap());
        prop_assert_eq!(ks_distance(&a, &a).unwrap(), 0.0);
        let sa: Vec<f64> = a.iter().map(|x| x + shift).collect();
        let sb: Vec<f64> = b.iter().map(|x| x + shift).collect();
        prop_assert!((ks_distance(&sa, &sb).unwrap() - d).abs() < 1e-12);
        prop_assert!(cramer_distance(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn weight_is_positive_and_decreasing(a in 0.3f64..1.95, t in 0.01f64..2.0, u in 0.001f64..0.999, v in 0.001f64..0.999) {
        let (s1, s2) = (t * u.min(v), t * u.max(v));
        let (w1, w2) = (weight_w(a, t, s1).unwrap(), weight_w(a, t, s2).unwrap());
        prop_assert!(w1 >= w2 - 1e-12 && w2 >= 0.0);
    }

    #[test]
    fn grid_points_are_ordered_and_refinement_nests(lo in -50.0f64..50.0, width in 0.1f64..100.0, n in 2usize..200) {
        let g = Grid::new(lo, lo + width, n);
        let pts = g.points();
        prop_assert_eq!(pts[0], g.x_min);
        prop_assert_eq!(pts[n - 1], g.x_max);
        prop_assert!(pts.windows(2).all(|w| w[1] > w[0]));
        let r = g.refined().points();
        for (i, x) in pts.iter().enumerate() {
            prop_assert!((r[2 * i] - x).abs() < 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn power_laws_are_fitted_exactly(c in 0.01f64..100.0, p in -2.0f64..2.0) {
        let ts = [0.4, 0.2, 0.1, 0.05];
        let vs: Vec<f64> = ts.iter().map(|t: &f64| c * t.powf(p)).collect();
        let (slope, icpt) = loglog_fit(&ts, &vs);
        prop_assert!((slope - p).abs() < 1e-10);
        prop_assert!((icpt.exp() - c).abs() < 1e-9 * c);
        prop_assert!((PowerBound::fit(&ts, &vs, p).spread() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn linear_expressions_evaluate(a in -10.0f64..10.0, b in -10.0f64..10.0, x in -10.0f64..10.0) {
        let src = format!("({a:?})*x + ({b:?})");
        let e = Expr::parse(&src).unwrap();
        prop_assert!((e.eval_x(x) - (a * x + b)).abs() < 1e-12 * (1.0 + (a * x).abs() + b.abs()));
        let again = Expr::parse(&e.to_string()).unwrap();
        prop_assert_eq!(again.eval_x(x).to_bits(), e.eval_x(x).to_bits());
    }

    #[test]
    fn model_json_round_trip(a in 0.6f64..1.9, l in 0.5f64..2.0, r in -0.9f64..0.9, b in -3.0f64..3.0, x in -5.0f64..5.0) {
        let m = ModelSpec::constant(a, l, r, b).unwrap();
        let back = ModelSpec::from_json_str(&m.to_json()).unwrap();
        prop_assert_eq!(back.alpha, m.alpha);
        prop_assert_eq!(back.lambda_at(x), m.lambda_at(x));
        prop_assert_eq!(back.rho_at(x), m.rho_at(x));
        prop_assert_eq!(back.b_at(x), m.b_at(x));
    }

    #[test]
    fn kernel_mass_dominates_grid_sum(a in 0.6f64..1.9, t in 0.01f64..1.0, x in -3.0f64..3.0) {
        let kp = KernelParams::new(a, 0.7, 1.5, t).unwrap();
        let h = 1e-3;
        let sum: f64 = (-20_000..=20_000).map(|k| g_abg(&kp, x, x + k as f64 * h) * h).sum();
        let mass = g_abg_mass(&kp);
        prop_assert!(mass.is_finite() && sum <= mass * 1.01);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn backward_flow_inverts_forward(y in -3.0f64..3.0, t in 0.02f64..0.8) {
        let m = ModelSpec::from_sources(1.2, "1+0.3*sin(x)", "0.5*cos(x)", "sin(x)").unwrap();
        let cfg = FlowConfig::default();
        let k = solve_kappa(&m, y, t, &cfg).unwrap().endpoint();
        let back = solve_chi_t(&m, k, t, &cfg).unwrap().endpoint();
        prop_assert!((back - y).abs() < 1e-6, "y={} back={}", y, back);
    }
}
