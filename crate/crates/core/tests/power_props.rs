use proptest::prelude::*;
use wpm_core::power::*;

fn exponent() -> impl Strategy<Value = u32> {
    prop::sample::select(vec![1u32, 2, 3, 5, 9, 15])
}

proptest! {
    #[test]
    fn signed_power_round_trips(x in -10.0f64..10.0, p in exponent()) {
        prop_assume!(x.abs() > 1e-6);
        let back = signed_root(signed_pow_int(x, p), p);
        prop_assert!((back - x).abs() <= 1e-12 * x.abs(), "{x} -> {back}");
        let forward = signed_pow_int(signed_root(x, p), p);
        prop_assert!((forward - x).abs() <= 1e-12 * x.abs());
    }

    #[test]
    fn signed_power_is_odd_and_monotone(a in -3.0f64..3.0, b in -3.0f64..3.0, p in exponent()) {
        prop_assert_eq!(signed_pow_int(-a, p), -signed_pow_int(a, p));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(signed_pow_int(lo, p) <= signed_pow_int(hi, p));
        prop_assert!(signed_root(lo, p) <= signed_root(hi, p));
    }

    #[test]
    fn linear_mean_at_p_one(
        models in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..8),
        raw in prop::collection::vec(0.01f64..1.0, 8),
    ) {
        let n = models.len();
        let total: f64 = raw[..n].iter().sum();
        let weights: Vec<f64> = raw[..n].iter().map(|w| w / total).collect();
        let got = wpm_aggregate(&models, &weights, 1).unwrap();
        for k in 0..4 {
            // Summed back to front so the oracle does not share rounding order.
            let expected: f64 = (0..n).rev().map(|j| weights[j] * models[j][k]).sum();
            prop_assert!((got[k] - expected).abs() <= 1e-14 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn power_mean_lies_between_extremes(
        models in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 1..6),
        raw in prop::collection::vec(0.01f64..1.0, 6),
        p in exponent(),
    ) {
        let n = models.len();
        let total: f64 = raw[..n].iter().sum();
        let weights: Vec<f64> = raw[..n].iter().map(|w| w / total).collect();
        let got = wpm_aggregate(&models, &weights, p).unwrap();
        for k in 0..3 {
            let lo = models.iter().map(|m| m[k]).fold(f64::INFINITY, f64::min);
            let hi = models.iter().map(|m| m[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(got[k] >= lo - 1e-12 && got[k] <= hi + 1e-12, "{lo} <= {} <= {hi}", got[k]);
        }
    }

    #[test]
    fn bregman_is_nonnegative(
        x in prop::collection::vec(-2.0f64..2.0, 5),
        y in prop::collection::vec(-2.0f64..2.0, 5),
        p in exponent(),
    ) {
        prop_assert!(bregman_divergence(&x, &y, p).unwrap() >= 0.0);
        prop_assert_eq!(bregman_divergence(&x, &x, p).unwrap(), 0.0);
    }

    #[test]
    fn power_inequality_margins(
        x in -1.5f64..1.5,
        y in -1.5f64..1.5,
        a in prop::collection::vec(-1.5f64..1.5, 3),
        b in prop::collection::vec(-1.5f64..1.5, 3),
        p in exponent(),
    ) {
        prop_assert!(lower_bound_margin(x, y, p) >= -1e-10);
        prop_assert!(strong_convexity_margin(&a, &b, p).unwrap() >= -1e-10);
    }

    #[test]
    fn mirror_step_minimizes_estimator(
        mag in 0.2f64..1.0,
        negative in any::<bool>(),
        g in -1.0f64..1.0,
        eta0 in 0.1f64..0.9,
        p in prop::sample::select(vec![1u32, 3, 5, 9, 15]),
    ) {
        let y = if negative { -mag } else { mag };
        let cfg = PowerConfig::new(p, eta0).unwrap();
        let closed = mirror_step(&[y], &[g], &cfg).unwrap()[0];
        let grid = Grid { lo: -2.0, hi: 2.0, step: 1e-4 };
        let oracle = estimator_argmin_oracle(y, g, &cfg, grid);
        prop_assert!((closed - oracle).abs() <= grid.step, "closed {closed} oracle {oracle}");
    }

    #[test]
    fn mirror_step_is_gradient_step_at_p_one(
        y in prop::collection::vec(-3.0f64..3.0, 4),
        g in prop::collection::vec(-3.0f64..3.0, 4),
        eta0 in 0.01f64..1.0,
    ) {
        let cfg = PowerConfig::new(1, eta0).unwrap();
        let z = mirror_step(&y, &g, &cfg).unwrap();
        for k in 0..4 {
            prop_assert_eq!(z[k], y[k] - cfg.eta() * g[k]);
        }
    }
}

#[test]
fn sampled_inequalities_hold_for_every_exponent() {
    for p in [1, 2, 3, 5, 9, 15] {
        let r = verify_power_inequalities(p, 10_000, 1.0, 7).unwrap();
        assert!(r.holds(1e-10), "{r:?}");
    }
}
