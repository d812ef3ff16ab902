use acert_core::fit::least_squares;
use acert_core::fourier::{estimate_charfn, localization_weight, Localization};
use acert_core::levy::{plan_truncation, LevyMeasure, DEFAULT_RATE_BUDGET};
use acert_core::quad::integrate;
use acert_core::spde::{heat_kernel, HeatKernelCalc, SpdeGrid, YEpsWeights};
use acert_core::RngStream;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weight_is_a_clamped_ramp(delta in 1e-3f64..1.0, r in 0.0f64..5.0, dr in 0.0f64..1.0) {
        let w = localization_weight(delta, r);
        prop_assert!((0.0..=1.0).contains(&w));
        prop_assert!(localization_weight(delta, r + dr) >= w);
        if r <= delta {
            prop_assert_eq!(w, 0.0);
        }
        if r >= delta + 1.0 {
            prop_assert_eq!(w, 1.0);
        }
    }

    #[test]
    fn charfn_is_hermitian_and_bounded(
        xs in prop::collection::vec(-10.0f64..10.0, 100..200),
        xi in 0.01f64..50.0,
        delta in 0.01f64..0.5,
    ) {
        let sig: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
        let est = estimate_charfn(&xs, &sig, Localization::Ramp(delta), &[xi, -xi]).unwrap();
        prop_assert_eq!(est.estimate[1], est.estimate[0].conj());
        prop_assert!(est.estimate[0].norm() <= est.weight_mass + 1e-12);
        prop_assert_eq!(est.modulus_sq_unbiased[0], est.modulus_sq_unbiased[1]);
    }

    #[test]
    fn heat_kernel_symmetric_positive(t in 1e-3f64..2.0, x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let c = HeatKernelCalc::default();
        let a = heat_kernel(t, x, y, &c).unwrap();
        let b = heat_kernel(t, y, x, &c).unwrap();
        prop_assert!(a > 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn y_eps_weights_are_normalized(k in 0usize..=32, e in 2i32..10) {
        let grid = SpdeGrid::with_ratio(32, 0.25);
        let w = YEpsWeights::new(grid, k as f64 / 32.0, 0.5f64.powi(e), &HeatKernelCalc::default());
        prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.weights.iter().all(|&v| v >= 0.0));
        prop_assert!(w.kappa > 0.0);
    }

    #[test]
    fn streams_are_pure_functions_of_position(seed in any::<u64>(), id in any::<u64>(), skip in 0u64..1000, len in 1usize..300) {
        let mut a = RngStream::new(seed, id);
        a.seek(skip);
        let mut bulk = vec![0.0; len];
        a.fill_normal(&mut bulk);
        let mut b = RngStream::new(seed, id);
        b.seek(skip);
        let seq: Vec<f64> = (0..len).map(|_| b.normal()).collect();
        prop_assert_eq!(&bulk, &seq);
        prop_assert_eq!(a.counter(), b.counter());
    }

    #[test]
    fn least_squares_recovers_lines(slope in -5.0f64..5.0, icpt in -5.0f64..5.0) {
        let pts: Vec<(f64, f64)> = (0..7).map(|i| (i as f64, icpt + slope * i as f64)).collect();
        let f = least_squares(&pts);
        prop_assert!((f.slope - slope).abs() < 1e-9);
        prop_assert!((f.intercept - icpt).abs() < 1e-9);
    }

    #[test]
    fn truncation_meets_variance_target(lambda in 0.8f64..1.5, tol_exp in 1i32..4) {
        let nu = LevyMeasure::power_density(lambda, 2.0).unwrap();
        let tol = 10f64.powi(-tol_exp);
        if let Ok(p) = plan_truncation(&nu, tol, DEFAULT_RATE_BUDGET) {
            prop_assert!(p.residual_variance <= tol * (1.0 + 1e-6));
            let total = 1.0 / (2.0 - lambda);
            prop_assert!((p.residual_variance + p.kept_variance - total).abs() < 1e-6 * total);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn heat_kernel_conserves_mass(t in 1e-3f64..1.0, x in 0.0f64..1.0) {
        // reflecting boundary: total mass stays 1
        let c = HeatKernelCalc::default();
        let r = 12.0 * (2.0 * t).sqrt();
        let mut cuts = vec![0.0, (x - r).max(0.0), x, (x + r).min(1.0), 1.0];
        cuts.dedup();
        let m: f64 = cuts.windows(2).filter(|w| w[1] > w[0])
            .map(|w| integrate(|y| heat_kernel(t, x, y, &c).unwrap(), w[0], w[1], 0.0, 1e-10).value)
            .sum();
        prop_assert!((m - 1.0).abs() < 1e-7, "{}", m);
    }
}
