use acert_core::levy::*;
use acert_core::noise::channel;
use acert_core::{stats, RngStream};

#[test]
fn lower_decay_separates_measures() {
    let grid = stats::logspace(1.0, 1e3, 31);
    let good = check_tasoeur1(&LevyMeasure::symmetric_power_density(1.5, 1.6).unwrap(), &grid).unwrap();
    assert!(good.pass, "{good:?}");
    assert!((good.lambda_hat - 1.5).abs() < 0.1, "{}", good.lambda_hat);
    let bad = check_tasoeur1(&LevyMeasure::two_point(), &grid).unwrap();
    assert!(!bad.pass);
}

#[test]
fn small_jump_scaling() {
    let grid = stats::logspace(1e-4, 1.0, 17);
    let r = check_dix(&LevyMeasure::power_density(1.0, 2.0).unwrap(), &grid).unwrap();
    assert!((r.c0_hat - 1.0).abs() < 1e-3 && (r.c1_hat - 1.0).abs() < 1e-3);
    let r = check_dix(&LevyMeasure::power_atoms(1.0, 1.0, 2.0).unwrap(), &grid).unwrap();
    assert!(r.pass && r.c0_hat >= 0.5 && r.c1_hat <= 2.0, "{r:?}");
    assert!(check_dix(&LevyMeasure::two_point(), &grid[..4]).is_err());
}

#[test]
fn compensated_increments_are_centred() {
    let nu = LevyMeasure::power_density(1.2, 2.0).unwrap();
    let plan = plan_truncation(&nu, 1e-2, DEFAULT_RATE_BUDGET).unwrap();
    let dt = vec![1.0 / 16.0; 16];
    let mut total = Vec::new();
    for p in 0..4000 {
        let mut s = RngStream::new(1, channel::stream(channel::DRIVE, p));
        total.push(sample_levy_increments(&plan, &mut s, &dt).iter().sum::<f64>());
    }
    // Var L_1 = ∫ z² ν minus the dropped small-jump part
    let var = 1.0 / 0.8 - plan.residual_variance;
    assert!(stats::mean(&total).abs() < 4.0 * (var / 4000.0f64).sqrt());
    assert!((stats::variance(&total) / var - 1.0).abs() < 0.1, "{}", stats::variance(&total));
}
