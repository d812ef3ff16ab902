use acert_core::fourier::*;
use acert_core::noise::channel;
use acert_core::{stats, RngStream};
use statrs::distribution::{Continuous, Normal};

fn normals(seed: u64, idx: u64, n: usize) -> Vec<f64> {
    let mut rng = RngStream::new(seed, channel::stream(channel::MISC, idx));
    let mut x = vec![0.0; n];
    rng.fill_normal(&mut x);
    x
}

/// Each seed gives one bias z-score from 200 replications; across seeds
/// the z-scores should look standard normal.
#[test]
fn unbiased_modulus_is_calibrated() {
    let xi = [0.5, 1.0, 2.0];
    let mut zs = vec![Vec::new(); xi.len()];
    for seed in 0..100 {
        let mut draws = vec![Vec::new(); xi.len()];
        for r in 0..200 {
            let x = normals(seed, r, 200);
            let est = estimate_charfn(&x, &[], Localization::None, &xi).unwrap();
            for k in 0..xi.len() {
                draws[k].push(est.modulus_sq_unbiased[k]);
            }
        }
        for k in 0..xi.len() {
            zs[k].push((stats::mean(&draws[k]) - (-xi[k] * xi[k]).exp()) / stats::std_err(&draws[k]));
        }
    }
    for (k, z) in zs.iter().enumerate() {
        // mean of 100 standard normals has sd 0.1
        assert!(stats::mean(z).abs() < 0.35, "xi {}: mean z {}", xi[k], stats::mean(z));
        let sd = stats::variance(z).sqrt();
        assert!((0.8..1.2).contains(&sd), "xi {}: sd z {sd}", xi[k]);
    }
}

#[test]
fn plain_modulus_is_biased_upward() {
    // |m|² overshoots by Var/n; the correction removes exactly that
    let x = normals(3, 0, 400);
    let est = estimate_charfn(&x, &[], Localization::None, &[1.0]).unwrap();
    let gap = est.estimate[0].norm_sqr() - est.modulus_sq_unbiased[0];
    assert!(gap > 0.0 && gap < 2.0 / 400.0, "{gap}");
}

#[test]
fn gaussian_density_reconstruction() {
    let x = normals(5, 0, 100_000);
    let v = 0.01;
    let xi_end = (2.0 * (2e6f64).ln() / v).sqrt();
    let n = (xi_end / 0.05).ceil() as usize + 1;
    let grid = stats::linspace(0.0, (n - 1) as f64 * 0.05, n);
    let est = estimate_charfn(&x, &[], Localization::None, &grid).unwrap();
    let xs = stats::linspace(-4.0, 4.0, 81);
    let d = reconstruct_density(&est, v, &xs).unwrap();
    let exact = Normal::new(0.0, (1.0 + v).sqrt()).unwrap();
    for (x, y) in xs.iter().zip(&d.values) {
        assert!((y - exact.pdf(*x)).abs() < 0.01, "x {x}: {y} vs {}", exact.pdf(*x));
    }
    assert!((d.total_mass - 1.0).abs() < 0.01, "{}", d.total_mass);
}

#[test]
fn reconstruction_rejects_short_grid() {
    let x = normals(5, 1, 1000);
    let est = estimate_charfn(&x, &[], Localization::None, &stats::linspace(0.0, 5.0, 101)).unwrap();
    assert!(matches!(reconstruct_density(&est, 0.01, &[0.0]), Err(FourierError::EdgeMass { .. })));
}

#[test]
fn gaussian_sample_certifies_and_tail_saturates() {
    let x = normals(8, 0, 20_000);
    let est = estimate_charfn(&x, &[], Localization::None, &default_xi_grid(1000.0, 60)).unwrap();
    let rep = certify_decay(&est, Variant::Brownian, &BoundParams { theta: 1.0, ..Default::default() }).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!(rep.rows.iter().all(|r| r.margin >= 0.0));
    let l2 = l2_tail(&est, &[1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0]);
    assert!(l2.saturated(0.01), "{:?}", l2.rows);
    // ∫|φ|² over the line is √π; the proxy is a finite-sample version
    assert!((rep.l2_proxy / std::f64::consts::PI.sqrt() - 1.0).abs() < 0.05, "{}", rep.l2_proxy);
}

#[test]
fn lattice_law_fails() {
    // integer-valued samples have a periodic characteristic function
    let x: Vec<f64> = normals(9, 0, 20_000).iter().map(|v| (2.0 * v).round()).collect();
    let est = estimate_charfn(&x, &[], Localization::None, &default_xi_grid(1000.0, 60)).unwrap();
    let rep = certify_decay(&est, Variant::Brownian, &BoundParams { theta: 1.0, ..Default::default() }).unwrap();
    assert!(!rep.pass);
    let l2 = l2_tail(&est, &[1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0]);
    assert!(!l2.saturated(0.01));
}
