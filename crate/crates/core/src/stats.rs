//! Order-fixed reductions.
//!
//! Ensembles are collected in path order before any reduction, and every sum
//! here is a pairwise sum over fixed 256-element chunks, so results do not
//! depend on how many workers produced the samples.

const CHUNK: usize = 256;

/// Pairwise sum with a fixed split pattern.
pub fn sum(v: &[f64]) -> f64 {
    if v.len() <= CHUNK {
        return v.iter().sum();
    }
    let mid = (v.len() / 2).next_multiple_of(CHUNK).min(v.len());
    sum(&v[..mid]) + sum(&v[mid..])
}

pub fn sum_by<F: Fn(f64) -> f64>(v: &[f64], f: F) -> f64 {
    sum_by_dyn(v, &f)
}

fn sum_by_dyn(v: &[f64], f: &dyn Fn(f64) -> f64) -> f64 {
    if v.len() <= CHUNK {
        return v.iter().map(|&x| f(x)).sum();
    }
    let mid = (v.len() / 2).next_multiple_of(CHUNK).min(v.len());
    sum_by_dyn(&v[..mid], f) + sum_by_dyn(&v[mid..], f)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    sum(v) / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    sum_by(v, |x| (x - m) * (x - m)) / (n - 1) as f64
}

pub fn std_err(v: &[f64]) -> f64 {
    (variance(v) / v.len() as f64).sqrt()
}

/// Pearson sample correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ma = mean(a);
    let mb = mean(b);
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let cov = sum(&prod);
    let va = sum_by(a, |x| (x - ma) * (x - ma));
    let vb = sum_by(b, |y| (y - mb) * (y - mb));
    cov / (va * vb).sqrt()
}

/// Trapezoid rule on a possibly non-uniform sorted grid.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..10_001).map(|i| (i as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((sum(&v) - naive).abs() < 1e-9);
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(variance(&[1.0, 2.0, 3.0]), 1.0);
    }

    #[test]
    fn trapezoid_exact_for_linear() {
        let x = [0.0, 0.5, 2.0];
        let y = [1.0, 2.0, 5.0];
        assert!((trapezoid(&x, &y) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn grids() {
        let g = logspace(1.0, 1000.0, 4);
        assert!((g[1] - 10.0).abs() < 1e-9 && g[3] == 1000.0);
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
    }
}
