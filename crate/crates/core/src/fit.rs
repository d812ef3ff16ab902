//! Log–log exponent fits with bootstrap confidence intervals.

use thiserror::Error;

use crate::noise::{channel, RngStream};
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares on `(x, y)` points.
pub fn least_squares(points: &[(f64, f64)]) -> LineFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    LineFit { slope, intercept, r2 }
}

/// Power-law fit `moment ≈ C·scale^slope` in log–log coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ExponentFit {
    /// `(log scale, log moment)`.
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Percentile bootstrap interval; equal to `(slope, slope)` without resampling.
    pub slope_ci: (f64, f64),
}

impl ExponentFit {
    /// The fitted constant `C = e^{intercept}`.
    pub fn constant(&self) -> f64 {
        self.intercept.exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FitOutcome {
    Fitted(ExponentFit),
    /// Some sample moment is exactly zero, so the logarithm is undefined.
    ZeroDefect,
}

impl FitOutcome {
    pub fn fitted(&self) -> Option<&ExponentFit> {
        match self {
            FitOutcome::Fitted(f) => Some(f),
            FitOutcome::ZeroDefect => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {need} scales, got {got}")]
    TooFewScales { need: usize, got: usize },
    #[error("scales must span at least {need_octaves} dyadic octaves (got {got:.2})")]
    NarrowRange { need_octaves: f64, got: f64 },
    #[error("non-positive scale {0}")]
    BadScale(f64),
    #[error("sample columns have unequal lengths")]
    Ragged,
}

/// Fits an exact `(scale, moment)` table.
pub fn fit_power_law(scales: &[f64], moments: &[f64]) -> Result<FitOutcome, FitError> {
    if scales.len() < 2 {
        return Err(FitError::TooFewScales { need: 2, got: scales.len() });
    }
    if let Some(&s) = scales.iter().find(|&&s| !(s > 0.0)) {
        return Err(FitError::BadScale(s));
    }
    if moments.iter().any(|&m| m <= 0.0) {
        return Ok(FitOutcome::ZeroDefect);
    }
    let points: Vec<(f64, f64)> = scales.iter().zip(moments).map(|(s, m)| (s.ln(), m.ln())).collect();
    let line = least_squares(&points);
    Ok(FitOutcome::Fitted(ExponentFit {
        points,
        slope: line.slope,
        intercept: line.intercept,
        r2: line.r2,
        slope_ci: (line.slope, line.slope),
    }))
}

/// Requirements on the scale set of a sampled fit.
#[derive(Clone, Copy, Debug)]
pub struct ScaleRequirement {
    pub min_scales: usize,
    pub min_octaves: f64,
}

impl ScaleRequirement {
    pub const NONE: Self = ScaleRequirement { min_scales: 2, min_octaves: 0.0 };

    pub fn check(&self, scales: &[f64]) -> Result<(), FitError> {
        if scales.len() < self.min_scales {
            return Err(FitError::TooFewScales { need: self.min_scales, got: scales.len() });
        }
        if let Some(&s) = scales.iter().find(|&&s| !(s > 0.0)) {
            return Err(FitError::BadScale(s));
        }
        let lo = scales.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scales.iter().cloned().fold(0.0, f64::max);
        let octaves = (hi / lo).log2();
        if octaves + 1e-9 < self.min_octaves {
            return Err(FitError::NarrowRange { need_octaves: self.min_octaves, got: octaves });
        }
        Ok(())
    }
}

/// Fits `log mean(sample column j)` against `log scales[j]`; `columns[j][i]`
/// is the value of path `i` at scale `j`. The slope interval comes from
/// `n_boot` resamplings of whole paths.
pub fn fit_sampled(
    scales: &[f64],
    columns: &[Vec<f64>],
    req: ScaleRequirement,
    n_boot: usize,
    seed: u64,
) -> Result<FitOutcome, FitError> {
    req.check(scales)?;
    if columns.len() != scales.len() {
        return Err(FitError::Ragged);
    }
    let n = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != n) || n == 0 {
        return Err(FitError::Ragged);
    }
    let moments: Vec<f64> = columns.iter().map(|c| stats::mean(c)).collect();
    let outcome = fit_power_law(scales, &moments)?;
    let FitOutcome::Fitted(mut fit) = outcome else {
        return Ok(FitOutcome::ZeroDefect);
    };
    if n_boot > 0 {
        let mut rng = RngStream::new(seed, channel::stream(channel::BOOTSTRAP, 0));
        let mut slopes = Vec::with_capacity(n_boot);
        let mut idx = vec![0usize; n];
        for _ in 0..n_boot {
            for i in idx.iter_mut() {
                *i = rng.below(n as u64) as usize;
            }
            let m: Vec<f64> = columns
                .iter()
                .map(|c| idx.iter().map(|&i| c[i]).sum::<f64>() / n as f64)
                .collect();
            if let Ok(FitOutcome::Fitted(f)) = fit_power_law(scales, &m) {
                slopes.push(f.slope);
            }
        }
        if slopes.len() >= 10 {
            slopes.sort_by(f64::total_cmp);
            let q = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round()) as usize];
            fit.slope_ci = (q(0.025), q(0.975));
        }
    }
    Ok(FitOutcome::Fitted(fit))
}
