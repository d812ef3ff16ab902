//! Lévy measures: moment and small-jump checks, the Lévy–Khintchine exponent,
//! and compensated jump sampling with a small-jump cutoff.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::expr::{Env, Expr, Program, Var};
use crate::fit::least_squares;
use crate::noise::RngStream;
use crate::quad::{gk15, integrate, integrate_to_origin, series_tail};

const REL_TOL: f64 = 1e-10;
/// Largest atom index searched when locating a jump-size threshold.
const MAX_INDEX: f64 = 1e15;
/// Default ceiling on the kept jump rate.
pub const DEFAULT_RATE_BUDGET: f64 = 1e7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LevyError {
    #[error("invalid measure: {0}")]
    Invalid(String),
    #[error("moment exponent {0} outside (0, 2]")]
    GammaRange(f64),
    #[error("need at least {need} grid points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("frequency grid spans {got:.2} decades, need at least 2")]
    NarrowGrid { got: f64 },
    #[error("non-convergent quadrature at xi = {0}")]
    Quadrature(f64),
    #[error("rate budget exceeded: kept jump rate {rate:.4e} > budget {budget:.4e}; increase var_tol")]
    RateBudget { rate: f64, budget: f64 },
    #[error("cutoff must be positive, got {0}")]
    Cutoff(f64),
}

/// Density of an absolutely continuous Lévy measure.
#[derive(Clone, Debug)]
pub enum DensityLaw {
    /// `|z|^{-1-λ}`.
    Power { lambda: f64 },
    /// An expression in `z`.
    Formula(Expr),
}

/// Atom generator of a purely atomic Lévy measure.
#[derive(Clone, Debug)]
pub enum AtomLaw {
    /// `(location, rate)` pairs.
    Finite(Vec<(f64, f64)>),
    /// `Σ_{n≥1} n^{λα-1} δ_{n^{-α}}`.
    Power { lambda: f64, alpha: f64 },
    /// Location and rate as expressions in `n`; `|location|` must decrease
    /// to 0 and both must extend smoothly to real `n` (used for the tail).
    Formula { location: Expr, rate: Expr },
}

#[derive(Clone, Debug)]
pub enum MeasureShape {
    /// Density on finitely many bounded intervals, none straddling 0.
    Density { law: DensityLaw, support: Vec<(f64, f64)> },
    Atomic(AtomLaw),
}

#[derive(Clone, Debug)]
enum Compiled {
    None,
    Density(Program),
    Atoms(Program, Program),
}

/// A Lévy measure with its declared exponents.
#[derive(Clone, Debug)]
pub struct LevyMeasure {
    pub shape: MeasureShape,
    /// Decay exponent λ of the lower bound on `∫(1 - cos ξz) ν(dz)`.
    pub lambda: f64,
    /// Moment exponent γ with `∫|z|^γ ν(dz) < ∞`.
    pub gamma: f64,
    pub c_lower: Option<f64>,
    pub xi0: Option<f64>,
    compiled: Compiled,
}

/// `|z| ∈ [lo, hi]` or `[lo, hi)`.
#[derive(Clone, Copy, Debug)]
struct Window {
    lo: f64,
    hi: f64,
    hi_inclusive: bool,
}

impl Window {
    const ALL: Window = Window { lo: 0.0, hi: f64::INFINITY, hi_inclusive: true };

    fn contains(&self, z: f64) -> bool {
        let a = z.abs();
        a >= self.lo && if self.hi_inclusive { a <= self.hi } else { a < self.hi }
    }
}

impl LevyMeasure {
    pub fn new(shape: MeasureShape, lambda: f64, gamma: f64) -> Result<Self, LevyError> {
        if !(lambda > 0.75 && lambda < 2.0) {
            return Err(LevyError::Invalid(format!("lambda = {lambda} outside (3/4, 2)")));
        }
        if !(1.0..=2.0).contains(&gamma) {
            return Err(LevyError::Invalid(format!("gamma = {gamma} outside [1, 2]")));
        }
        if gamma < lambda {
            return Err(LevyError::Invalid(format!("gamma = {gamma} below lambda = {lambda}")));
        }
        let compiled = match &shape {
            MeasureShape::Density { law, support } => {
                if support.is_empty() {
                    return Err(LevyError::Invalid("empty support".into()));
                }
                for &(a, b) in support {
                    if !(a < b && a.is_finite() && b.is_finite()) || (a < 0.0 && b > 0.0) {
                        return Err(LevyError::Invalid(format!(
                            "support interval ({a}, {b}) must be bounded and must not contain 0"
                        )));
                    }
                }
                match law {
                    DensityLaw::Power { .. } => Compiled::None,
                    DensityLaw::Formula(e) => {
                        only_vars(e, Var::Z, "density")?;
                        Compiled::Density(e.compile())
                    }
                }
            }
            MeasureShape::Atomic(AtomLaw::Finite(atoms)) => {
                if atoms.iter().any(|&(z, w)| z == 0.0 || !(w >= 0.0) || !z.is_finite()) {
                    return Err(LevyError::Invalid("atoms need nonzero finite locations and nonnegative rates".into()));
                }
                Compiled::None
            }
            MeasureShape::Atomic(AtomLaw::Power { alpha, .. }) => {
                if !(*alpha > 0.0) {
                    return Err(LevyError::Invalid(format!("atom exponent alpha = {alpha} must be positive")));
                }
                Compiled::None
            }
            MeasureShape::Atomic(AtomLaw::Formula { location, rate }) => {
                only_vars(location, Var::N, "atom location")?;
                only_vars(rate, Var::N, "atom rate")?;
                Compiled::Atoms(location.compile(), rate.compile())
            }
        };
        let nu = LevyMeasure { shape, lambda, gamma, c_lower: None, xi0: None, compiled };
        nu.audit()?;
        Ok(nu)
    }

    /// `|z|^{-1-λ} dz` on `(0, 1]`.
    pub fn power_density(lambda: f64, gamma: f64) -> Result<Self, LevyError> {
        Self::new(
            MeasureShape::Density { law: DensityLaw::Power { lambda }, support: vec![(0.0, 1.0)] },
            lambda,
            gamma,
        )
    }

    /// `|z|^{-1-λ} dz` on `[-1, 1] \ {0}`.
    pub fn symmetric_power_density(lambda: f64, gamma: f64) -> Result<Self, LevyError> {
        Self::new(
            MeasureShape::Density {
                law: DensityLaw::Power { lambda },
                support: vec![(-1.0, 0.0), (0.0, 1.0)],
            },
            lambda,
            gamma,
        )
    }

    /// `Σ_{n≥1} n^{λα-1} δ_{n^{-α}}`.
    pub fn power_atoms(lambda: f64, alpha: f64, gamma: f64) -> Result<Self, LevyError> {
        Self::new(MeasureShape::Atomic(AtomLaw::Power { lambda, alpha }), lambda, gamma)
    }

    pub fn finite(atoms: Vec<(f64, f64)>, lambda: f64, gamma: f64) -> Result<Self, LevyError> {
        Self::new(MeasureShape::Atomic(AtomLaw::Finite(atoms)), lambda, gamma)
    }

    /// `δ_1 + δ_{-1}`, which violates the lower decay condition.
    pub fn two_point() -> Self {
        Self::finite(vec![(1.0, 1.0), (-1.0, 1.0)], 1.0, 2.0).expect("two-point measure")
    }

    pub fn with_constants(mut self, c_lower: Option<f64>, xi0: Option<f64>) -> Self {
        self.c_lower = c_lower;
        self.xi0 = xi0;
        self
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self.shape, MeasureShape::Atomic(_))
    }

    fn audit(&self) -> Result<(), LevyError> {
        match &self.shape {
            MeasureShape::Density { support, .. } => {
                for &(a, b) in support {
                    for i in 1..64 {
                        let z = a + (b - a) * i as f64 / 64.0;
                        let f = self.density(z);
                        if !(f >= 0.0 && f.is_finite()) {
                            return Err(LevyError::Invalid(format!("density is {f} at z = {z}")));
                        }
                    }
                }
            }
            MeasureShape::Atomic(AtomLaw::Formula { .. }) => {
                let mut prev = f64::INFINITY;
                for k in 0..40 {
                    let n = (1u64 << k) as f64;
                    let (z, w) = self.atom(n);
                    if !(z.is_finite() && w.is_finite() && w >= 0.0 && z != 0.0) {
                        return Err(LevyError::Invalid(format!("atom {n} is ({z}, {w})")));
                    }
                    if z.abs() > prev {
                        return Err(LevyError::Invalid("atom locations must decrease in absolute value".into()));
                    }
                    prev = z.abs();
                }
            }
            MeasureShape::Atomic(_) => {}
        }
        let m2 = self.integrate(&|z| z * z, Window::ALL, 0.0);
        if !m2.is_finite() {
            return Err(LevyError::Invalid("second moment is infinite".into()));
        }
        Ok(())
    }

    fn density(&self, z: f64) -> f64 {
        match (&self.shape, &self.compiled) {
            (MeasureShape::Density { law: DensityLaw::Power { lambda }, .. }, _) => z.abs().powf(-1.0 - lambda),
            (_, Compiled::Density(p)) => p.eval(&Env { z, ..Env::default() }).unwrap_or(f64::NAN),
            _ => 0.0,
        }
    }

    /// `(location, rate)` of atom `n` of an infinite generator, at real `n`.
    fn atom(&self, n: f64) -> (f64, f64) {
        match (&self.shape, &self.compiled) {
            (MeasureShape::Atomic(AtomLaw::Power { lambda, alpha }), _) => {
                let z = if *alpha == 1.0 { 1.0 / n } else { n.powf(-alpha) };
                (z, n.powf(lambda * alpha - 1.0))
            }
            (_, Compiled::Atoms(loc, rate)) => {
                let env = Env { n, ..Env::default() };
                (loc.eval(&env).unwrap_or(f64::NAN), rate.eval(&env).unwrap_or(f64::NAN))
            }
            _ => unreachable!("atom() on a measure without an infinite generator"),
        }
    }

    /// Smallest `n ≥ 1` with `|z_n| < r` (or `≤ r`); `None` past the search cap.
    fn first_index_below(&self, r: f64, inclusive: bool) -> Option<u64> {
        let below = |n: f64| {
            let a = self.atom(n).0.abs();
            if inclusive {
                a <= r
            } else {
                a < r
            }
        };
        if below(1.0) {
            return Some(1);
        }
        let mut hi = 2.0;
        while !below(hi) {
            hi *= 2.0;
            if hi > MAX_INDEX {
                return None;
            }
        }
        let mut lo = hi / 2.0;
        while hi - lo > 1.0 {
            let mid = ((lo + hi) / 2.0).floor();
            if below(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi as u64)
    }

    /// `∫_{window} h(z) ν(dz)`; `freq` is the oscillation rate of `h`, used
    /// to decide where a series tail becomes smooth. `+∞` on divergence.
    fn integrate(&self, h: &dyn Fn(f64) -> f64, w: Window, freq: f64) -> f64 {
        match &self.shape {
            MeasureShape::Density { support, .. } => {
                let g = |z: f64| h(z) * self.density(z);
                let mut total = 0.0;
                for &(a, b) in support {
                    let (p, q) = if a >= 0.0 { (a.max(w.lo), b.min(w.hi)) } else { (a.max(-w.hi), b.min(-w.lo)) };
                    if !(p < q) {
                        continue;
                    }
                    let part = if p == 0.0 {
                        integrate_to_origin(g, q, REL_TOL).value()
                    } else if q == 0.0 {
                        integrate_to_origin(|u: f64| g(-u), -p, REL_TOL).value()
                    } else {
                        integrate(g, p, q, 0.0, REL_TOL).value
                    };
                    total += part;
                }
                total
            }
            MeasureShape::Atomic(AtomLaw::Finite(atoms)) => {
                atoms.iter().filter(|a| w.contains(a.0)).map(|&(z, r)| r * h(z)).sum()
            }
            MeasureShape::Atomic(_) => {
                let Some(start) = (if w.hi.is_infinite() {
                    Some(1)
                } else {
                    self.first_index_below(w.hi, w.hi_inclusive)
                }) else {
                    return 0.0;
                };
                let g = |n: f64| {
                    let (z, r) = self.atom(n);
                    r * h(z)
                };
                if w.lo > 0.0 {
                    let end = self.first_index_below(w.lo, false).unwrap_or(MAX_INDEX as u64);
                    return (start..end).map(|n| g(n as f64)).sum();
                }
                let smooth_from = if freq > 0.0 {
                    self.first_index_below(0.05 / freq, true).unwrap_or(1).min(10_000_000)
                } else {
                    0
                };
                series_tail(g, start, smooth_from, REL_TOL).value()
            }
        }
    }

    /// `∫ |z|^γ ν(dz)`; `+∞` when the integral diverges.
    pub fn moment_gamma(&self, gamma: f64) -> Result<f64, LevyError> {
        if !(gamma > 0.0 && gamma <= 2.0) {
            return Err(LevyError::GammaRange(gamma));
        }
        Ok(self.integrate(&|z: f64| z.abs().powf(gamma), Window::ALL, 0.0))
    }

    /// `∫_{|z| ≤ ε} z² ν(dz)`.
    pub fn small_mass(&self, eps: f64) -> f64 {
        self.integrate(&|z| z * z, Window { lo: 0.0, hi: eps, hi_inclusive: true }, 0.0)
    }

    /// `Ψ(ξ) = ∫ (1 - cos ξz) ν(dz)`.
    pub fn psi(&self, xi: f64) -> f64 {
        self.integrate(
            &|z| {
                let s = (0.5 * xi * z).sin();
                2.0 * s * s
            },
            Window::ALL,
            xi.abs(),
        )
    }

    /// `∫_{|z| ≥ ρ} (e^{iξz} - 1 - iξz) ν(dz)`, the log characteristic
    /// function of the compensated jump part at time 1 restricted to jumps of
    /// size at least `ρ` (`ρ = 0` for the full measure).
    pub fn char_exponent(&self, xi: f64, rho: f64) -> Complex64 {
        let w = Window { lo: rho, hi: f64::INFINITY, hi_inclusive: true };
        let re = -self.integrate(
            &|z| {
                let s = (0.5 * xi * z).sin();
                2.0 * s * s
            },
            w,
            xi.abs(),
        );
        let im = self.integrate(
            &|z| {
                let u = xi * z;
                if u.abs() < 1e-3 {
                    -u * u * u / 6.0 * (1.0 - u * u / 20.0)
                } else {
                    u.sin() - u
                }
            },
            w,
            xi.abs(),
        );
        Complex64::new(re, im)
    }

    /// `E e^{iξL_1}` for the compensated Lévy process with jumps `|z| ≥ ρ`.
    pub fn char_fn(&self, xi: f64, rho: f64) -> Complex64 {
        self.char_exponent(xi, rho).exp()
    }
}

fn only_vars(e: &Expr, allowed: Var, what: &str) -> Result<(), LevyError> {
    match e.free_vars().into_iter().find(|v| *v != allowed) {
        Some(v) => Err(LevyError::Invalid(format!(
            "{what} expression may only use `{}`, found `{}`",
            allowed.name(),
            v.name()
        ))),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Conditions on ν
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct DixReport {
    /// `(ε, ∫_{|z|≤ε} z² ν, ratio to ε^{2-λ})`.
    pub rows: Vec<(f64, f64, f64)>,
    pub c0_hat: f64,
    pub c1_hat: f64,
    pub pass: bool,
}

/// Two-sided small-jump variance scaling `c₀ε^{2-λ} ≤ ∫_{|z|≤ε} z² ν ≤ c₁ε^{2-λ}`.
pub fn check_dix(nu: &LevyMeasure, eps_grid: &[f64]) -> Result<DixReport, LevyError> {
    if eps_grid.len() < 8 {
        return Err(LevyError::TooFewPoints { need: 8, got: eps_grid.len() });
    }
    let rows: Vec<(f64, f64, f64)> = eps_grid
        .iter()
        .map(|&e| {
            let m = nu.small_mass(e);
            (e, m, m / e.powf(2.0 - nu.lambda))
        })
        .collect();
    let c0_hat = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let c1_hat = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    Ok(DixReport { rows, c0_hat, c1_hat, pass: c0_hat > 0.0 && c1_hat.is_finite() })
}

pub fn dyadic_grid(k_lo: i32, k_hi: i32) -> Vec<f64> {
    (k_lo..=k_hi).map(|k| 0.5f64.powi(k)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tasoeur1Report {
    /// `(ξ, Ψ(ξ))`.
    pub rows: Vec<(f64, f64)>,
    pub lambda_hat: f64,
    /// `min Ψ(ξ)/|ξ|^λ` over the grid.
    pub c_hat: f64,
    /// `max Ψ(ξ)/|ξ|^γ` over the grid.
    pub upper_c: f64,
    pub pass: bool,
}

/// Lower decay `Ψ(ξ) ≥ c|ξ|^λ` and upper growth `Ψ(ξ) ≤ C|ξ|^γ` on a grid.
///
/// A finite grid cannot certify an infimum, so `pass` asks for a positive
/// `c_hat` (relative to the largest ratio) and a fitted growth exponent within
/// 0.1 of the declared λ.
pub fn check_tasoeur1(nu: &LevyMeasure, xi_grid: &[f64]) -> Result<Tasoeur1Report, LevyError> {
    if xi_grid.len() < 2 {
        return Err(LevyError::TooFewPoints { need: 2, got: xi_grid.len() });
    }
    let lo = xi_grid.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
    let hi = xi_grid.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let decades = (hi / lo).log10();
    if !(decades >= 2.0 - 1e-9) {
        return Err(LevyError::NarrowGrid { got: decades });
    }
    let mut rows = Vec::with_capacity(xi_grid.len());
    for &xi in xi_grid {
        let p = nu.psi(xi);
        if !p.is_finite() {
            return Err(LevyError::Quadrature(xi));
        }
        rows.push((xi, p));
    }
    let ratios: Vec<f64> = rows.iter().map(|&(x, p)| p / x.abs().powf(nu.lambda)).collect();
    let c_hat = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let c_max = ratios.iter().cloned().fold(0.0, f64::max);
    let upper_c = rows.iter().map(|&(x, p)| p / x.abs().powf(nu.gamma)).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.1 > 0.0).map(|&(x, p)| (x.abs().ln(), p.ln())).collect();
    let lambda_hat = if pts.len() >= 2 { least_squares(&pts).slope } else { 0.0 };
    let pass = c_hat > 1e-9 * c_max && (lambda_hat - nu.lambda).abs() <= 0.1 && upper_c.is_finite();
    Ok(Tasoeur1Report { rows, lambda_hat, c_hat, upper_c, pass })
}

// ---------------------------------------------------------------------------
// Truncation and sampling
// ---------------------------------------------------------------------------

/// Jumps `|z| ≥ rho` are simulated exactly; smaller jumps are dropped (their
/// compensated sum has mean zero) or replaced by a Gaussian of the same
/// variance when `gaussian_residual` is set.
#[derive(Clone, Debug)]
pub struct TruncationPlan {
    pub rho: f64,
    /// `ν({|z| ≥ ρ})`.
    pub kept_rate: f64,
    /// `∫_{|z|<ρ} z² ν(dz)`.
    pub residual_variance: f64,
    /// `∫_{|z|≥ρ} z² ν(dz)`.
    pub kept_variance: f64,
    /// `-∫_{|z|≥ρ} z ν(dz)` per unit time.
    pub compensation_drift: f64,
    pub gaussian_residual: bool,
    sampler: Arc<JumpSampler>,
}

#[derive(Debug)]
enum JumpSampler {
    Empty,
    /// Cumulative normalized weights.
    Atoms { z: Vec<f64>, cum: Vec<f64> },
    Cells(Vec<Cell>),
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    /// Range of `|z|`.
    a: f64,
    b: f64,
    sign: f64,
    /// Local power-law exponent of the density in `|z|`.
    p: f64,
    cum: f64,
}

impl Cell {
    fn sample(&self, u: f64) -> f64 {
        let q = self.p + 1.0;
        let s = if !self.p.is_finite() {
            self.a + u * (self.b - self.a)
        } else if q.abs() < 1e-9 {
            self.a * (self.b / self.a).powf(u)
        } else {
            let (aq, bq) = (self.a.powf(q), self.b.powf(q));
            (aq + u * (bq - aq)).powf(1.0 / q)
        };
        self.sign * s.clamp(self.a, self.b)
    }
}

impl JumpSampler {
    fn build(nu: &LevyMeasure, rho: f64, kept_rate: f64) -> JumpSampler {
        if kept_rate <= 0.0 {
            return JumpSampler::Empty;
        }
        match &nu.shape {
            MeasureShape::Atomic(law) => {
                let atoms: Vec<(f64, f64)> = match law {
                    AtomLaw::Finite(a) => a.iter().filter(|a| a.0.abs() >= rho && a.1 > 0.0).cloned().collect(),
                    _ => {
                        let end = nu.first_index_below(rho, false).unwrap_or(1);
                        (1..end).map(|n| nu.atom(n as f64)).filter(|a| a.1 > 0.0).collect()
                    }
                };
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                let mut acc = 0.0;
                let mut cum = Vec::with_capacity(atoms.len());
                for a in &atoms {
                    acc += a.1 / total;
                    cum.push(acc);
                }
                if let Some(last) = cum.last_mut() {
                    *last = 1.0;
                }
                JumpSampler::Atoms { z: atoms.iter().map(|a| a.0).collect(), cum }
            }
            MeasureShape::Density { support, .. } => {
                let mut cells = Vec::new();
                for &(a, b) in support {
                    let (sign, lo, hi) = if a >= 0.0 { (1.0, a.max(rho), b) } else { (-1.0, (-b).max(rho), -a) };
                    if !(lo < hi) {
                        continue;
                    }
                    let octaves = (hi / lo).log2().max(1.0);
                    let n = ((256.0 * octaves) as usize).min(1 << 16);
                    let geometric = lo > 0.0 && hi / lo > 4.0;
                    for i in 0..n {
                        let node = |k: usize| {
                            if geometric {
                                lo * (hi / lo).powf(k as f64 / n as f64)
                            } else {
                                lo + (hi - lo) * k as f64 / n as f64
                            }
                        };
                        let (ca, cb) = (node(i), if i + 1 == n { hi } else { node(i + 1) });
                        let f = |s: f64| nu.density(sign * s);
                        let mass = gk15(&f, ca, cb).0.max(0.0);
                        let (fa, fb) = (f(ca), f(cb));
                        let p = if fa > 0.0 && fb > 0.0 && ca > 0.0 {
                            (fb / fa).ln() / (cb / ca).ln()
                        } else {
                            f64::NAN
                        };
                        cells.push(Cell { a: ca, b: cb, sign, p, cum: mass });
                    }
                }
                let total: f64 = cells.iter().map(|c| c.cum).sum();
                let mut acc = 0.0;
                for c in cells.iter_mut() {
                    acc += c.cum / total;
                    c.cum = acc;
                }
                if let Some(c) = cells.last_mut() {
                    c.cum = 1.0;
                }
                JumpSampler::Cells(cells)
            }
        }
    }

    #[inline]
    fn sample(&self, rng: &mut RngStream) -> f64 {
        match self {
            JumpSampler::Empty => 0.0,
            JumpSampler::Atoms { z, cum } => {
                let u = rng.uniform();
                let i = cum.partition_point(|&c| c <= u).min(z.len() - 1);
                z[i]
            }
            JumpSampler::Cells(cells) => {
                let u = rng.uniform();
                let i = cells.partition_point(|c| c.cum <= u).min(cells.len() - 1);
                cells[i].sample(rng.uniform())
            }
        }
    }
}

impl TruncationPlan {
    /// Plan with an explicit cutoff: jumps with `|z| ≥ rho` are kept.
    pub fn with_cutoff(nu: &LevyMeasure, rho: f64, rate_budget: f64) -> Result<Self, LevyError> {
        if !(rho > 0.0) {
            return Err(LevyError::Cutoff(rho));
        }
        let kept = Window { lo: rho, hi: f64::INFINITY, hi_inclusive: true };
        let kept_rate = nu.integrate(&|_| 1.0, kept, 0.0);
        if !(kept_rate <= rate_budget) {
            return Err(LevyError::RateBudget { rate: kept_rate, budget: rate_budget });
        }
        let residual_variance = nu.integrate(&|z| z * z, Window { lo: 0.0, hi: rho, hi_inclusive: false }, 0.0);
        let kept_variance = nu.integrate(&|z| z * z, kept, 0.0);
        let compensation_drift = -nu.integrate(&|z| z, kept, 0.0);
        let sampler = Arc::new(JumpSampler::build(nu, rho, kept_rate));
        Ok(TruncationPlan {
            rho,
            kept_rate,
            residual_variance,
            kept_variance,
            compensation_drift,
            gaussian_residual: false,
            sampler,
        })
    }

    pub fn with_gaussian_residual(mut self, on: bool) -> Self {
        self.gaussian_residual = on;
        self
    }

    /// One compensated increment over a step of length `dt`.
    #[inline]
    pub fn increment(&self, rng: &mut RngStream, dt: f64) -> f64 {
        let mut dl = self.compensation_drift * dt;
        if self.kept_rate > 0.0 {
            let k = rng.poisson(self.kept_rate * dt);
            for _ in 0..k {
                dl += self.sampler.sample(rng);
            }
        }
        if self.gaussian_residual && self.residual_variance > 0.0 {
            dl += (self.residual_variance * dt).sqrt() * rng.normal();
        }
        dl
    }

    /// Bound `ξ² Var_residual / 2` on the char-fn error caused by dropping small jumps.
    pub fn truncation_bias(&self, xi: f64) -> f64 {
        if self.gaussian_residual {
            0.0
        } else {
            0.5 * xi * xi * self.residual_variance
        }
    }
}

/// Largest dyadic cutoff `ρ = 2^{-k}`, `k ≥ 1`, whose dropped variance is at
/// most `var_tol`.
pub fn plan_truncation(nu: &LevyMeasure, var_tol: f64, rate_budget: f64) -> Result<TruncationPlan, LevyError> {
    if !(var_tol > 0.0) {
        return Err(LevyError::Invalid(format!("var_tol must be positive, got {var_tol}")));
    }
    for k in 1..=60 {
        let rho = 0.5f64.powi(k);
        let resid = nu.integrate(&|z| z * z, Window { lo: 0.0, hi: rho, hi_inclusive: false }, 0.0);
        if resid <= var_tol * (1.0 + 1e-9) {
            return TruncationPlan::with_cutoff(nu, rho, rate_budget);
        }
    }
    Err(LevyError::Invalid(format!("no cutoff above 2^-60 reaches var_tol = {var_tol}")))
}

/// Compensated increments over consecutive steps of lengths `dt_grid`.
pub fn sample_levy_increments(plan: &TruncationPlan, stream: &mut RngStream, dt_grid: &[f64]) -> Vec<f64> {
    dt_grid.iter().map(|&dt| plan.increment(stream, dt)).collect()
}

/// `π²/6`, handy in checks of the `λ = 1` atomic measure.
pub const ZETA2: f64 = PI * PI / 6.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_moments() {
        let nu = LevyMeasure::power_density(1.0, 2.0).unwrap();
        assert!((nu.moment_gamma(2.0).unwrap() - 1.0).abs() < 1e-8);
        assert!((nu.moment_gamma(1.5).unwrap() - 2.0).abs() < 1e-6);
        assert!(nu.moment_gamma(0.9).unwrap().is_infinite());
        assert!(nu.moment_gamma(1.0).unwrap().is_infinite());
        assert!(nu.moment_gamma(2.5).is_err());
        assert!((nu.small_mass(0.25) - 0.25).abs() < 1e-8);
    }

    #[test]
    fn atomic_series() {
        let nu = LevyMeasure::power_atoms(1.0, 1.0, 2.0).unwrap();
        assert!((nu.moment_gamma(2.0).unwrap() - ZETA2).abs() < 1e-7);
        assert!((nu.small_mass(0.5) - (ZETA2 - 1.0)).abs() < 1e-7);
        assert!(nu.moment_gamma(1.0).unwrap().is_infinite());
        let d = LevyMeasure::finite(vec![(1.0, 1.0)], 1.0, 2.0).unwrap();
        assert_eq!(d.small_mass(0.5), 0.0);
    }

    #[test]
    fn formula_generators_match_builtins() {
        let loc = crate::parse_expr("1/n").unwrap();
        let rate = crate::parse_expr("1").unwrap();
        let f = LevyMeasure::new(MeasureShape::Atomic(AtomLaw::Formula { location: loc, rate }), 1.0, 2.0).unwrap();
        assert!((f.moment_gamma(2.0).unwrap() - ZETA2).abs() < 1e-7);
        let dens = crate::parse_expr("z^(-2)").unwrap();
        let g = LevyMeasure::new(
            MeasureShape::Density { law: DensityLaw::Formula(dens), support: vec![(0.0, 1.0)] },
            1.0,
            2.0,
        )
        .unwrap();
        assert!((g.small_mass(0.25) - 0.25).abs() < 1e-8);
        assert!((g.psi(100.0) - LevyMeasure::power_density(1.0, 2.0).unwrap().psi(100.0)).abs() < 1e-6);
    }

    #[test]
    fn invalid_measures() {
        assert!(LevyMeasure::power_density(0.5, 2.0).is_err());
        assert!(LevyMeasure::power_density(1.5, 1.2).is_err());
        assert!(LevyMeasure::finite(vec![(0.0, 1.0)], 1.0, 2.0).is_err());
        let bad = MeasureShape::Density { law: DensityLaw::Power { lambda: 1.0 }, support: vec![(-1.0, 1.0)] };
        assert!(LevyMeasure::new(bad, 1.0, 2.0).is_err());
    }

    #[test]
    fn psi_values() {
        let nu = LevyMeasure::power_density(1.0, 2.0).unwrap();
        let p = nu.psi(100.0);
        assert!((140.0..=160.0).contains(&p), "{p}");
        let two = LevyMeasure::two_point();
        assert!((two.psi(PI) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_plans() {
        let nu = LevyMeasure::power_density(1.0, 2.0).unwrap();
        let plan = plan_truncation(&nu, 0.5f64.powi(6), DEFAULT_RATE_BUDGET).unwrap();
        assert_eq!(plan.rho, 0.5f64.powi(6));
        assert!((plan.residual_variance - 0.5f64.powi(6)).abs() < 1e-9);
        assert!((plan.kept_rate - 63.0).abs() < 1e-7);
        let d = LevyMeasure::finite(vec![(1.0, 1.0)], 1.0, 2.0).unwrap();
        let plan = plan_truncation(&d, 1e-3, DEFAULT_RATE_BUDGET).unwrap();
        assert!(plan.rho < 1.0);
        assert_eq!((plan.kept_rate, plan.residual_variance, plan.compensation_drift), (1.0, 0.0, -1.0));
        let atoms = LevyMeasure::power_atoms(1.0, 1.0, 2.0).unwrap();
        let plan = TruncationPlan::with_cutoff(&atoms, 0.1, DEFAULT_RATE_BUDGET).unwrap();
        assert_eq!(plan.kept_rate, 10.0);
        let e = plan_truncation(&nu, 1e-9, 1e3).unwrap_err();
        assert!(matches!(e, LevyError::RateBudget { .. }));
    }

    #[test]
    fn empty_plan_gives_drift_only() {
        let d = LevyMeasure::finite(vec![(0.01, 5.0)], 1.0, 2.0).unwrap();
        let plan = TruncationPlan::with_cutoff(&d, 0.5, DEFAULT_RATE_BUDGET).unwrap();
        assert_eq!(plan.kept_rate, 0.0);
        let mut rng = RngStream::new(3, 0);
        let inc = sample_levy_increments(&plan, &mut rng, &[0.1; 50]);
        assert!(inc.iter().all(|&v| v == 0.0));
    }
}
