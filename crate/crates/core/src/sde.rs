//! Euler–Maruyama simulation, the one-step frozen-coefficient coupling, and
//! exponent recovery for the moment estimates.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{AggregateState, CoeffSpec, Env, EvalError, PathAggregate};
use crate::fit::{fit_sampled, FitError, FitOutcome, ScaleRequirement};
use crate::levy::{LevyMeasure, TruncationPlan};
use crate::noise::{channel, RngStream};
use crate::stats;

/// Bootstrap resamples used for slope intervals.
pub const N_BOOT: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("path {path}, step {step}: {source}")]
    Eval { path: usize, step: usize, source: EvalError },
    #[error("path {path}, step {step}: state became non-finite")]
    NonFinite { path: usize, step: usize },
    #[error("path {path}, step {step}: kappa = {value} below declared floor kappa0 = {kappa0}")]
    KappaFloor { path: usize, step: usize, value: f64, kappa0: f64 },
    #[error("grid: {0}")]
    Grid(String),
    #[error("spec: {0}")]
    Spec(String),
}

#[derive(Debug, Error)]
pub enum CoupleError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// `dX = σ(X) dB + b(X) dt`.
#[derive(Clone, Debug)]
pub struct BrownianSdeSpec {
    pub sigma: CoeffSpec,
    pub b: CoeffSpec,
    pub x0: f64,
    pub horizon: f64,
}

impl BrownianSdeSpec {
    pub fn new(sigma: CoeffSpec, b: CoeffSpec, x0: f64) -> Self {
        BrownianSdeSpec { sigma, b, x0, horizon: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub enum AuxProcessSpec {
    /// `dH = -rate·H dt + vol dW'`, simulated with its exact transition.
    OrnsteinUhlenbeck { rate: f64, vol: f64, h0: f64 },
    /// `H_t` is a path aggregate of `X`.
    PathFunctional(PathAggregate),
    Constant { h0: f64 },
}

/// `dX = σ(X) κ(t, aggregates, H) dB + b(t, X, aggregates, H) dt`.
#[derive(Clone, Debug)]
pub struct PathDepSdeSpec {
    pub sigma: CoeffSpec,
    pub kappa: CoeffSpec,
    pub b: CoeffSpec,
    pub aggregates: Vec<PathAggregate>,
    pub aux: AuxProcessSpec,
    pub kappa0: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub eta: f64,
    pub x0: f64,
    pub horizon: f64,
}

impl PathDepSdeSpec {
    /// `min(2θ₁, θ₂, ηθ₃, 1)`.
    pub fn derived_theta(&self) -> f64 {
        (2.0 * self.theta1).min(self.theta2).min(self.eta * self.theta3).min(1.0)
    }
}

/// `dX = σ(X_-) dL + b(X) dt` with `L` a compensated pure-jump Lévy process.
#[derive(Clone, Debug)]
pub struct LevySdeSpec {
    pub sigma: CoeffSpec,
    pub b: CoeffSpec,
    pub nu: LevyMeasure,
    pub x0: f64,
    /// Hölder exponent of `b`; 0 for measurable-only.
    pub alpha: f64,
    pub horizon: f64,
}

impl LevySdeSpec {
    /// `min(θ, γ + α - 1)`.
    pub fn zeta(&self) -> f64 {
        let theta = self.sigma.holder_theta.unwrap_or(0.0);
        theta.min(self.nu.gamma + self.alpha - 1.0)
    }

    /// `ζ > 3γ/(2λ) - 1`, needed for certification.
    pub fn zeta_admissible(&self) -> bool {
        self.zeta() > 1.5 * self.nu.gamma / self.nu.lambda - 1.0
    }
}

/// A simulated SDE model with its driving noise.
#[derive(Clone, Copy, Debug)]
pub enum SdeModel<'a> {
    Brownian(&'a BrownianSdeSpec),
    PathDep(&'a PathDepSdeSpec),
    Levy(&'a LevySdeSpec, &'a TruncationPlan),
}

impl SdeModel<'_> {
    pub fn variant(&self) -> &'static str {
        match self {
            SdeModel::Brownian(_) => "brownian",
            SdeModel::PathDep(_) => "pathdep",
            SdeModel::Levy(..) => "levy",
        }
    }

    fn horizon(&self) -> f64 {
        match self {
            SdeModel::Brownian(s) => s.horizon,
            SdeModel::PathDep(s) => s.horizon,
            SdeModel::Levy(s, _) => s.horizon,
        }
    }

    fn sigma(&self) -> &CoeffSpec {
        match self {
            SdeModel::Brownian(s) => &s.sigma,
            SdeModel::PathDep(s) => &s.sigma,
            SdeModel::Levy(s, _) => &s.sigma,
        }
    }
}

// ---------------------------------------------------------------------------
// Path engine
// ---------------------------------------------------------------------------

struct PathState {
    x: f64,
    h: f64,
    aggs: Vec<AggregateState>,
    agg_vals: Vec<f64>,
    aux_agg: Option<AggregateState>,
    drive: RngStream,
    aux: RngStream,
}

/// What to record along each path.
#[derive(Clone, Debug, Default)]
struct Recording {
    /// Steps at which coefficients are frozen for the coupling.
    freeze_steps: Vec<usize>,
    /// Steps at which the state is observed.
    obs_steps: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
struct PathOut {
    x: f64,
    sigma_abs: f64,
    sup_sq: f64,
    z: Vec<f64>,
    x_freeze: Vec<f64>,
    sigma_freeze: Vec<f64>,
    obs: Vec<f64>,
}

fn n_steps(horizon: f64, h: f64) -> Result<usize, SimError> {
    if !(h > 0.0 && horizon > 0.0) {
        return Err(SimError::Grid(format!("step {h} and horizon {horizon} must be positive")));
    }
    let n = (horizon / h).round();
    if (n * h - horizon).abs() > 1e-9 * horizon {
        return Err(SimError::Grid(format!("horizon {horizon} is not a multiple of h = {h}")));
    }
    Ok(n as usize)
}

/// Number of steps in a time span that must be a multiple of `h`.
fn aligned_steps(span: f64, h: f64, what: &str) -> Result<usize, SimError> {
    let m = (span / h).round();
    if (m * h - span).abs() > 1e-9 * span.max(h) {
        return Err(SimError::Grid(format!("{what} = {span} is not a multiple of h = {h}")));
    }
    Ok(m as usize)
}

impl SdeModel<'_> {
    fn start(&self, path: usize, seed: u64) -> Result<PathState, SimError> {
        let ev = |source| SimError::Eval { path, step: 0, source };
        let drive = RngStream::new(seed, channel::stream(channel::DRIVE, path as u64));
        let aux = RngStream::new(seed, channel::stream(channel::AUX, path as u64));
        let (x, h, aggs, aux_agg) = match self {
            SdeModel::Brownian(s) => (s.x0, 0.0, Vec::new(), None),
            SdeModel::Levy(s, _) => (s.x0, 0.0, Vec::new(), None),
            SdeModel::PathDep(s) => {
                let aggs = s.aggregates.iter().map(|a| a.start(s.x0)).collect::<Result<Vec<_>, _>>().map_err(ev)?;
                let (h, aux_agg) = match &s.aux {
                    AuxProcessSpec::OrnsteinUhlenbeck { h0, .. } | AuxProcessSpec::Constant { h0 } => (*h0, None),
                    AuxProcessSpec::PathFunctional(a) => {
                        let st = a.start(s.x0).map_err(ev)?;
                        (a.value(&st), Some(st))
                    }
                };
                (s.x0, h, aggs, aux_agg)
            }
        };
        let agg_vals = match self {
            SdeModel::PathDep(s) => s.aggregates.iter().zip(&aggs).map(|(a, st)| a.value(st)).collect(),
            _ => Vec::new(),
        };
        Ok(PathState { x, h, aggs, agg_vals, aux_agg, drive, aux })
    }

    /// `(diffusion, drift)` at the left endpoint of step `k`.
    #[inline]
    fn coeffs(&self, st: &PathState, t: f64) -> Result<(f64, f64), EvalError> {
        match self {
            SdeModel::Brownian(s) => Ok((s.sigma.eval_x(st.x)?, s.b.eval_x(st.x)?)),
            SdeModel::Levy(s, _) => Ok((s.sigma.eval_x(st.x)?, s.b.eval_x(st.x)?)),
            SdeModel::PathDep(s) => {
                let env = Env { t, x: st.x, h: st.h, z: 0.0, n: 0.0, aggregates: &st.agg_vals };
                let kappa = s.kappa.eval(&env)?;
                Ok((s.sigma.eval_x(st.x)? * kappa, s.b.eval(&env)?))
            }
        }
    }

    fn kappa_check(&self, st: &PathState, t: f64, path: usize, step: usize) -> Result<(), SimError> {
        if let SdeModel::PathDep(s) = self {
            let env = Env { t, x: st.x, h: st.h, z: 0.0, n: 0.0, aggregates: &st.agg_vals };
            let kappa = s.kappa.eval(&env).map_err(|source| SimError::Eval { path, step, source })?;
            if !(kappa >= s.kappa0) {
                return Err(SimError::KappaFloor { path, step, value: kappa, kappa0: s.kappa0 });
            }
        }
        Ok(())
    }

    #[inline]
    fn noise(&self, st: &mut PathState, h: f64, sqrt_h: f64) -> f64 {
        match self {
            SdeModel::Levy(_, plan) => plan.increment(&mut st.drive, h),
            _ => sqrt_h * st.drive.normal(),
        }
    }

    fn advance_aux(&self, st: &mut PathState, x_left: f64, h: f64) -> Result<(), EvalError> {
        let SdeModel::PathDep(s) = self else {
            return Ok(());
        };
        for ((a, ast), v) in s.aggregates.iter().zip(st.aggs.iter_mut()).zip(st.agg_vals.iter_mut()) {
            a.update(ast, x_left, st.x, h)?;
            *v = a.value(ast);
        }
        match &s.aux {
            AuxProcessSpec::OrnsteinUhlenbeck { rate, vol, .. } => {
                let decay = (-rate * h).exp();
                let sd = if *rate > 0.0 {
                    vol * ((1.0 - decay * decay) / (2.0 * rate)).sqrt()
                } else {
                    vol * h.sqrt()
                };
                st.h = st.h * decay + sd * st.aux.normal();
            }
            AuxProcessSpec::PathFunctional(a) => {
                let ast = st.aux_agg.as_mut().expect("aux aggregate state");
                a.update(ast, x_left, st.x, h)?;
                st.h = a.value(ast);
            }
            AuxProcessSpec::Constant { .. } => {}
        }
        Ok(())
    }

    /// Simulates one path, recording the coupled variables.
    fn run_path(&self, path: usize, seed: u64, h: f64, n: usize, rec: &Recording) -> Result<PathOut, SimError> {
        let mut st = self.start(path, seed)?;
        let sqrt_h = h.sqrt();
        let freeze_drift = matches!(self, SdeModel::Levy(..));
        let k_eps = rec.freeze_steps.len();
        let mut out = PathOut {
            z: vec![0.0; k_eps],
            x_freeze: vec![0.0; k_eps],
            sigma_freeze: vec![0.0; k_eps],
            obs: vec![0.0; rec.obs_steps.len()],
            sup_sq: st.x * st.x,
            ..PathOut::default()
        };
        let mut frozen = vec![(0.0f64, 0.0f64); k_eps];
        let mut active = vec![false; k_eps];
        for k in 0..n {
            let t = k as f64 * h;
            self.kappa_check(&st, t, path, k)?;
            for (i, &s) in rec.obs_steps.iter().enumerate() {
                if s == k {
                    out.obs[i] = st.x;
                }
            }
            let (diff, drift) = self.coeffs(&st, t).map_err(|source| SimError::Eval { path, step: k, source })?;
            for j in 0..k_eps {
                if rec.freeze_steps[j] == k {
                    out.x_freeze[j] = st.x;
                    out.sigma_freeze[j] = self.sigma().eval_x(st.x).map_err(|source| SimError::Eval { path, step: k, source })?.abs();
                    out.z[j] = st.x;
                    frozen[j] = (diff, if freeze_drift { drift } else { 0.0 });
                    active[j] = true;
                }
            }
            let dn = self.noise(&mut st, h, sqrt_h);
            let x_left = st.x;
            st.x = x_left + (diff * dn + drift * h);
            if !st.x.is_finite() {
                return Err(SimError::NonFinite { path, step: k });
            }
            for j in 0..k_eps {
                if active[j] {
                    let (c, bf) = frozen[j];
                    out.z[j] += c * dn + bf * h;
                }
            }
            self.advance_aux(&mut st, x_left, h).map_err(|source| SimError::Eval { path, step: k, source })?;
            out.sup_sq = out.sup_sq.max(st.x * st.x);
        }
        for (i, &s) in rec.obs_steps.iter().enumerate() {
            if s == n {
                out.obs[i] = st.x;
            }
        }
        out.x = st.x;
        out.sigma_abs = self.sigma().eval_x(st.x).map_err(|source| SimError::Eval { path, step: n, source })?.abs();
        Ok(out)
    }

    fn run(&self, n_paths: usize, h: f64, seed: u64, rec: &Recording) -> Result<Vec<PathOut>, SimError> {
        if n_paths == 0 {
            return Err(SimError::Spec("n_paths must be at least 1".into()));
        }
        let n = n_steps(self.horizon(), h)?;
        if let SdeModel::PathDep(s) = self {
            if !(s.kappa0 > 0.0) {
                return Err(SimError::Spec(format!("kappa0 = {} must be positive", s.kappa0)));
            }
        }
        let outs: Vec<Result<PathOut, SimError>> =
            (0..n_paths).into_par_iter().map(|p| self.run_path(p, seed, h, n, rec)).collect();
        outs.into_iter().collect()
    }
}

// ---------------------------------------------------------------------------
// Terminal ensembles
// ---------------------------------------------------------------------------

/// Terminal samples of a simulated SDE.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalEnsemble {
    pub terminal_x: Vec<f64>,
    /// `|σ(X_T)|`.
    pub sigma_at_terminal: Vec<f64>,
    /// Sample `E[sup_t X_t²]`.
    pub sup_sq_mean: f64,
    pub h: f64,
    pub master_seed: u64,
}

impl TerminalEnsemble {
    fn from_outs(outs: Vec<PathOut>, h: f64, master_seed: u64) -> Self {
        let sup: Vec<f64> = outs.iter().map(|o| o.sup_sq).collect();
        TerminalEnsemble {
            terminal_x: outs.iter().map(|o| o.x).collect(),
            sigma_at_terminal: outs.iter().map(|o| o.sigma_abs).collect(),
            sup_sq_mean: stats::mean(&sup),
            h,
            master_seed,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.terminal_x.len()
    }
}

pub fn simulate_brownian(spec: &BrownianSdeSpec, n_paths: usize, h: f64, master_seed: u64) -> Result<TerminalEnsemble, SimError> {
    let outs = SdeModel::Brownian(spec).run(n_paths, h, master_seed, &Recording::default())?;
    Ok(TerminalEnsemble::from_outs(outs, h, master_seed))
}

pub fn simulate_pathdep(spec: &PathDepSdeSpec, n_paths: usize, h: f64, master_seed: u64) -> Result<TerminalEnsemble, SimError> {
    let outs = SdeModel::PathDep(spec).run(n_paths, h, master_seed, &Recording::default())?;
    Ok(TerminalEnsemble::from_outs(outs, h, master_seed))
}

pub fn simulate_levy(
    spec: &LevySdeSpec,
    plan: &TruncationPlan,
    n_paths: usize,
    h: f64,
    master_seed: u64,
) -> Result<TerminalEnsemble, SimError> {
    let outs = SdeModel::Levy(spec, plan).run(n_paths, h, master_seed, &Recording::default())?;
    Ok(TerminalEnsemble::from_outs(outs, h, master_seed))
}

// ---------------------------------------------------------------------------
// One-step coupling
// ---------------------------------------------------------------------------

/// Terminal samples paired with the frozen-coefficient variables `Z_ε`, all
/// built from the same driving noise.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledEnsemble {
    pub variant: &'static str,
    pub eps: Vec<f64>,
    pub terminal_x: Vec<f64>,
    /// `z_eps[j][i]` is `Z_ε` for `eps[j]` on path `i`.
    pub z_eps: Vec<Vec<f64>>,
    pub sigma_at_terminal: Vec<f64>,
    pub sigma_at_freeze: Vec<Vec<f64>>,
    pub x_at_freeze: Vec<Vec<f64>>,
    pub sup_sq_mean: f64,
    pub h: f64,
    pub master_seed: u64,
}

impl CoupledEnsemble {
    pub fn n_paths(&self) -> usize {
        self.terminal_x.len()
    }

    /// Sample `E|X_T - Z_ε|^p` per ε.
    pub fn defect_moments(&self, p: f64) -> Vec<f64> {
        self.defect_columns(p).iter().map(|c| stats::mean(c)).collect()
    }

    fn defect_columns(&self, p: f64) -> Vec<Vec<f64>> {
        self.z_eps
            .iter()
            .map(|z| self.terminal_x.iter().zip(z).map(|(x, z)| (x - z).abs().powf(p)).collect())
            .collect()
    }

    pub fn terminal(&self) -> TerminalEnsemble {
        TerminalEnsemble {
            terminal_x: self.terminal_x.clone(),
            sigma_at_terminal: self.sigma_at_terminal.clone(),
            sup_sq_mean: self.sup_sq_mean,
            h: self.h,
            master_seed: self.master_seed,
        }
    }

    /// One row per path: `path, terminal_x, sigma_terminal, z_<ε>…, sigma_freeze_<ε>…`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write!(w, "path,terminal_x,sigma_terminal")?;
        for e in &self.eps {
            write!(w, ",z_{e:e}")?;
        }
        for e in &self.eps {
            write!(w, ",sigma_freeze_{e:e}")?;
        }
        writeln!(w)?;
        for i in 0..self.n_paths() {
            write!(w, "{i},{:e},{:e}", self.terminal_x[i], self.sigma_at_terminal[i])?;
            for z in &self.z_eps {
                write!(w, ",{:e}", z[i])?;
            }
            for s in &self.sigma_at_freeze {
                write!(w, ",{:e}", s[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Builds `Z_ε` for every ε along each simulated path.
///
/// Coefficients are frozen at `T - ε`; on `(T - ε, T]` the frozen diffusion
/// multiplies the same noise increments that drive `X`. The frozen drift is
/// kept for the Lévy model only.
pub fn couple_one_step(
    model: SdeModel<'_>,
    eps_list: &[f64],
    n_paths: usize,
    h: f64,
    master_seed: u64,
) -> Result<CoupledEnsemble, SimError> {
    let horizon = model.horizon();
    let n = n_steps(horizon, h)?;
    let mut freeze_steps = Vec::with_capacity(eps_list.len());
    for &e in eps_list {
        if !(e > 0.0 && e <= horizon) {
            return Err(SimError::Grid(format!("eps = {e} outside (0, {horizon}]")));
        }
        freeze_steps.push(n - aligned_steps(e, h, "eps")?);
    }
    let rec = Recording { freeze_steps, obs_steps: Vec::new() };
    let outs = model.run(n_paths, h, master_seed, &rec)?;
    let k = eps_list.len();
    let col = |f: &dyn Fn(&PathOut) -> f64| -> Vec<f64> { outs.iter().map(f).collect() };
    let sup: Vec<f64> = col(&|o| o.sup_sq);
    Ok(CoupledEnsemble {
        variant: model.variant(),
        eps: eps_list.to_vec(),
        terminal_x: col(&|o| o.x),
        z_eps: (0..k).map(|j| col(&|o| o.z[j])).collect(),
        sigma_at_terminal: col(&|o| o.sigma_abs),
        sigma_at_freeze: (0..k).map(|j| col(&|o| o.sigma_freeze[j])).collect(),
        x_at_freeze: (0..k).map(|j| col(&|o| o.x_freeze[j])).collect(),
        sup_sq_mean: stats::mean(&sup),
        h,
        master_seed,
    })
}

/// Requirement on the ε grid of a coupling fit.
pub const ONE_STEP_SCALES: ScaleRequirement = ScaleRequirement { min_scales: 5, min_octaves: 3.0 };

/// Fits `log E|X_T - Z_ε|^p` against `log ε` with a path-bootstrap interval.
pub fn fit_one_step_exponent(ens: &CoupledEnsemble, moment_order: f64) -> Result<FitOutcome, FitError> {
    fit_sampled(&ens.eps, &ens.defect_columns(moment_order), ONE_STEP_SCALES, N_BOOT, ens.master_seed)
}

/// Fits `log E|X_t - X_s|^p` against `log(t - s)` over the given time pairs.
pub fn moment_modulus_fit(
    model: SdeModel<'_>,
    pairs: &[(f64, f64)],
    p: f64,
    n_paths: usize,
    h: f64,
    master_seed: u64,
) -> Result<FitOutcome, CoupleError> {
    let mut obs_steps = Vec::with_capacity(2 * pairs.len());
    for &(s, t) in pairs {
        if !(0.0 <= s && s < t && t <= model.horizon() + 1e-12) {
            return Err(SimError::Grid(format!("time pair ({s}, {t}) must satisfy 0 <= s < t <= horizon")).into());
        }
        obs_steps.push(aligned_steps(s, h, "time")?);
        obs_steps.push(aligned_steps(t, h, "time")?);
    }
    let rec = Recording { freeze_steps: Vec::new(), obs_steps };
    let outs = model.run(n_paths, h, master_seed, &rec)?;
    let scales: Vec<f64> = pairs.iter().map(|(s, t)| t - s).collect();
    let cols: Vec<Vec<f64>> = (0..pairs.len())
        .map(|j| outs.iter().map(|o| (o.obs[2 * j + 1] - o.obs[2 * j]).abs().powf(p)).collect())
        .collect();
    let req = ScaleRequirement { min_scales: 3, min_octaves: 2.0 };
    Ok(fit_sampled(&scales, &cols, req, N_BOOT, master_seed)?)
}

/// Dyadic pairs `(s, s + 2^{-k})` for `k` in `k_lo..=k_hi`.
pub fn dyadic_pairs(s: f64, k_lo: i32, k_hi: i32) -> Vec<(f64, f64)> {
    (k_lo..=k_hi).map(|k| (s, s + 0.5f64.powi(k))).collect()
}

// ---------------------------------------------------------------------------
// Atom counterexample
// ---------------------------------------------------------------------------

/// `dX = X dB - sign(X)|X|^α dt`, absorbed at 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CounterexampleSpec {
    pub x0: f64,
    pub alpha: f64,
    pub t: f64,
    /// Paths at or below this level are set to 0 for good.
    pub barrier: f64,
}

impl CounterexampleSpec {
    pub fn new(x0: f64, alpha: f64, t: f64) -> Self {
        CounterexampleSpec { x0, alpha, t, barrier: 1e-6 }
    }

    /// `x₀^{1-α}/(1-α)`, the bound on the expected hitting time of 0.
    pub fn hit_time_bound(&self) -> f64 {
        self.x0.powf(1.0 - self.alpha) / (1.0 - self.alpha)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterexampleReport {
    /// Fraction of paths absorbed at 0 by time `t`.
    pub p_atom_hat: f64,
    /// Mean hitting time among absorbed paths (NaN if none).
    pub mean_hit_time: f64,
    pub bound: f64,
    pub barrier: f64,
    /// `X_t` per path; `sigma_at_terminal` equals `|X_t|`.
    pub terminal: TerminalEnsemble,
}

pub fn run_counterexample(
    spec: &CounterexampleSpec,
    n_paths: usize,
    h: f64,
    master_seed: u64,
) -> Result<CounterexampleReport, SimError> {
    let CounterexampleSpec { x0, alpha, t, barrier } = *spec;
    if !(x0 > 0.0 && alpha > 0.0 && alpha < 1.0 && t >= 0.0 && n_paths > 0) {
        return Err(SimError::Spec(format!("need x0 > 0, alpha in (0, 1), t >= 0; got x0={x0}, alpha={alpha}, t={t}")));
    }
    let n = if t == 0.0 { 0 } else { n_steps(t, h)? };
    let sqrt_h = h.sqrt();
    let outs: Vec<Result<(f64, Option<f64>, f64), SimError>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = RngStream::new(master_seed, channel::stream(channel::DRIVE, p as u64));
            let mut x = x0;
            let mut sup = x * x;
            for k in 0..n {
                let dw = sqrt_h * rng.normal();
                let drift = if x > 0.0 { -x.powf(alpha) } else { (-x).powf(alpha) };
                x += x * dw + drift * h;
                if !x.is_finite() {
                    return Err(SimError::NonFinite { path: p, step: k });
                }
                sup = sup.max(x * x);
                if x <= barrier {
                    return Ok((0.0, Some((k + 1) as f64 * h), sup));
                }
            }
            Ok((x, None, sup))
        })
        .collect();
    let outs: Vec<(f64, Option<f64>, f64)> = outs.into_iter().collect::<Result<_, _>>()?;
    let hits: Vec<f64> = outs.iter().filter_map(|o| o.1).collect();
    let terminal_x: Vec<f64> = outs.iter().map(|o| o.0).collect();
    let sup: Vec<f64> = outs.iter().map(|o| o.2).collect();
    Ok(CounterexampleReport {
        p_atom_hat: hits.len() as f64 / n_paths as f64,
        mean_hit_time: if hits.is_empty() { f64::NAN } else { stats::mean(&hits) },
        bound: spec.hit_time_bound(),
        barrier,
        terminal: TerminalEnsemble {
            sigma_at_terminal: terminal_x.iter().map(|x| x.abs()).collect(),
            terminal_x,
            sup_sq_mean: stats::mean(&sup),
            h,
            master_seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm(sigma: &str, b: &str, x0: f64) -> BrownianSdeSpec {
        BrownianSdeSpec::new(CoeffSpec::parse(sigma, Some(1.0), 1.0), CoeffSpec::parse(b, Some(1.0), 1.0), x0)
    }

    #[test]
    fn deterministic_drift() {
        let ens = simulate_brownian(&bm("0", "1", 0.0), 16, 1e-2, 1).unwrap();
        assert!(ens.terminal_x.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn grid_errors() {
        let s = bm("1", "0", 0.0);
        assert!(simulate_brownian(&s, 4, 0.3, 1).is_err());
        let e = couple_one_step(SdeModel::Brownian(&s), &[0.0015], 4, 1e-3, 1).unwrap_err();
        assert!(matches!(e, SimError::Grid(_)));
    }

    #[test]
    fn constant_coefficients_zero_defect() {
        let s = bm("1", "0", 0.0);
        let eps: Vec<f64> = (3..=9).map(|k| 0.5f64.powi(k)).collect();
        let ens = couple_one_step(SdeModel::Brownian(&s), &eps, 200, 0.5f64.powi(10), 4).unwrap();
        for z in &ens.z_eps {
            assert_eq!(z, &ens.terminal_x);
        }
        assert_eq!(fit_one_step_exponent(&ens, 2.0).unwrap(), FitOutcome::ZeroDefect);
    }

    #[test]
    fn eval_errors_carry_step() {
        let s = bm("log(x - 2)", "0", 1.0);
        let e = simulate_brownian(&s, 8, 0.01, 3).unwrap_err();
        assert!(matches!(e, SimError::Eval { .. }), "{e}");
    }

    #[test]
    fn counterexample_bounds() {
        let spec = CounterexampleSpec::new(1.0, 0.5, 10.0);
        assert_eq!(spec.hit_time_bound(), 2.0);
        let r = run_counterexample(&CounterexampleSpec::new(1.0, 0.5, 0.0), 100, 1e-3, 1).unwrap();
        assert_eq!(r.p_atom_hat, 0.0);
        assert!(r.terminal.terminal_x.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn kappa_floor_violation() {
        let spec = PathDepSdeSpec {
            sigma: CoeffSpec::parse("1", Some(1.0), 1.0),
            kappa: CoeffSpec::parse("1", Some(1.0), 1.0),
            b: CoeffSpec::parse("0", Some(1.0), 0.0),
            aggregates: Vec::new(),
            aux: AuxProcessSpec::Constant { h0: 0.0 },
            kappa0: 2.0,
            theta1: 1.0,
            theta2: 1.0,
            theta3: 1.0,
            eta: 1.0,
            x0: 0.0,
            horizon: 1.0,
        };
        let e = simulate_pathdep(&spec, 4, 0.01, 1).unwrap_err();
        assert_eq!(e, SimError::KappaFloor { path: 0, step: 0, value: 1.0, kappa0: 2.0 });
        assert_eq!(spec.derived_theta(), 1.0);
    }
}
