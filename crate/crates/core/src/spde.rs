//! The stochastic heat equation on `[0, 1]` with Neumann boundary: heat
//! kernel quadratures, an explicit finite-difference simulator, the localized
//! kernel mass `κ_ε`, the variance proxy `Y_ε` and regularity fits.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{CoeffSpec, Env, EvalError, Expr, Program};
use crate::fit::{fit_sampled, least_squares, FitError, FitOutcome, ScaleRequirement};
use crate::noise::{channel, RngStream};
use crate::quad::integrate;
use crate::sde::{CoupledEnsemble, N_BOOT};
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpdeError {
    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("explicit scheme unstable: dt = {dt:e} > dx^2/2 = {limit:e}")]
    Unstable { dt: f64, limit: f64 },
    #[error("grid: {0}")]
    Grid(String),
    #[error("path {path}, step {step}: {source}")]
    Eval { path: usize, step: usize, source: EvalError },
    #[error("path {path}, step {step}: field became non-finite")]
    NonFinite { path: usize, step: usize },
    #[error("no snapshot stored for eps = {0}")]
    MissingSnapshot(f64),
    #[error("initial condition: {0}")]
    InitialCondition(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

// ---------------------------------------------------------------------------
// Heat kernel
// ---------------------------------------------------------------------------

/// Method-of-images evaluation of the Neumann heat kernel
/// `G_t(x,y) = (4πt)^{-1/2} Σ_n [e^{-(y-x-2n)²/4t} + e^{-(y+x-2n)²/4t}]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeatKernelCalc {
    /// Minimum number of images on each side of `n = 0`.
    pub n_images: usize,
    /// Relative tolerance of the kernel quadratures.
    pub rel_tol: f64,
}

impl Default for HeatKernelCalc {
    fn default() -> Self {
        HeatKernelCalc { n_images: 8, rel_tol: 1e-9 }
    }
}

impl HeatKernelCalc {
    /// Images used at time `t`: at least `n_images`, more when `t` is so
    /// large that the Gaussians overlap many periods.
    pub fn images_at(&self, t: f64) -> usize {
        let need = ((4.0 * t * 40.0).sqrt() / 2.0).ceil() as usize + 2;
        self.n_images.max(need)
    }

    /// Scale of the first omitted image term relative to the kernel.
    pub fn truncation_bound(&self, t: f64) -> f64 {
        let n = self.images_at(t) as f64;
        (-(2.0 * n - 2.0).powi(2) / (4.0 * t)).exp()
    }

    #[inline]
    fn eval(&self, t: f64, x: f64, y: f64) -> f64 {
        let n_img = self.images_at(t) as i64;
        let c = 1.0 / (4.0 * t);
        let term = |d: f64| (-d * d * c).exp();
        let mut s = term(y - x) + term(y + x);
        for n in 1..=n_img {
            let m = 2.0 * n as f64;
            s += (term(y - x - m) + term(y - x + m)) + (term(y + x - m) + term(y + x + m));
        }
        s / (4.0 * std::f64::consts::PI * t).sqrt()
    }
}

pub fn heat_kernel(t: f64, x: f64, y: f64, calc: &HeatKernelCalc) -> Result<f64, SpdeError> {
    if !(t > 0.0) {
        return Err(SpdeError::NonPositiveTime(t));
    }
    Ok(calc.eval(t, x, y))
}

/// `∫_0^T f(τ) dτ` for `f` with an integrable `τ^{-1/2}` singularity at 0.
fn integrate_sqrt_singular<F: Fn(f64) -> f64>(f: F, big_t: f64, rel_tol: f64) -> f64 {
    if big_t <= 0.0 {
        return 0.0;
    }
    integrate(|w: f64| 2.0 * w * f(w * w), 0.0, big_t.sqrt(), 0.0, rel_tol).value
}

/// Half-width beyond which `G_s(x,·)²` is below `e^{-72}` of its peak.
fn peak_reach(s: f64) -> f64 {
    12.0 * s.sqrt()
}

/// `∫_a^b G_s(x,z)² dz`, split at the peak and clipped to where it is
/// not negligible, so the quadrature cannot step over a narrow peak.
fn window_sq(calc: &HeatKernelCalc, s: f64, x: f64, a: f64, b: f64) -> f64 {
    let reach = peak_reach(s);
    let (a, b) = (a.max(x - reach), b.min(x + reach));
    let g = |z: f64| {
        let v = calc.eval(s, x, z);
        v * v
    };
    let tol = calc.rel_tol * 0.1;
    let left = if a < x { integrate(g, a, x.min(b), 0.0, tol).value } else { 0.0 };
    let right = if b > x { integrate(g, x.max(a), b, 0.0, tol).value } else { 0.0 };
    left + right
}

/// `κ_ε(x) = ∫_{1-ε}^1 ∫_{0∨(x-√ε)}^{1∧(x+√ε)} G²_{1-u}(x,z) dz du`.
pub fn kappa_eps(x: f64, eps: f64, calc: &HeatKernelCalc) -> f64 {
    let r = eps.sqrt();
    let (a, b) = ((x - r).max(0.0), (x + r).min(1.0));
    integrate_sqrt_singular(|s| if s > 0.0 { window_sq(calc, s, x, a, b) } else { 0.0 }, eps, calc.rel_tol)
}

/// `∫_0^t ∫_0^1 (G_{t-u}(x,z) - G_{t-u}(y,z))² dz du`, reduced with the
/// semigroup identity `∫ G_τ(x,z) G_τ(y,z) dz = G_{2τ}(x,y)`.
pub fn space_increment_lhs(x: f64, y: f64, t: f64, calc: &HeatKernelCalc) -> f64 {
    if x == y {
        return 0.0;
    }
    integrate_sqrt_singular(
        |tau| {
            if tau <= 0.0 {
                return 0.0;
            }
            calc.eval(2.0 * tau, x, x) + calc.eval(2.0 * tau, y, y) - 2.0 * calc.eval(2.0 * tau, x, y)
        },
        t,
        calc.rel_tol,
    )
}

/// `∫_0^s ∫ (G_{t-u}(x,z) - G_{s-u}(x,z))² dz du + ∫_s^t ∫ G²_{t-u}(x,z) dz du`.
pub fn time_increment_lhs(x: f64, s: f64, t: f64, calc: &HeatKernelCalc) -> f64 {
    let d = t - s;
    let first = integrate_sqrt_singular(
        |b| {
            if b <= 0.0 {
                return 0.0;
            }
            let a = b + d;
            calc.eval(2.0 * a, x, x) + calc.eval(2.0 * b, x, x) - 2.0 * calc.eval(a + b, x, x)
        },
        s,
        calc.rel_tol,
    );
    let second = integrate_sqrt_singular(|tau| if tau > 0.0 { calc.eval(2.0 * tau, x, x) } else { 0.0 }, d, calc.rel_tol);
    first + second
}

/// `Var U(t, x)` for additive unit noise from a deterministic start:
/// `∫_0^t ∫_0^1 G²_{t-s}(x,y) dy ds = ∫_0^t G_{2τ}(x,x) dτ`.
pub fn ito_isometry_variance(x: f64, t: f64, calc: &HeatKernelCalc) -> f64 {
    integrate_sqrt_singular(|tau| if tau > 0.0 { calc.eval(2.0 * tau, x, x) } else { 0.0 }, t, calc.rel_tol)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelFit {
    /// `(separation, lhs)`.
    pub rows: Vec<(f64, f64)>,
    pub slope: f64,
    pub c_hat: f64,
}

impl KernelFit {
    fn from_rows(rows: Vec<(f64, f64)>, target: f64) -> Self {
        let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.1 > 0.0).map(|&(d, v)| (d.ln(), v.ln())).collect();
        let slope = if pts.len() >= 2 { least_squares(&pts).slope } else { f64::NAN };
        let c_hat = rows.iter().map(|&(d, v)| v / d.powf(target)).fold(0.0, f64::max);
        KernelFit { rows, slope, c_hat }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelReport {
    /// `κ_ε` against `ε`, target slope 1/2.
    pub kappa: KernelFit,
    /// Space increment against `|x - y|`, target slope 1.
    pub space: KernelFit,
    /// Time increment against `t - s`, target slope 1/2.
    pub time: KernelFit,
}

/// Sample grid for [`kernel_estimates_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGrid {
    pub x: f64,
    pub kappa_eps: Vec<f64>,
    pub space_seps: Vec<f64>,
    pub time_s: f64,
    pub time_seps: Vec<f64>,
}

impl Default for KernelGrid {
    fn default() -> Self {
        let dy = |lo: i32, hi: i32| (lo..=hi).map(|k| 0.5f64.powi(k)).collect::<Vec<_>>();
        KernelGrid { x: 0.5, kappa_eps: dy(4, 12), space_seps: dy(3, 10), time_s: 0.5, time_seps: dy(3, 10) }
    }
}

/// Evaluates the three kernel estimates on dyadic separations and fits slopes.
pub fn kernel_estimates_check(calc: &HeatKernelCalc, grid: &KernelGrid) -> KernelReport {
    let x = grid.x;
    let kappa = grid.kappa_eps.par_iter().map(|&e| (e, kappa_eps(x, e, calc))).collect();
    let space = grid
        .space_seps
        .par_iter()
        .map(|&d| {
            let y = if x + d <= 1.0 { x + d } else { x - d };
            (d, space_increment_lhs(x, y, 1.0, calc))
        })
        .collect();
    let s = grid.time_s;
    let time = grid.time_seps.par_iter().map(|&d| (d, time_increment_lhs(x, s, s + d, calc))).collect();
    KernelReport {
        kappa: KernelFit::from_rows(kappa, 0.5),
        space: KernelFit::from_rows(space, 1.0),
        time: KernelFit::from_rows(time, 0.5),
    }
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// `∂_t U = ∂_xx U + b(U) + σ(U) Ẇ` with `∂_x U = 0` at both ends.
#[derive(Clone, Debug)]
pub struct SpdeSpec {
    pub sigma: CoeffSpec,
    pub b: CoeffSpec,
    /// Initial condition, an expression in `x`.
    pub u0: Expr,
    pub x_obs: f64,
    pub horizon: f64,
}

impl SpdeSpec {
    pub fn new(sigma: CoeffSpec, b: CoeffSpec, u0: Expr, x_obs: f64) -> Self {
        SpdeSpec { sigma, b, u0, x_obs, horizon: 1.0 }
    }
}

/// A uniform grid of `n_cells + 1` nodes on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpdeGrid {
    pub n_cells: usize,
    pub dt: f64,
}

impl SpdeGrid {
    /// `dt = ratio · dx²`.
    pub fn with_ratio(n_cells: usize, ratio: f64) -> Self {
        let dx = 1.0 / n_cells as f64;
        SpdeGrid { n_cells, dt: ratio * dx * dx }
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    fn check(&self, horizon: f64) -> Result<usize, SpdeError> {
        let dx = self.dx();
        if self.n_cells < 2 {
            return Err(SpdeError::Grid("need at least 2 cells".into()));
        }
        if self.dt > 0.5 * dx * dx * (1.0 + 1e-12) {
            return Err(SpdeError::Unstable { dt: self.dt, limit: 0.5 * dx * dx });
        }
        steps_in(horizon, self.dt, "horizon")
    }

    fn node(&self, x: f64) -> Result<usize, SpdeError> {
        let j = (x * self.n_cells as f64).round();
        if !(0.0..=1.0).contains(&x) || (j / self.n_cells as f64 - x).abs() > 1e-9 {
            return Err(SpdeError::Grid(format!("x = {x} is not a grid node")));
        }
        Ok(j as usize)
    }
}

fn steps_in(span: f64, dt: f64, what: &str) -> Result<usize, SpdeError> {
    let m = (span / dt).round();
    if !(dt > 0.0) || (m * dt - span).abs() > 1e-9 * span.max(dt) {
        return Err(SpdeError::Grid(format!("{what} = {span} is not a multiple of dt = {dt:e}")));
    }
    Ok(m as usize)
}

/// Simulated fields.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldEnsemble {
    pub grid: SpdeGrid,
    pub n_time: usize,
    /// `terminal[i]` is `U(T, ·)` on path `i`.
    pub terminal: Vec<Vec<f64>>,
    pub snapshot_eps: Vec<f64>,
    /// `snapshots[j][i]` is `U(T - ε_j, ·)` on path `i`.
    pub snapshots: Vec<Vec<Vec<f64>>>,
    /// `z_eps[j][i]`, filled by the coupled run only.
    pub z_eps: Vec<Vec<f64>>,
    pub x_obs: f64,
    pub master_seed: u64,
}

impl FieldEnsemble {
    pub fn n_paths(&self) -> usize {
        self.terminal.len()
    }

    pub fn snapshot(&self, eps: f64) -> Result<&Vec<Vec<f64>>, SpdeError> {
        self.snapshot_eps
            .iter()
            .position(|&e| (e - eps).abs() <= 1e-12 * eps)
            .map(|j| &self.snapshots[j])
            .ok_or(SpdeError::MissingSnapshot(eps))
    }

    /// `U(T, x)` per path.
    pub fn terminal_at(&self, x: f64) -> Result<Vec<f64>, SpdeError> {
        let j = self.grid.node(x)?;
        Ok(self.terminal.iter().map(|r| r[j]).collect())
    }

    /// Terminal field as a CSV matrix, one row per path.
    pub fn write_terminal_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write_matrix(w, &self.terminal, self.grid)
    }

    pub fn write_snapshot_csv<W: Write>(&self, w: &mut W, eps: f64) -> io::Result<()> {
        let snap = self.snapshot(eps).map_err(|e| io::Error::new(io::ErrorKind::NotFound, e.to_string()))?;
        write_matrix(w, snap, self.grid)
    }
}

fn write_matrix<W: Write>(w: &mut W, rows: &[Vec<f64>], grid: SpdeGrid) -> io::Result<()> {
    write!(w, "path")?;
    for j in 0..grid.n_nodes() {
        write!(w, ",x={:e}", j as f64 * grid.dx())?;
    }
    writeln!(w)?;
    for (i, r) in rows.iter().enumerate() {
        write!(w, "{i}")?;
        for v in r {
            write!(w, ",{v:e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

struct FdStep<'a> {
    sigma: &'a Program,
    b: &'a Program,
    r: f64,
    dt: f64,
    inv_dx: f64,
}

impl FdStep<'_> {
    /// One explicit step of `u` into `out`, with noise masses `w`.
    #[inline]
    fn apply(&self, u: &[f64], w: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let n = u.len();
        let (cs, cb) = (self.sigma.constant(), self.b.constant());
        for j in 0..n {
            let left = if j == 0 { u[1] } else { u[j - 1] };
            let right = if j + 1 == n { u[n - 2] } else { u[j + 1] };
            let uj = u[j];
            let env = Env::with_x(uj);
            let s = match cs {
                Some(c) => c,
                None => self.sigma.eval(&env)?,
            };
            let b = match cb {
                Some(c) => c,
                None => self.b.eval(&env)?,
            };
            out[j] = uj + self.r * (right - 2.0 * uj + left) + self.dt * b + s * w[j] * self.inv_dx;
        }
        Ok(())
    }

    /// A step with diffusion frozen per node and no drift.
    #[inline]
    fn apply_frozen(&self, u: &[f64], frozen_sigma: &[f64], w: &[f64], out: &mut [f64]) {
        let n = u.len();
        for j in 0..n {
            let left = if j == 0 { u[1] } else { u[j - 1] };
            let right = if j + 1 == n { u[n - 2] } else { u[j + 1] };
            let uj = u[j];
            out[j] = uj + self.r * (right - 2.0 * uj + left) + frozen_sigma[j] * w[j] * self.inv_dx;
        }
    }
}

struct PathFields {
    terminal: Vec<f64>,
    snapshots: Vec<Vec<f64>>,
    z: Vec<f64>,
}

fn simulate_fields(
    spec: &SpdeSpec,
    n_paths: usize,
    grid: SpdeGrid,
    master_seed: u64,
    eps_list: &[f64],
    coupled: bool,
) -> Result<FieldEnsemble, SpdeError> {
    let n_time = grid.check(spec.horizon)?;
    let nodes = grid.n_nodes();
    let dx = grid.dx();
    let obs = grid.node(spec.x_obs)?;
    let mut snap_steps = Vec::with_capacity(eps_list.len());
    for &e in eps_list {
        if !(e > 0.0 && e <= spec.horizon) {
            return Err(SpdeError::Grid(format!("eps = {e} outside (0, {}]", spec.horizon)));
        }
        snap_steps.push(n_time - steps_in(e, grid.dt, "eps")?);
    }
    let u0p = spec.u0.compile();
    let mut u_init = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let v = u0p
            .eval(&Env::with_x(j as f64 * dx))
            .map_err(|e| SpdeError::InitialCondition(e.to_string()))?;
        if !v.is_finite() {
            return Err(SpdeError::InitialCondition(format!("u0 is not finite at x = {}", j as f64 * dx)));
        }
        u_init.push(v);
    }
    let step = FdStep { sigma: spec.sigma.program(), b: spec.b.program(), r: grid.dt / (dx * dx), dt: grid.dt, inv_dx: 1.0 / dx };
    let noise_sd = (grid.dt * dx).sqrt();
    let k_eps = eps_list.len();

    let run_path = |path: usize| -> Result<PathFields, SpdeError> {
        let mut rng = RngStream::new(master_seed, channel::stream(channel::DRIVE, path as u64));
        let mut u = u_init.clone();
        let mut next = vec![0.0; nodes];
        let mut w = vec![0.0; nodes];
        let mut snapshots = vec![Vec::new(); k_eps];
        let mut coupled_fields: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; k_eps];
        for k in 0..n_time {
            for j in 0..k_eps {
                if snap_steps[j] == k {
                    snapshots[j] = u.clone();
                    if coupled {
                        let frozen = u
                            .iter()
                            .map(|&v| spec.sigma.eval_x(v))
                            .collect::<Result<Vec<f64>, _>>()
                            .map_err(|source| SpdeError::Eval { path, step: k, source })?;
                        coupled_fields[j] = Some((u.clone(), frozen));
                    }
                }
            }
            rng.fill_normal(&mut w);
            for v in w.iter_mut() {
                *v *= noise_sd;
            }
            step.apply(&u, &w, &mut next).map_err(|source| SpdeError::Eval { path, step: k, source })?;
            std::mem::swap(&mut u, &mut next);
            if !u[obs].is_finite() {
                return Err(SpdeError::NonFinite { path, step: k });
            }
            for cf in coupled_fields.iter_mut().flatten() {
                step.apply_frozen(&cf.0, &cf.1, &w, &mut next);
                std::mem::swap(&mut cf.0, &mut next);
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(SpdeError::NonFinite { path, step: n_time });
        }
        let z = coupled_fields.iter().map(|cf| cf.as_ref().map_or(f64::NAN, |c| c.0[obs])).collect();
        Ok(PathFields { terminal: u, snapshots, z })
    };

    if n_paths == 0 {
        return Err(SpdeError::Grid("n_paths must be at least 1".into()));
    }
    let outs: Vec<Result<PathFields, SpdeError>> = (0..n_paths).into_par_iter().map(run_path).collect();
    let outs: Vec<PathFields> = outs.into_iter().collect::<Result<_, _>>()?;
    let mut snapshots = vec![Vec::with_capacity(n_paths); k_eps];
    let mut z_eps = if coupled { vec![Vec::with_capacity(n_paths); k_eps] } else { Vec::new() };
    let mut terminal = Vec::with_capacity(n_paths);
    for o in outs {
        for (j, s) in o.snapshots.into_iter().enumerate() {
            snapshots[j].push(s);
        }
        if coupled {
            for (j, z) in o.z.into_iter().enumerate() {
                z_eps[j].push(z);
            }
        }
        terminal.push(o.terminal);
    }
    Ok(FieldEnsemble {
        grid,
        n_time,
        terminal,
        snapshot_eps: eps_list.to_vec(),
        snapshots,
        z_eps,
        x_obs: spec.x_obs,
        master_seed,
    })
}

/// Explicit scheme
/// `U^{k+1}_j = U^k_j + (dt/dx²)(U^k_{j+1} - 2U^k_j + U^k_{j-1}) + dt b(U^k_j) + σ(U^k_j) W_{k,j}/dx`
/// with ghost nodes mirroring the neighbours of each end node. Snapshots are
/// kept at `T - ε` for each requested ε.
pub fn simulate_spde(
    spec: &SpdeSpec,
    n_paths: usize,
    grid: SpdeGrid,
    master_seed: u64,
    snapshot_eps: &[f64],
) -> Result<FieldEnsemble, SpdeError> {
    simulate_fields(spec, n_paths, grid, master_seed, snapshot_eps, false)
}

/// Like [`simulate_spde`], and additionally evolves, for each ε, a second
/// field from the `T - ε` snapshot with `σ` frozen at the snapshot values,
/// no drift, and the same noise cells; `Z_ε` is its value at `x_obs`.
pub fn couple_spde_one_step(
    spec: &SpdeSpec,
    eps_list: &[f64],
    n_paths: usize,
    grid: SpdeGrid,
    master_seed: u64,
) -> Result<(FieldEnsemble, CoupledEnsemble), SpdeError> {
    let ens = simulate_fields(spec, n_paths, grid, master_seed, eps_list, true)?;
    let obs = grid.node(spec.x_obs)?;
    let terminal_x: Vec<f64> = ens.terminal.iter().map(|r| r[obs]).collect();
    let sig = |v: f64| spec.sigma.eval_x(v).unwrap_or(f64::NAN);
    let sigma_at_freeze = ens
        .snapshots
        .iter()
        .map(|snap| snap.iter().map(|r| sig(r[obs])).collect())
        .collect();
    let x_at_freeze = ens.snapshots.iter().map(|snap| snap.iter().map(|r| r[obs]).collect()).collect();
    let sup: Vec<f64> = ens.terminal.iter().map(|r| r.iter().fold(0.0f64, |m, v| m.max(v * v))).collect();
    let coupled = CoupledEnsemble {
        variant: "spde",
        eps: eps_list.to_vec(),
        sigma_at_terminal: terminal_x.iter().map(|&v| sig(v)).collect(),
        terminal_x,
        z_eps: ens.z_eps.clone(),
        sigma_at_freeze,
        x_at_freeze,
        sup_sq_mean: stats::mean(&sup),
        h: grid.dt,
        master_seed,
    };
    Ok((ens, coupled))
}

/// Fits `log E(U(T,x) - Z_ε)²` against `log ε`; target slope `(1+θ)/2`.
pub fn fit_spde_one_step(coupled: &CoupledEnsemble) -> Result<FitOutcome, FitError> {
    crate::sde::fit_one_step_exponent(coupled, 2.0)
}

// ---------------------------------------------------------------------------
// Y_ε
// ---------------------------------------------------------------------------

/// Node weights `w_j` with `Y_ε = Σ_j w_j σ²(U(T-ε, y_j))` for a snapshot
/// interpolated piecewise-linearly between the nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct YEpsWeights {
    pub first_node: usize,
    pub weights: Vec<f64>,
    /// `κ_ε(x)`, the unnormalized total.
    pub kappa: f64,
}

impl YEpsWeights {
    pub fn new(grid: SpdeGrid, x: f64, eps: f64, calc: &HeatKernelCalc) -> Self {
        let dx = grid.dx();
        let r = eps.sqrt();
        let (a, b) = ((x - r).max(0.0), (x + r).min(1.0));
        let first = (a / dx).floor() as usize;
        let last = ((b / dx).ceil() as usize).min(grid.n_cells);
        let raw: Vec<f64> = (first..=last)
            .into_par_iter()
            .map(|j| {
                let yj = j as f64 * dx;
                let (lo, hi) = ((yj - dx).max(a), (yj + dx).min(b));
                if !(lo < hi) {
                    return 0.0;
                }
                let hat = |y: f64| (1.0 - (y - yj).abs() / dx).max(0.0);
                integrate(
                    |w: f64| {
                        let s = w * w;
                        if s <= 0.0 {
                            return 0.0;
                        }
                        let g = |y: f64| {
                            let v = calc.eval(s, x, y);
                            v * v * hat(y)
                        };
                        let reach = peak_reach(s);
                        let (lo, hi) = (lo.max(x - reach), hi.min(x + reach));
                        if !(lo < hi) {
                            return 0.0;
                        }
                        let mut parts = vec![lo, hi];
                        for p in [x, yj] {
                            if p > lo && p < hi {
                                parts.push(p);
                            }
                        }
                        parts.sort_by(f64::total_cmp);
                        let inner: f64 = parts
                            .windows(2)
                            .map(|ab| integrate(g, ab[0], ab[1], 0.0, calc.rel_tol * 0.1).value)
                            .sum();
                        2.0 * w * inner
                    },
                    0.0,
                    r,
                    0.0,
                    calc.rel_tol,
                )
                .value
            })
            .collect();
        let kappa: f64 = raw.iter().sum();
        YEpsWeights { first_node: first, weights: raw.iter().map(|v| v / kappa).collect(), kappa }
    }

    pub fn apply(&self, field: &[f64], sigma: &CoeffSpec) -> Result<f64, EvalError> {
        let mut y = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            let s = sigma.eval_x(field[self.first_node + k])?;
            y += w * s * s;
        }
        Ok(y)
    }
}

/// `Y_ε` for one path of an ensemble.
pub fn y_eps(
    ens: &FieldEnsemble,
    sigma: &CoeffSpec,
    path: usize,
    x: f64,
    eps: f64,
    calc: &HeatKernelCalc,
) -> Result<f64, SpdeError> {
    let snap = ens.snapshot(eps)?;
    let w = YEpsWeights::new(ens.grid, x, eps, calc);
    w.apply(&snap[path], sigma).map_err(|source| SpdeError::Eval { path, step: 0, source })
}

/// Fits `log E|σ²(U(T,x)) - Y_ε|` against `log ε` over the stored snapshots.
pub fn y_eps_defect_fit(ens: &FieldEnsemble, sigma: &CoeffSpec, calc: &HeatKernelCalc) -> Result<FitOutcome, SpdeError> {
    let x = ens.x_obs;
    let obs = ens.grid.node(x)?;
    let mut cols = Vec::with_capacity(ens.snapshot_eps.len());
    for (j, &e) in ens.snapshot_eps.iter().enumerate() {
        let w = YEpsWeights::new(ens.grid, x, e, calc);
        let mut col = Vec::with_capacity(ens.n_paths());
        for (i, snap) in ens.snapshots[j].iter().enumerate() {
            let y = w.apply(snap, sigma).map_err(|source| SpdeError::Eval { path: i, step: 0, source })?;
            let s = sigma.eval_x(ens.terminal[i][obs]).map_err(|source| SpdeError::Eval { path: i, step: 0, source })?;
            col.push((s * s - y).abs());
        }
        cols.push(col);
    }
    let req = ScaleRequirement { min_scales: 3, min_octaves: 2.0 };
    Ok(fit_sampled(&ens.snapshot_eps, &cols, req, N_BOOT, ens.master_seed)?)
}

// ---------------------------------------------------------------------------
// Regularity
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct RegularityReport {
    /// Largest sample `E[U²]` over the nodes of the terminal field and all snapshots.
    pub max_second_moment: f64,
    /// `E(U(T,x) - U(T-ε,x))²` against `ε`, target slope ≥ 1/2.
    pub time: FitOutcome,
    /// `E(U(T,x) - U(T,x+d))²` against `d`, target slope ≥ 1.
    pub space: FitOutcome,
}

/// Node separations used for the space fit, in cells.
pub const SPACE_SEPS: [usize; 4] = [2, 4, 8, 16];

pub fn spde_regularity_fit(ens: &FieldEnsemble) -> Result<RegularityReport, SpdeError> {
    let x = ens.x_obs;
    let obs = ens.grid.node(x)?;
    let second = |rows: &Vec<Vec<f64>>| -> f64 {
        (0..ens.grid.n_nodes())
            .map(|j| {
                let col: Vec<f64> = rows.iter().map(|r| r[j] * r[j]).collect();
                stats::mean(&col)
            })
            .fold(0.0, f64::max)
    };
    let mut max_second_moment = second(&ens.terminal);
    for s in &ens.snapshots {
        max_second_moment = max_second_moment.max(second(s));
    }
    let req = ScaleRequirement { min_scales: 3, min_octaves: 2.0 };
    let time_cols: Vec<Vec<f64>> = ens
        .snapshots
        .iter()
        .map(|snap| snap.iter().zip(&ens.terminal).map(|(s, u)| (u[obs] - s[obs]).powi(2)).collect())
        .collect();
    let time = fit_sampled(&ens.snapshot_eps, &time_cols, req, N_BOOT, ens.master_seed)?;
    let n = ens.grid.n_cells;
    let seps: Vec<usize> = SPACE_SEPS.iter().cloned().filter(|&d| obs + d <= n || obs >= d).collect();
    let space_cols: Vec<Vec<f64>> = seps
        .iter()
        .map(|&d| {
            let other = if obs + d <= n { obs + d } else { obs - d };
            ens.terminal.iter().map(|u| (u[obs] - u[other]).powi(2)).collect()
        })
        .collect();
    let scales: Vec<f64> = seps.iter().map(|&d| d as f64 * ens.grid.dx()).collect();
    let space = fit_sampled(&scales, &space_cols, req, N_BOOT, ens.master_seed)?;
    Ok(RegularityReport { max_second_moment, time, space })
}

/// Kernel report as CSV: `estimate,separation,lhs,fitted_slope,c_hat`.
pub fn write_kernel_csv<W: Write>(w: &mut W, rep: &KernelReport) -> io::Result<()> {
    writeln!(w, "estimate,separation,lhs,fitted_slope,c_hat")?;
    for (name, fit) in [("kappa_eps", &rep.kappa), ("space", &rep.space), ("time", &rep.time)] {
        for &(d, v) in &fit.rows {
            writeln!(w, "{name},{d:e},{v:e},{:.6},{:e}", fit.slope, fit.c_hat)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_symmetry_and_positivity() {
        let c = HeatKernelCalc::default();
        let mut rng = RngStream::new(1, 0);
        for _ in 0..200 {
            let t = 1e-3 + rng.uniform();
            let (x, y) = (rng.uniform(), rng.uniform());
            let a = heat_kernel(t, x, y, &c).unwrap();
            let b = heat_kernel(t, y, x, &c).unwrap();
            assert!(a > 0.0);
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
        assert!(heat_kernel(0.0, 0.1, 0.2, &c).is_err());
    }

    #[test]
    fn kernel_mass_and_long_time() {
        let c = HeatKernelCalc::default();
        for t in [1e-3, 0.05, 0.5, 1.0] {
            for x in [0.0, 0.3, 1.0] {
                let m = integrate(|y| c.eval(t, x, y), 0.0, 1.0, 0.0, 1e-13);
                let m2 = if x > 0.0 && x < 1.0 {
                    integrate(|y| c.eval(t, x, y), 0.0, x, 0.0, 1e-13).value
                        + integrate(|y| c.eval(t, x, y), x, 1.0, 0.0, 1e-13).value
                } else {
                    m.value
                };
                assert!((m2 - 1.0).abs() < 1e-8, "t={t} x={x} mass={m2}");
            }
        }
        for (x, y) in [(0.0, 1.0), (0.5, 0.5), (0.2, 0.9)] {
            let g = heat_kernel(10.0, x, y, &c).unwrap();
            assert!((g - 1.0).abs() < 1e-6, "{g}");
        }
        assert!(c.truncation_bound(1.0) < 1e-12);
    }

    #[test]
    fn semigroup_identity() {
        let c = HeatKernelCalc::default();
        for (tau, x, y) in [(0.01, 0.3, 0.35), (0.2, 0.0, 0.7), (0.05, 0.5, 0.5)] {
            let lhs = integrate(|z| c.eval(tau, x, z) * c.eval(tau, y, z), 0.0, 1.0, 0.0, 1e-13).value;
            let rhs = c.eval(2.0 * tau, x, y);
            assert!((lhs - rhs).abs() < 1e-9 * rhs, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn kappa_small_eps_and_monotone() {
        let c = HeatKernelCalc::default();
        let k = kappa_eps(0.5, 1e-3, &c);
        let full = (1e-3 / (2.0 * std::f64::consts::PI)).sqrt();
        assert!((k / full - 1.0).abs() < 0.1, "{k} vs {full}");
        let mut prev = 0.0;
        for e in [1e-4, 1e-3, 1e-2, 0.1, 0.5] {
            let v = kappa_eps(0.5, e, &c);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn space_increment_zero_on_diagonal() {
        assert_eq!(space_increment_lhs(0.4, 0.4, 1.0, &HeatKernelCalc::default()), 0.0);
    }

    #[test]
    fn ito_isometry_value() {
        let v = ito_isometry_variance(0.5, 1.0, &HeatKernelCalc::default());
        // 1 + Σ_{k even} (1 - e^{-2k²π²})/(k²π²) ≈ 1 + 1/24
        assert!((v - (1.0 + 1.0 / 24.0)).abs() < 1e-6, "{v}");
    }

    #[test]
    fn stability_enforced() {
        let spec = SpdeSpec::new(CoeffSpec::constant(0.0), CoeffSpec::constant(0.0), Expr::Lit(1.0), 0.5);
        let g = SpdeGrid::with_ratio(16, 0.6);
        assert!(matches!(simulate_spde(&spec, 1, g, 1, &[]), Err(SpdeError::Unstable { .. })));
    }

    #[test]
    fn constant_field_preserved() {
        let spec = SpdeSpec::new(CoeffSpec::constant(0.0), CoeffSpec::constant(0.0), Expr::Lit(0.7), 0.5);
        let ens = simulate_spde(&spec, 3, SpdeGrid::with_ratio(16, 0.25), 1, &[0.25]).unwrap();
        assert!(ens.terminal.iter().flatten().all(|&v| v == 0.7));
        let rep = spde_regularity_fit(&ens);
        // only one snapshot: too few scales
        assert!(rep.is_err());
    }

    #[test]
    fn y_eps_normalization() {
        let g = SpdeGrid::with_ratio(32, 0.25);
        let c = HeatKernelCalc::default();
        let w = YEpsWeights::new(g, 0.5, 2f64.powi(-6), &c);
        let field = vec![2.0; 33];
        let konst = CoeffSpec::constant(1.5);
        assert!((w.apply(&field, &konst).unwrap() - 2.25).abs() < 1e-12);
        let ident = CoeffSpec::parse("x", Some(1.0), 1.0);
        assert!((w.apply(&field, &ident).unwrap() - 4.0).abs() < 1e-12);
        let k = kappa_eps(0.5, 2f64.powi(-6), &c);
        assert!((w.kappa / k - 1.0).abs() < 1e-4, "{} vs {k}", w.kappa);
    }
}
