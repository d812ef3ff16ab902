//! Numerical audit of the one-step Euler/Fourier route to absolute
//! continuity for one-dimensional SDEs, path-dependent SDEs, Lévy-driven SDEs
//! and the stochastic heat equation.
//!
//! Every Monte Carlo routine is a pure function of its inputs and a master
//! seed; results do not depend on the rayon worker count.

pub mod expr;
pub mod fit;
pub mod fourier;
pub mod levy;
pub mod noise;
pub mod process;
pub mod quad;
pub mod sde;
pub mod spde;
pub mod stats;

pub use expr::{
    estimate_holder, eval_expr, parse_expr, AggregateKind, CoeffSpec, Env, EvalError, Expr, ParseError,
    PathAggregate, Program,
};
pub use fit::{fit_power_law, least_squares, ExponentFit, FitError, FitOutcome, LineFit};
pub use process::ProcessSpec;
pub use noise::{brownian_increments, make_stream, poisson_times, whitenoise_field, RngStream, WhiteNoiseGrid};
pub use fourier::{
    certify_decay, estimate_charfn, l2_tail, localization_weight, reconstruct_density, theoretical_bound, BoundParams,
    CharFnEstimate, DecayBoundReport, DensityEstimate, Localization, Variant,
};
pub use levy::{check_dix, check_tasoeur1, plan_truncation, sample_levy_increments, LevyMeasure, TruncationPlan};
pub use sde::{
    couple_one_step, run_counterexample, simulate_brownian, simulate_levy, simulate_pathdep, BrownianSdeSpec,
    CoupledEnsemble, CounterexampleSpec, LevySdeSpec, PathDepSdeSpec, SdeModel, TerminalEnsemble,
};
pub use spde::{couple_spde_one_step, heat_kernel, kappa_eps, simulate_spde, FieldEnsemble, HeatKernelCalc, SpdeGrid, SpdeSpec};
