//! The process classes a scenario can describe.

use crate::fourier::Variant;
use crate::sde::{BrownianSdeSpec, CounterexampleSpec, LevySdeSpec, PathDepSdeSpec};
use crate::spde::SpdeSpec;

#[derive(Clone, Debug)]
pub enum ProcessSpec {
    Brownian(BrownianSdeSpec),
    PathDep(PathDepSdeSpec),
    Levy(LevySdeSpec),
    Spde(SpdeSpec),
    /// `σ(x) = x`, `b(x) = -sign(x)|x|^α`: a Brownian-driven SDE whose law
    /// has an atom at 0.
    Counterexample(CounterexampleSpec),
}

impl ProcessSpec {
    /// Bound family used when certifying this process.
    pub fn variant(&self) -> Variant {
        match self {
            ProcessSpec::Brownian(_) | ProcessSpec::Counterexample(_) => Variant::Brownian,
            ProcessSpec::PathDep(_) => Variant::PathDep,
            ProcessSpec::Levy(_) => Variant::Levy,
            ProcessSpec::Spde(_) => Variant::Spde,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ProcessSpec::Counterexample(_) => "counterexample",
            other => other.variant().tag(),
        }
    }
}
