//! Bundled scenarios.

use crate::config::{ConfigError, Scenario};

pub struct Builtin {
    pub name: &'static str,
    pub text: &'static str,
}

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(Builtin { name: $name, text: include_str!(concat!("../scenarios/", $name, ".toml")) }),*]
    };
}

pub const BUILTINS: &[Builtin] = builtin!(
    "brownian_holder075",
    "brownian_lipschitz",
    "pathdep_running_max",
    "pathdep_functional",
    "spde_additive",
    "spde_holder075",
    "levy_two_point",
    "levy_symmetric_15",
    "levy_atomic_lambda1",
    "atom_counterexample",
);

/// Measure kinds accepted in `[process.measure]`.
pub const MEASURES: &[(&str, &str)] = &[
    ("two_point", "δ₋₁ + δ₁; no lower decay, certification is expected to fail"),
    ("power_density", "|z|^-(1+λ) on (0, 1]"),
    ("symmetric_power_density", "|z|^-(1+λ) on [-1, 1] \\ {0}"),
    ("power_atoms", "Σ n^(λ·atom_alpha - 1) δ at n^-atom_alpha"),
    ("finite", "explicit atoms [[location, rate], ...]"),
    ("atoms_formula", "atoms at location(n) with rate(n), n = 1, 2, ..."),
    ("density_formula", "density(z) on the given support intervals"),
];

pub fn find(name: &str) -> Option<&'static Builtin> {
    BUILTINS.iter().find(|b| b.name == name)
}

pub fn load(name: &str) -> Option<Result<Scenario, ConfigError>> {
    find(name).map(|b| Scenario::from_toml_str(b.text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_builtins_parse_and_are_tagged() {
        for b in BUILTINS {
            let s = Scenario::from_toml_str(b.text).unwrap_or_else(|e| panic!("{}: {e}", b.name));
            assert_eq!(s.name, b.name);
            assert!(!s.tag.is_empty(), "{}", b.name);
            assert!(!s.description.is_empty(), "{}", b.name);
        }
        assert!(BUILTINS.len() >= 8);
    }
}
