//! Scenario files: TOML with one section per concern. Every key is checked
//! before anything runs, and errors carry the dotted key path.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use acert_core::expr::{estimate_holder, parse_expr, AggregateKind, CoeffSpec, Expr, PathAggregate};
use acert_core::levy::{AtomLaw, DensityLaw, LevyMeasure, MeasureShape, DEFAULT_RATE_BUDGET};
use acert_core::noise::{channel, RngStream};
use acert_core::sde::{AuxProcessSpec, BrownianSdeSpec, CounterexampleSpec, LevySdeSpec, PathDepSdeSpec};
use acert_core::spde::{SpdeGrid, SpdeSpec};
use acert_core::ProcessSpec;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "`{}`: {}", self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

type Res<T> = Result<T, ConfigError>;

fn err<T>(key: impl Into<String>, message: impl Into<String>) -> Res<T> {
    Err(ConfigError { key: key.into(), message: message.into() })
}

/// A table together with its dotted path, tracking which keys were read.
struct Sect<'a> {
    path: String,
    table: Option<&'a Table>,
    used: RefCell<BTreeSet<String>>,
}

impl<'a> Sect<'a> {
    fn new(path: &str, table: Option<&'a Table>) -> Self {
        Sect { path: path.to_string(), table, used: RefCell::new(BTreeSet::new()) }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn get(&self, k: &str) -> Option<&'a Value> {
        self.used.borrow_mut().insert(k.to_string());
        self.table.and_then(|t| t.get(k))
    }

    fn sub(&self, k: &str) -> Res<Sect<'a>> {
        match self.get(k) {
            None => Ok(Sect::new(&self.key(k), None)),
            Some(Value::Table(t)) => Ok(Sect::new(&self.key(k), Some(t))),
            Some(_) => err(self.key(k), "must be a table"),
        }
    }

    fn opt_str(&self, k: &str) -> Res<Option<&'a str>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => err(self.key(k), "must be a string"),
        }
    }

    fn req_str(&self, k: &str) -> Res<&'a str> {
        self.opt_str(k)?.map_or_else(|| err(self.key(k), "missing key"), Ok)
    }

    fn opt_f64(&self, k: &str) -> Res<Option<f64>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(*v)),
            Some(Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(_) => err(self.key(k), "must be a number"),
        }
    }

    fn req_f64(&self, k: &str) -> Res<f64> {
        self.opt_f64(k)?.map_or_else(|| err(self.key(k), "missing key"), Ok)
    }

    fn opt_u64(&self, k: &str) -> Res<Option<u64>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
            Some(_) => err(self.key(k), "must be a non-negative integer"),
        }
    }

    fn opt_bool(&self, k: &str) -> Res<Option<bool>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => err(self.key(k), "must be true or false"),
        }
    }

    fn opt_f64_list(&self, k: &str) -> Res<Option<Vec<f64>>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(x) => Ok(*x as f64),
                    _ => err(format!("{}[{i}]", self.key(k)), "must be a number"),
                })
                .collect::<Res<Vec<f64>>>()
                .map(Some),
            Some(_) => err(self.key(k), "must be an array of numbers"),
        }
    }

    fn opt_pairs(&self, k: &str) -> Res<Option<Vec<(f64, f64)>>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let key = format!("{}[{i}]", self.key(k));
                    match v {
                        Value::Array(p) if p.len() == 2 => {
                            let num = |v: &Value| match v {
                                Value::Float(x) => Ok(*x),
                                Value::Integer(x) => Ok(*x as f64),
                                _ => err(key.clone(), "must hold numbers"),
                            };
                            Ok((num(&p[0])?, num(&p[1])?))
                        }
                        _ => err(key.clone(), "must be a pair [a, b]"),
                    }
                })
                .collect::<Res<Vec<_>>>()
                .map(Some),
            Some(_) => err(self.key(k), "must be an array of pairs"),
        }
    }

    fn opt_str_list(&self, k: &str) -> Res<Option<Vec<&'a str>>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Value::String(s) => Ok(s.as_str()),
                    _ => err(format!("{}[{i}]", self.key(k)), "must be a string"),
                })
                .collect::<Res<Vec<_>>>()
                .map(Some),
            Some(_) => err(self.key(k), "must be an array of strings"),
        }
    }

    fn expr(&self, k: &str) -> Res<Option<Expr>> {
        match self.opt_str(k)? {
            None => Ok(None),
            Some(s) => parse_expr(s).map(Some).or_else(|e| err(self.key(k), e.to_string())),
        }
    }

    fn req_expr(&self, k: &str) -> Res<Expr> {
        self.expr(k)?.map_or_else(|| err(self.key(k), "missing key"), Ok)
    }

    /// Rejects keys that were never read.
    fn finish(&self) -> Res<()> {
        let Some(t) = self.table else { return Ok(()) };
        let used = self.used.borrow();
        match t.keys().find(|k| !used.contains(*k)) {
            Some(k) => err(self.key(k), "unknown key"),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McConfig {
    pub n_paths: usize,
    pub h: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingConfig {
    pub eps: Vec<f64>,
    /// Moment order of the coupling defect.
    pub moment: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertifyConfig {
    pub deltas: Vec<f64>,
    pub localize: bool,
    pub xi_max: f64,
    pub n_log: usize,
    /// Overrides the coefficient's Hölder exponent in the bound.
    pub theta: Option<f64>,
    /// Constant in the exponential term (SPDE, Lévy).
    pub c_nd: Option<f64>,
    pub smoothing_variance: f64,
    pub density_range: (f64, f64),
    pub density_points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationConfig {
    pub var_tol: f64,
    pub rate_budget: f64,
    pub gaussian_residual: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Always includes `csv`; `ensemble` adds per-path dumps.
    pub formats: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub tag: String,
    pub process: ProcessSpec,
    pub mc: McConfig,
    pub coupling: CouplingConfig,
    pub certify: CertifyConfig,
    pub truncation: Option<TruncationConfig>,
    pub spde_grid: Option<SpdeGrid>,
    pub output: OutputConfig,
    /// Hex SHA-256 of the scenario text.
    pub sha256: String,
    /// Notes produced while validating, such as estimated exponents.
    pub notes: Vec<String>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Res<Scenario> {
        let root: Table = text.parse().or_else(|e: toml::de::Error| err("", format!("TOML syntax: {}", e.message())))?;
        let top = Sect::new("", Some(&root));
        let mut notes = Vec::new();

        let meta = top.sub("scenario")?;
        let name = meta.opt_str("name")?.unwrap_or("scenario").to_string();
        let description = meta.opt_str("description")?.unwrap_or("").to_string();
        let tag = meta.opt_str("tag")?.unwrap_or("").to_string();
        meta.finish()?;

        let mcs = top.sub("mc")?;
        let n_paths = mcs.opt_u64("n_paths")?.map_or_else(|| err("mc.n_paths", "missing key"), Ok)? as usize;
        if n_paths < 100 {
            return err("mc.n_paths", "must be at least 100");
        }
        let seed = mcs.opt_u64("seed")?.unwrap_or(0);
        let h_opt = mcs.opt_f64("h")?;

        let ps = top.sub("process")?;
        if ps.table.is_none() {
            return err("process", "missing section");
        }
        let kind = ps.req_str("kind")?;
        let mut truncation = None;
        let mut spde_grid = None;
        let process = match kind {
            "brownian" => {
                let sigma = coeff(&ps, "sigma", true, seed, &mut notes)?;
                let b = coeff(&ps, "b", false, seed, &mut notes)?;
                let x0 = ps.opt_f64("x0")?.unwrap_or(0.0);
                let horizon = positive(&ps, "horizon", 1.0)?;
                ProcessSpec::Brownian(BrownianSdeSpec { sigma, b, x0, horizon })
            }
            "pathdep" => {
                let sigma = coeff(&ps, "sigma", true, seed, &mut notes)?;
                let b = coeff(&ps, "b", false, seed, &mut notes)?;
                let kappa = CoeffSpec::new(ps.req_expr("kappa")?, None, 1.0).or_else(|e| err(ps.key("kappa"), e.to_string()))?;
                let kappa0 = ps.req_f64("kappa0")?;
                if !(kappa0 > 0.0) {
                    return err(ps.key("kappa0"), "must be positive");
                }
                let aggregates = ps
                    .opt_str_list("aggregates")?
                    .unwrap_or_default()
                    .iter()
                    .enumerate()
                    .map(|(i, s)| aggregate(s).or_else(|m| err(format!("{}[{i}]", ps.key("aggregates")), m)))
                    .collect::<Res<Vec<_>>>()?;
                let aux = match ps.opt_str("aux")?.unwrap_or("constant") {
                    "ou" => AuxProcessSpec::OrnsteinUhlenbeck {
                        rate: ps.req_f64("aux_rate")?,
                        vol: ps.req_f64("aux_vol")?,
                        h0: ps.opt_f64("aux_h0")?.unwrap_or(0.0),
                    },
                    "functional" => {
                        let s = ps.req_str("aux_functional")?;
                        AuxProcessSpec::PathFunctional(aggregate(s).or_else(|m| err(ps.key("aux_functional"), m))?)
                    }
                    "constant" => AuxProcessSpec::Constant { h0: ps.opt_f64("aux_h0")?.unwrap_or(0.0) },
                    other => return err(ps.key("aux"), format!("unknown auxiliary process `{other}` (ou, functional, constant)")),
                };
                let exps = ["theta1", "theta2", "theta3", "eta"]
                    .iter()
                    .map(|k| ps.opt_f64(k).map(|v| v.unwrap_or(1.0)))
                    .collect::<Res<Vec<f64>>>()?;
                ProcessSpec::PathDep(PathDepSdeSpec {
                    sigma,
                    kappa,
                    b,
                    aggregates,
                    aux,
                    kappa0,
                    theta1: exps[0],
                    theta2: exps[1],
                    theta3: exps[2],
                    eta: exps[3],
                    x0: ps.opt_f64("x0")?.unwrap_or(0.0),
                    horizon: positive(&ps, "horizon", 1.0)?,
                })
            }
            "levy" => {
                let sigma = coeff(&ps, "sigma", true, seed, &mut notes)?;
                let b = coeff(&ps, "b", false, seed, &mut notes)?;
                let alpha = ps.opt_f64("alpha")?.or(b.holder_theta).unwrap_or(0.0);
                let nu = measure(&ps.sub("measure")?)?;
                let tr = ps.sub("truncation")?;
                truncation = Some(TruncationConfig {
                    var_tol: positive(&tr, "var_tol", 1e-4)?,
                    rate_budget: positive(&tr, "rate_budget", DEFAULT_RATE_BUDGET)?,
                    gaussian_residual: tr.opt_bool("gaussian_residual")?.unwrap_or(false),
                });
                tr.finish()?;
                ProcessSpec::Levy(LevySdeSpec {
                    sigma,
                    b,
                    nu,
                    x0: ps.opt_f64("x0")?.unwrap_or(0.0),
                    alpha,
                    horizon: positive(&ps, "horizon", 1.0)?,
                })
            }
            "spde" => {
                let sigma = coeff(&ps, "sigma", true, seed, &mut notes)?;
                let b = coeff(&ps, "b", false, seed, &mut notes)?;
                let u0 = ps.expr("u0")?.unwrap_or(Expr::Lit(0.0));
                let x_obs = ps.opt_f64("x_obs")?.unwrap_or(0.5);
                if !(0.0..=1.0).contains(&x_obs) {
                    return err(ps.key("x_obs"), "must lie in [0, 1]");
                }
                let n_cells = ps.opt_u64("n_cells")?.unwrap_or(32) as usize;
                if n_cells < 4 {
                    return err(ps.key("n_cells"), "must be at least 4");
                }
                let ratio = positive(&ps, "dt_ratio", 0.25)?;
                if ratio > 0.5 {
                    return err(ps.key("dt_ratio"), "must not exceed 1/2 (explicit-scheme stability)");
                }
                let grid = SpdeGrid::with_ratio(n_cells, ratio);
                if ((x_obs * n_cells as f64).round() / n_cells as f64 - x_obs).abs() > 1e-9 {
                    return err(ps.key("x_obs"), "must be a grid node");
                }
                spde_grid = Some(grid);
                let mut spec = SpdeSpec::new(sigma, b, u0, x_obs);
                spec.horizon = positive(&ps, "horizon", 1.0)?;
                ProcessSpec::Spde(spec)
            }
            "counterexample" => {
                let mut c = CounterexampleSpec::new(
                    positive(&ps, "x0", 1.0)?,
                    ps.opt_f64("alpha")?.unwrap_or(0.5),
                    positive(&ps, "t", 10.0)?,
                );
                if !(c.alpha > 0.0 && c.alpha < 1.0) {
                    return err(ps.key("alpha"), "must lie in (0, 1)");
                }
                c.barrier = positive(&ps, "barrier", c.barrier)?;
                ProcessSpec::Counterexample(c)
            }
            other => return err(ps.key("kind"), format!("unknown process kind `{other}` (brownian, pathdep, levy, spde, counterexample)")),
        };
        ps.finish()?;

        let h = match (&process, spde_grid) {
            (_, Some(g)) => {
                if h_opt.is_some() {
                    return err("mc.h", "not used for spde; the step follows from process.n_cells and process.dt_ratio");
                }
                g.dt
            }
            _ => match h_opt {
                Some(h) if h > 0.0 => h,
                Some(_) => return err("mc.h", "must be positive"),
                None => return err("mc.h", "missing key"),
            },
        };
        mcs.finish()?;
        let mc = McConfig { n_paths, h, seed };

        let cs = top.sub("coupling")?;
        let horizon = match &process {
            ProcessSpec::Brownian(s) => s.horizon,
            ProcessSpec::PathDep(s) => s.horizon,
            ProcessSpec::Levy(s) => s.horizon,
            ProcessSpec::Spde(s) => s.horizon,
            ProcessSpec::Counterexample(s) => s.t,
        };
        let eps = match cs.opt_f64_list("eps")? {
            Some(e) => e,
            None => default_eps(&process, h),
        };
        for (i, &e) in eps.iter().enumerate() {
            let steps = e / h;
            if !(e > 0.0 && e <= horizon) || (steps.round() - steps).abs() > 1e-6 * steps.max(1.0) {
                return err(format!("coupling.eps[{i}]"), format!("{e} must be a multiple of the step {h} in (0, {horizon}]"));
            }
        }
        let moment = match (cs.opt_f64("moment")?, &process) {
            (Some(p), _) if p > 0.0 => p,
            (Some(_), _) => return err("coupling.moment", "must be positive"),
            (None, ProcessSpec::Levy(s)) => s.nu.gamma,
            (None, _) => 2.0,
        };
        cs.finish()?;
        let coupling = CouplingConfig { eps, moment };

        let ce = top.sub("certify")?;
        let deltas = match (ce.opt_f64("delta")?, ce.opt_f64_list("deltas")?) {
            (Some(_), Some(_)) => return err("certify.deltas", "give either `delta` or `deltas`, not both"),
            (Some(d), None) => vec![d],
            (None, Some(v)) if !v.is_empty() => v,
            (None, Some(_)) => return err("certify.deltas", "must not be empty"),
            (None, None) => vec![0.05],
        };
        if let Some(i) = deltas.iter().position(|d| !(*d > 0.0)) {
            return err(format!("certify.deltas[{i}]"), "must be positive");
        }
        let localize = ce.opt_bool("localize")?.unwrap_or(!matches!(process, ProcessSpec::Counterexample(_)));
        let range = ce.opt_f64_list("density_range")?.unwrap_or_else(|| vec![-5.0, 5.0]);
        if range.len() != 2 || !(range[0] < range[1]) {
            return err("certify.density_range", "must be [lo, hi] with lo < hi");
        }
        let certify = CertifyConfig {
            deltas,
            localize,
            xi_max: positive(&ce, "xi_max", 1000.0)?,
            n_log: ce.opt_u64("n_log")?.unwrap_or(60) as usize,
            theta: ce.opt_f64("theta")?,
            c_nd: ce.opt_f64("c_nd")?,
            smoothing_variance: positive(&ce, "smoothing_variance", 0.01)?,
            density_range: (range[0], range[1]),
            density_points: ce.opt_u64("density_points")?.unwrap_or(201) as usize,
        };
        if certify.xi_max <= 2.0 * 10f64.powf(1.5) {
            return err("certify.xi_max", "must exceed 64 so the tail spans 1.5 decades");
        }
        if certify.density_points < 2 {
            return err("certify.density_points", "must be at least 2");
        }
        ce.finish()?;

        let os = top.sub("output")?;
        let dir = PathBuf::from(os.opt_str("dir")?.map_or_else(|| format!("out/{name}"), str::to_string));
        let mut formats: Vec<String> = os.opt_str_list("formats")?.unwrap_or_else(|| vec!["csv"]).iter().map(|s| s.to_string()).collect();
        for (i, f) in formats.iter().enumerate() {
            if f != "csv" && f != "ensemble" {
                return err(format!("output.formats[{i}]"), format!("unknown format `{f}` (csv, ensemble)"));
            }
        }
        if !formats.iter().any(|f| f == "csv") {
            formats.insert(0, "csv".into());
        }
        os.finish()?;
        top.finish()?;

        let sha256 = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        Ok(Scenario {
            name,
            description,
            tag,
            process,
            mc,
            coupling,
            certify,
            truncation,
            spde_grid,
            output: OutputConfig { dir, formats },
            sha256,
            notes,
        })
    }
}

fn positive(s: &Sect<'_>, k: &str, default: f64) -> Res<f64> {
    match s.opt_f64(k)? {
        None => Ok(default),
        Some(v) if v > 0.0 && v.is_finite() => Ok(v),
        Some(_) => err(s.key(k), "must be positive"),
    }
}

/// Reads `k`, `k_holder` and `k_growth`. A missing diffusion exponent is
/// estimated; a missing drift exponent means measurable only.
fn coeff(s: &Sect<'_>, k: &str, required: bool, seed: u64, notes: &mut Vec<String>) -> Res<CoeffSpec> {
    let expr = match s.expr(k)? {
        Some(e) => e,
        None if required => return err(s.key(k), "missing key"),
        None => Expr::Lit(0.0),
    };
    let hk = format!("{k}_holder");
    let mut theta = s.opt_f64(&hk)?;
    if theta.is_none() && (required || expr.is_constant()) {
        if expr.is_constant() {
            theta = Some(1.0);
        } else {
            let mut rng = RngStream::new(seed, channel::stream(channel::MISC, 0));
            let est = estimate_holder(&expr, (-4.0, 4.0), 4000, &mut rng).or_else(|e| err(s.key(k), e.to_string()))?;
            notes.push(format!("{} Hölder exponent estimated as {est:.3}", s.key(k)));
            theta = Some(est);
        }
    }
    let growth = s.opt_f64(&format!("{k}_growth"))?.unwrap_or(1.0);
    CoeffSpec::new(expr, theta, growth).or_else(|e| err(s.key(&hk), e.to_string()))
}

/// `running_sup(expr)` and friends.
fn aggregate(text: &str) -> Result<PathAggregate, String> {
    let open = text.find('(').ok_or_else(|| format!("expected `kind(expr)`, got `{text}`"))?;
    let close = text.rfind(')').filter(|&c| c > open).ok_or_else(|| format!("unbalanced parentheses in `{text}`"))?;
    if !text[close + 1..].trim().is_empty() {
        return Err(format!("trailing text after `{}`", &text[..=close]));
    }
    let kind = AggregateKind::parse(text[..open].trim())
        .ok_or_else(|| format!("unknown aggregate `{}` (running_sup, running_inf, running_integral, covered_distance)", text[..open].trim()))?;
    let inner = parse_expr(&text[open + 1..close]).map_err(|e| e.to_string())?;
    PathAggregate::new(kind, inner).map_err(|e| e.to_string())
}

fn measure(s: &Sect<'_>) -> Res<LevyMeasure> {
    if s.table.is_none() {
        return err(s.path.clone(), "missing section");
    }
    let kind = s.req_str("kind")?;
    let lam = |d: f64| s.opt_f64("lambda").map(|v| v.unwrap_or(d));
    let gam = |d: f64| s.opt_f64("gamma").map(|v| v.unwrap_or(d));
    let built = match kind {
        "two_point" => Ok(LevyMeasure::two_point()),
        "power_density" => LevyMeasure::power_density(lam(1.5)?, gam(2.0)?),
        "symmetric_power_density" => LevyMeasure::symmetric_power_density(lam(1.5)?, gam(2.0)?),
        "power_atoms" => LevyMeasure::power_atoms(lam(1.0)?, s.opt_f64("atom_alpha")?.unwrap_or(1.0), gam(2.0)?),
        "finite" => {
            let atoms = s.opt_pairs("atoms")?.map_or_else(|| err(s.key("atoms"), "missing key"), Ok)?;
            LevyMeasure::finite(atoms, lam(1.0)?, gam(2.0)?)
        }
        "atoms_formula" => {
            let location = s.req_expr("location")?;
            let rate = s.req_expr("rate")?;
            LevyMeasure::new(MeasureShape::Atomic(AtomLaw::Formula { location, rate }), s.req_f64("lambda")?, s.req_f64("gamma")?)
        }
        "density_formula" => {
            let law = DensityLaw::Formula(s.req_expr("density")?);
            let support = s.opt_pairs("support")?.map_or_else(|| err(s.key("support"), "missing key"), Ok)?;
            LevyMeasure::new(MeasureShape::Density { law, support }, s.req_f64("lambda")?, s.req_f64("gamma")?)
        }
        other => {
            return err(
                s.key("kind"),
                format!("unknown measure `{other}` (two_point, power_density, symmetric_power_density, power_atoms, finite, atoms_formula, density_formula)"),
            )
        }
    };
    let nu = built.or_else(|e| err(s.path.clone(), e.to_string()))?;
    let nu = nu.with_constants(s.opt_f64("c_lower")?, s.opt_f64("xi0")?);
    // keys only some kinds read
    for k in ["lambda", "gamma", "atom_alpha", "atoms", "location", "rate", "density", "support"] {
        if s.table.is_some_and(|t| t.contains_key(k)) && !s.used.borrow().contains(k) {
            return err(s.key(k), format!("not used by measure kind `{kind}`"));
        }
    }
    s.finish()?;
    Ok(nu)
}

/// Dyadic ε grid suited to each process class.
fn default_eps(p: &ProcessSpec, h: f64) -> Vec<f64> {
    let (lo, hi) = match p {
        ProcessSpec::Levy(_) => (1, 5),
        ProcessSpec::Spde(_) => (3, 8),
        // no coupling step
        ProcessSpec::Counterexample(_) => return Vec::new(),
        _ => (3, 9),
    };
    (lo..=hi).map(|k| 0.5f64.powi(k)).filter(|&e| e >= h).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"
[process]
kind = "brownian"
sigma = "1"
[mc]
n_paths = 100
h = 0.0078125
"#;

    #[test]
    fn minimal_brownian() {
        let s = Scenario::from_toml_str(MIN).unwrap();
        assert_eq!(s.mc.n_paths, 100);
        assert_eq!(s.certify.deltas, vec![0.05]);
        assert_eq!(s.coupling.eps.len(), 5);
        assert_eq!(s.sha256.len(), 64);
    }

    #[test]
    fn key_paths_in_errors() {
        let missing = MIN.replace("sigma = \"1\"\n", "");
        assert_eq!(Scenario::from_toml_str(&missing).unwrap_err().key, "process.sigma");
        let typo = MIN.replace("n_paths", "npaths");
        let e = Scenario::from_toml_str(&typo).unwrap_err();
        assert_eq!(e.key, "mc.n_paths");
        let bad_expr = MIN.replace("\"1\"", "\"sin(\"");
        assert_eq!(Scenario::from_toml_str(&bad_expr).unwrap_err().key, "process.sigma");
        let extra = format!("{MIN}\n[certify]\ndelta = 0.1\nfoo = 1\n");
        assert_eq!(Scenario::from_toml_str(&extra).unwrap_err().key, "certify.foo");
        let eps = format!("{MIN}\n[coupling]\neps = [0.1]\n");
        assert_eq!(Scenario::from_toml_str(&eps).unwrap_err().key, "coupling.eps[0]");
    }

    #[test]
    fn aggregate_syntax() {
        assert!(aggregate("running_sup(abs(x))").is_ok());
        assert!(aggregate("running_max(x)").is_err());
        assert!(aggregate("running_sup(t)").is_err());
        assert!(aggregate("running_sup x").is_err());
    }
}
