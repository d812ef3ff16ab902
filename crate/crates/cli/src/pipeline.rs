//! simulate → couple → fit exponents → estimate the characteristic function
//! → certify → reconstruct, with every result written as CSV.

use std::io::{self, Write};
use std::path::PathBuf;

use acert_core::fit::{FitError, FitOutcome};
use acert_core::fourier::{
    certify_decay, default_xi_grid, estimate_charfn, l2_tail, reconstruct_density, write_charfn_csv,
    write_density_csv, write_l2_tail_csv, BoundParams, CharFnEstimate, DecayBoundReport, L2TailReport, Localization,
    Variant,
};
use acert_core::levy::{check_tasoeur1, plan_truncation};
use acert_core::sde::{couple_one_step, fit_one_step_exponent, run_counterexample, CoupledEnsemble, SdeModel};
use acert_core::spde::{
    couple_spde_one_step, fit_spde_one_step, spde_regularity_fit, y_eps_defect_fit, HeatKernelCalc,
};
use acert_core::{stats, ProcessSpec};
use anyhow::{Context, Result};

use crate::config::Scenario;
use crate::output::{ReportWriter, RunMeta};

/// Exit code for a run whose certification failed.
pub const EXIT_CERT_FAIL: i32 = 2;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub plotdata: bool,
}

/// One row of `exponents.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExponentRow {
    pub quantity: String,
    pub target: String,
    pub outcome: Option<FitOutcome>,
    pub scales: Vec<f64>,
    pub moments: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DeltaResult {
    pub localization: Localization,
    pub estimate: CharFnEstimate,
    pub report: DecayBoundReport,
    pub l2: L2TailReport,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
    pub summary: Vec<(String, String)>,
    pub deltas: Vec<DeltaResult>,
    pub exponents: Vec<ExponentRow>,
    /// Counterexample only: estimated atom mass at 0.
    pub atom_mass: Option<f64>,
}

struct Simulated {
    terminal: Vec<f64>,
    /// What the localization weight is applied to.
    weight_base: Vec<f64>,
    coupled: Option<CoupledEnsemble>,
    exponents: Vec<ExponentRow>,
    extra: Vec<(String, String)>,
    atom_mass: Option<f64>,
    params: BoundParams,
}

fn fit_row(quantity: &str, target: String, scales: &[f64], moments: Vec<f64>, fit: Result<FitOutcome, FitError>) -> ExponentRow {
    ExponentRow { quantity: quantity.into(), target, outcome: fit.ok(), scales: scales.to_vec(), moments }
}

fn simulate(sc: &Scenario, seed: u64) -> Result<Simulated> {
    let mc = sc.mc;
    let eps = &sc.coupling.eps;
    let p = sc.coupling.moment;
    let theta_of = |s: &acert_core::CoeffSpec| sc.certify.theta.or(s.holder_theta).unwrap_or(0.0);
    match &sc.process {
        ProcessSpec::Brownian(spec) => {
            let c = couple_one_step(SdeModel::Brownian(spec), eps, mc.n_paths, mc.h, seed)?;
            let theta = theta_of(&spec.sigma);
            let fit = fit_one_step_exponent(&c, p);
            let row = fit_row("one_step_defect", format!("{:.4}", p / 2.0 * (1.0 + theta)), eps, c.defect_moments(p), fit);
            Ok(Simulated {
                terminal: c.terminal_x.clone(),
                weight_base: c.sigma_at_terminal.clone(),
                extra: vec![("sup_sq_mean".into(), format!("{:e}", c.sup_sq_mean))],
                coupled: Some(c),
                exponents: vec![row],
                atom_mass: None,
                params: BoundParams { theta, ..Default::default() },
            })
        }
        ProcessSpec::PathDep(spec) => {
            let c = couple_one_step(SdeModel::PathDep(spec), eps, mc.n_paths, mc.h, seed)?;
            let theta = sc.certify.theta.unwrap_or_else(|| spec.derived_theta());
            let fit = fit_one_step_exponent(&c, p);
            let row = fit_row("one_step_defect", format!("{:.4}", p / 2.0 * (1.0 + theta)), eps, c.defect_moments(p), fit);
            Ok(Simulated {
                terminal: c.terminal_x.clone(),
                weight_base: c.sigma_at_terminal.clone(),
                extra: vec![("sup_sq_mean".into(), format!("{:e}", c.sup_sq_mean))],
                coupled: Some(c),
                exponents: vec![row],
                atom_mass: None,
                params: BoundParams {
                    theta,
                    kappa0: spec.kappa0,
                    alpha: spec.sigma.holder_theta.unwrap_or(0.0),
                    ..Default::default()
                },
            })
        }
        ProcessSpec::Levy(spec) => {
            let tr = sc.truncation.expect("levy scenarios carry truncation settings");
            let plan = plan_truncation(&spec.nu, tr.var_tol, tr.rate_budget)?.with_gaussian_residual(tr.gaussian_residual);
            let c = couple_one_step(SdeModel::Levy(spec, &plan), eps, mc.n_paths, mc.h, seed)?;
            let zeta = spec.zeta();
            let fit = fit_one_step_exponent(&c, p);
            let row = fit_row("one_step_defect", format!("{:.4}", 1.0 + zeta), eps, c.defect_moments(p), fit);
            let mut extra = vec![
                ("truncation_rho".into(), format!("{:e}", plan.rho)),
                ("kept_jump_rate".into(), format!("{:e}", plan.kept_rate)),
                ("residual_variance".into(), format!("{:e}", plan.residual_variance)),
                ("zeta".into(), format!("{zeta}")),
                ("zeta_admissible".into(), spec.zeta_admissible().to_string()),
            ];
            let c_nd = match sc.certify.c_nd.or(spec.nu.c_lower) {
                Some(c) => c,
                None => {
                    let rep = check_tasoeur1(&spec.nu, &stats::logspace(1.0, 1e3, 31))?;
                    extra.push(("lower_decay_lambda_hat".into(), format!("{}", rep.lambda_hat)));
                    extra.push(("lower_decay_pass".into(), rep.pass.to_string()));
                    rep.c_hat
                }
            };
            extra.push(("c_nd".into(), format!("{c_nd:e}")));
            Ok(Simulated {
                terminal: c.terminal_x.clone(),
                weight_base: c.sigma_at_terminal.clone(),
                coupled: Some(c),
                exponents: vec![row],
                extra,
                atom_mass: None,
                params: BoundParams {
                    theta: theta_of(&spec.sigma),
                    c_nd,
                    lambda: spec.nu.lambda,
                    gamma: spec.nu.gamma,
                    zeta,
                    xi0: spec.nu.xi0.unwrap_or(1.0),
                    ..Default::default()
                },
            })
        }
        ProcessSpec::Spde(spec) => {
            let grid = sc.spde_grid.expect("spde scenarios carry a grid");
            let (ens, c) = couple_spde_one_step(spec, eps, mc.n_paths, grid, seed)?;
            let theta = theta_of(&spec.sigma);
            let mut rows = vec![fit_row(
                "one_step_defect",
                format!("{:.4}", (1.0 + theta) / 2.0),
                eps,
                c.defect_moments(2.0),
                fit_spde_one_step(&c),
            )];
            let mut extra = Vec::new();
            let obs = (spec.x_obs / grid.dx()).round() as usize;
            match spde_regularity_fit(&ens) {
                Ok(reg) => {
                    let time_m: Vec<f64> = ens
                        .snapshots
                        .iter()
                        .map(|s| stats::mean(&s.iter().zip(&ens.terminal).map(|(a, b)| (b[obs] - a[obs]).powi(2)).collect::<Vec<_>>()))
                        .collect();
                    rows.push(fit_row("time_increment", "0.5".into(), eps, time_m, Ok(reg.time)));
                    rows.push(ExponentRow {
                        quantity: "space_increment".into(),
                        target: "1".into(),
                        outcome: Some(reg.space),
                        scales: Vec::new(),
                        moments: Vec::new(),
                    });
                    extra.push(("max_second_moment".into(), format!("{:e}", reg.max_second_moment)));
                }
                Err(e) => extra.push(("regularity".into(), e.to_string())),
            }
            let y = y_eps_defect_fit(&ens, &spec.sigma, &HeatKernelCalc::default());
            rows.push(ExponentRow {
                quantity: "y_eps_defect".into(),
                target: format!(">= {:.4}", theta / 4.0),
                outcome: y.ok(),
                scales: Vec::new(),
                moments: Vec::new(),
            });
            let weight_base = c
                .terminal_x
                .iter()
                .map(|&u| spec.sigma.eval_x(u).map(|s| s * s))
                .collect::<Result<Vec<f64>, _>>()?;
            Ok(Simulated {
                terminal: c.terminal_x.clone(),
                weight_base,
                coupled: Some(c),
                exponents: rows,
                extra,
                atom_mass: None,
                params: BoundParams { theta, c_nd: sc.certify.c_nd.unwrap_or(1.0), ..Default::default() },
            })
        }
        ProcessSpec::Counterexample(spec) => {
            let r = run_counterexample(spec, mc.n_paths, mc.h, seed)?;
            let extra = vec![
                ("atom_mass_hat".into(), format!("{}", r.p_atom_hat)),
                ("mean_hit_time".into(), format!("{}", r.mean_hit_time)),
                ("hit_time_bound".into(), format!("{}", r.bound)),
                ("barrier".into(), format!("{:e}", r.barrier)),
            ];
            Ok(Simulated {
                terminal: r.terminal.terminal_x.clone(),
                weight_base: r.terminal.sigma_at_terminal.clone(),
                coupled: None,
                exponents: Vec::new(),
                extra,
                atom_mass: Some(r.p_atom_hat),
                params: BoundParams { theta: 1.0, ..Default::default() },
            })
        }
    }
}

/// `I(Ξ)` cutoffs: powers of two up to the grid end.
fn l2_sweep(xi_max: f64) -> Vec<f64> {
    let mut v = Vec::new();
    let mut c = 1.0;
    while c <= xi_max {
        v.push(c);
        c *= 2.0;
    }
    v
}

/// Uniform frequency grid fine enough for inversion on `range` and long
/// enough for the Gaussian damping to reach the edge tolerance.
fn density_grid(v: f64, range: (f64, f64)) -> Vec<f64> {
    let xi_end = (2.0 * (2e6f64).ln() / v).sqrt();
    let span = range.0.abs().max(range.1.abs()).max(1.0);
    let step = (std::f64::consts::PI / (4.0 * span)).min(0.05);
    let n = (xi_end / step).ceil() as usize + 1;
    stats::linspace(0.0, (n - 1) as f64 * step, n)
}

fn write_exponents<W: Write>(w: &mut W, rows: &[ExponentRow]) -> io::Result<()> {
    writeln!(w, "quantity,scale,moment,slope,slope_lo,slope_hi,r2,target")?;
    for r in rows {
        let fit = match &r.outcome {
            Some(FitOutcome::Fitted(f)) => format!("{:.6},{:.6},{:.6},{:.6}", f.slope, f.slope_ci.0, f.slope_ci.1, f.r2),
            Some(FitOutcome::ZeroDefect) => "zero_defect,,,".into(),
            None => "unfitted,,,".into(),
        };
        if r.scales.is_empty() {
            writeln!(w, "{},,,{fit},{}", r.quantity, r.target)?;
        }
        for (s, m) in r.scales.iter().zip(&r.moments) {
            writeln!(w, "{},{s:e},{m:e},{fit},{}", r.quantity, r.target)?;
        }
    }
    Ok(())
}

fn write_bound<W: Write>(w: &mut W, est: &CharFnEstimate, rep: &DecayBoundReport) -> io::Result<()> {
    writeln!(w, "xi,re,im,stderr,modulus_sq_unbiased,eps,bound,margin")?;
    for row in &rep.rows {
        let k = est.xi_grid.iter().position(|&x| x == row.xi).expect("report rows come from the grid");
        let m = est.estimate[k];
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            row.xi, m.re, m.im, est.stderr[k], est.modulus_sq_unbiased[k], row.eps, row.bound, row.margin
        )?;
    }
    Ok(())
}

fn suffix(loc: &Localization, multi: bool) -> String {
    match (loc, multi) {
        (Localization::Ramp(d), true) => format!("_delta{d}"),
        _ => String::new(),
    }
}

/// Runs a validated scenario and writes its reports.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    match opts.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().context("building worker pool")?;
            pool.install(|| run_inner(sc, opts))
        }
        None => run_inner(sc, opts),
    }
}

fn run_inner(sc: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    let seed = opts.seed.unwrap_or(sc.mc.seed);
    let dir = opts.out.clone().unwrap_or_else(|| sc.output.dir.clone());
    let variant: Variant = sc.process.variant();
    let sim = simulate(sc, seed).with_context(|| format!("simulating scenario `{}`", sc.name))?;

    let meta = RunMeta {
        scenario_sha256: sc.sha256.clone(),
        master_seed: seed,
        n_paths: sc.mc.n_paths,
        h: sc.mc.h,
        variant: variant.tag().to_string(),
    };
    let mut out = ReportWriter::create(&dir, meta).with_context(|| format!("creating {}", dir.display()))?;

    let locs: Vec<Localization> = if sc.certify.localize {
        sc.certify.deltas.iter().map(|&d| Localization::Ramp(d)).collect()
    } else {
        vec![Localization::None]
    };
    let multi = locs.len() > 1;
    let xi_grid = default_xi_grid(sc.certify.xi_max, sc.certify.n_log);
    let mut deltas = Vec::new();
    let mut density_note = Vec::new();
    for loc in locs {
        let est = estimate_charfn(&sim.terminal, &sim.weight_base, loc, &xi_grid)?;
        let rep = certify_decay(&est, variant, &sim.params)?;
        let l2 = l2_tail(&est, &l2_sweep(sc.certify.xi_max));
        let sfx = suffix(&loc, multi);
        out.write(&format!("charfn{sfx}.csv"), |w| write_charfn_csv(w, &est, None))?;
        out.write(&format!("bound{sfx}.csv"), |w| write_bound(w, &est, &rep))?;
        out.write(&format!("l2_tail{sfx}.csv"), |w| write_l2_tail_csv(w, &l2))?;

        let v = sc.certify.smoothing_variance;
        let dgrid = density_grid(v, sc.certify.density_range);
        let dest = estimate_charfn(&sim.terminal, &sim.weight_base, loc, &dgrid)?;
        let xs = stats::linspace(sc.certify.density_range.0, sc.certify.density_range.1, sc.certify.density_points);
        match reconstruct_density(&dest, v, &xs) {
            Ok(d) => {
                out.write(&format!("density{sfx}.csv"), |w| write_density_csv(w, &d))?;
                density_note.push(format!("{}", d.total_mass));
                if opts.plotdata {
                    out.write(&format!("plot_density{sfx}.csv"), |w| {
                        writeln!(w, "x,y,band")?;
                        for (x, y) in d.x_grid.iter().zip(&d.values) {
                            writeln!(w, "{x:e},{y:e},0")?;
                        }
                        Ok(())
                    })?;
                }
            }
            Err(e) => density_note.push(format!("skipped: {e}")),
        }
        if opts.plotdata {
            out.write(&format!("plot_charfn{sfx}.csv"), |w| {
                writeln!(w, "x,y,band")?;
                for k in 0..est.xi_grid.len() {
                    writeln!(w, "{:e},{:e},{:e}", est.xi_grid[k], est.modulus(k), 3.0 * est.stderr[k])?;
                }
                Ok(())
            })?;
            out.write(&format!("plot_bound{sfx}.csv"), |w| {
                writeln!(w, "x,y,band")?;
                for r in &rep.rows {
                    writeln!(w, "{:e},{:e},{:e}", r.xi, r.bound, r.margin)?;
                }
                Ok(())
            })?;
        }
        deltas.push(DeltaResult { localization: loc, estimate: est, report: rep, l2 });
    }

    out.write("exponents.csv", |w| write_exponents(w, &sim.exponents))?;
    if opts.plotdata {
        out.write("plot_exponents.csv", |w| {
            writeln!(w, "x,y,band")?;
            for r in &sim.exponents {
                if let Some(FitOutcome::Fitted(f)) = &r.outcome {
                    for (x, y) in &f.points {
                        writeln!(w, "{x:e},{y:e},{:e}", (f.slope_ci.1 - f.slope_ci.0) / 2.0)?;
                    }
                }
            }
            Ok(())
        })?;
    }
    if let Some(c) = &sim.coupled {
        if sc.output.formats.iter().any(|f| f == "ensemble") {
            out.write("ensemble.csv", |w| c.write_csv(w))?;
        }
    }

    let pass = deltas.iter().all(|d| d.report.pass);
    let mut summary: Vec<(String, String)> = vec![
        ("scenario".into(), sc.name.clone()),
        ("kind".into(), sc.process.kind().into()),
        ("variant".into(), variant.tag().into()),
        ("certified".into(), pass.to_string()),
    ];
    for d in &deltas {
        let tag = match d.localization {
            Localization::Ramp(x) => format!("delta={x}"),
            Localization::None => "unlocalized".into(),
        };
        let r = &d.report;
        summary.push((format!("{tag}.pass"), r.pass.to_string()));
        summary.push((format!("{tag}.fitted_c"), format!("{:e}", r.fitted_c)));
        summary.push((format!("{tag}.l2_proxy"), format!("{:e}", r.l2_proxy)));
        summary.push((format!("{tag}.declared_exponent"), format!("{}", r.declared_exponent)));
        summary.push((
            format!("{tag}.data_exponent"),
            r.data_exponent.map_or("below_noise".into(), |q| format!("{q}")),
        ));
        summary.push((format!("{tag}.weight_mass"), format!("{}", d.estimate.weight_mass)));
        summary.push((format!("{tag}.l2_saturated"), d.l2.saturated(0.01).to_string()));
    }
    for n in &density_note {
        summary.push(("density_total_mass".into(), n.clone()));
    }
    summary.extend(sim.extra.iter().cloned());
    for n in &sc.notes {
        summary.push(("note".into(), n.clone()));
    }
    summary.push(("pass_semantics".into(), DecayBoundReport::SEMANTICS.into()));
    out.write("summary.csv", |w| {
        writeln!(w, "key,value")?;
        for (k, v) in &summary {
            writeln!(w, "{k},\"{}\"", v.replace('"', "'"))?;
        }
        Ok(())
    })?;

    Ok(RunReport {
        exit_code: if pass { 0 } else { EXIT_CERT_FAIL },
        files: out.files,
        summary,
        deltas,
        exponents: sim.exponents,
        atom_mass: sim.atom_mass,
    })
}
