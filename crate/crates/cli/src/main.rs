use std::path::PathBuf;
use std::process::ExitCode;

use acert_cli::{catalog, run_scenario, RunOptions, Scenario};
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "acert", version, about = "Monte Carlo certification of absolute continuity for SDE and SPDE laws")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write CSV reports.
    Run(RunArgs),
    /// List bundled scenarios and Lévy measure kinds.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML file.
    #[arg(long, env = "ACERT_CONFIG", conflicts_with = "builtin", required_unless_present = "builtin")]
    config: Option<PathBuf>,
    /// Name of a bundled scenario (see `acert list`).
    #[arg(long)]
    builtin: Option<String>,
    /// Overrides `mc.seed`.
    #[arg(long, env = "ACERT_SEED")]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "ACERT_WORKERS")]
    workers: Option<usize>,
    /// Overrides `output.dir`.
    #[arg(long, env = "ACERT_OUT")]
    out: Option<PathBuf>,
    /// Also write plot_*.csv files with x,y,band columns.
    #[arg(long, env = "ACERT_PLOTDATA")]
    plotdata: bool,
}

fn load(args: &RunArgs) -> anyhow::Result<Scenario> {
    match (&args.config, &args.builtin) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Scenario::from_toml_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))
        }
        (None, Some(name)) => catalog::load(name)
            .ok_or_else(|| anyhow!("no bundled scenario `{name}`; try `acert list`"))?
            .map_err(|e| anyhow!("{name}: {e}")),
        (None, None) => Err(anyhow!("give --config or --builtin")),
    }
}

fn run(args: RunArgs) -> anyhow::Result<i32> {
    let sc = load(&args)?;
    let opts = RunOptions { seed: args.seed, out: args.out, workers: args.workers, plotdata: args.plotdata };
    let rep = run_scenario(&sc, &opts)?;
    for (k, v) in &rep.summary {
        if k != "pass_semantics" {
            println!("{k:<28} {v}");
        }
    }
    for f in &rep.files {
        println!("wrote {}", f.display());
    }
    Ok(rep.exit_code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::List => {
            println!("scenarios:");
            for b in catalog::BUILTINS {
                let sc = Scenario::from_toml_str(b.text).expect("bundled scenarios parse");
                println!("  {:<22} [{}] {}", b.name, sc.tag, sc.description);
            }
            println!("measures:");
            for (k, d) in catalog::MEASURES {
                println!("  {k:<24} {d}");
            }
            ExitCode::SUCCESS
        }
        Cmd::Run(args) => match run(args) {
            Ok(code) => ExitCode::from(code as u8),
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}
