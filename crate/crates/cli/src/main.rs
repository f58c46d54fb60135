use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use elmap_cli::{run, validate, CliError, ExperimentConfig, Mode, Overrides};

#[derive(Parser)]
#[command(name = "elmap", version, about = "Elastic-map trajectory reproduction with perturbation-based confidence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve once and write solution.json and plotdata.csv.
    Solve(Common),
    /// Perturb one constraint and write curve.json.
    Sweep(Common),
    /// Solve at several confidence factors and write family.json.
    Family(Common),
    /// Solve and report which constraints zero-dual pruning removed.
    PruneReport(Common),
    /// Run the invariant checks on a config.
    Validate(Common),
    /// Run whatever mode the config names.
    Run(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sigma_s: Option<f64>,
    /// Comma-separated confidence factors.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
}

fn load(c: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    Overrides { out: c.out.clone(), sigma_s: c.sigma_s, levels: c.levels.clone(), seed: c.seed, tol: c.tol }.apply(&mut cfg)?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (common, mode) = match &cli.command {
        Command::Solve(c) => (c, Some(Mode::Solve)),
        Command::Sweep(c) => (c, Some(Mode::Sweep)),
        Command::Family(c) => (c, Some(Mode::Family)),
        Command::PruneReport(c) => (c, Some(Mode::PruneReport)),
        Command::Run(c) => (c, None),
        Command::Validate(c) => {
            let cfg = load(c)?;
            let checks = validate(&cfg)?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return if failed == 0 { Ok(()) } else { Err(CliError::Invariants(failed)) };
        }
    };
    let cfg = load(common)?;
    let summary = run(&cfg, mode.unwrap_or(cfg.mode))?;
    for line in &summary.lines {
        println!("{line}");
    }
    for f in &summary.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
