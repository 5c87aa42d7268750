use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Parser;

use acolab_cli::{list_experiments, run_experiment, ExperimentSpec};

/// Run a registered experiment and write its artifacts and manifest.
#[derive(Debug, Parser)]
#[command(name = "acolab", version)]
struct Args {
    /// Experiment name; see --list.
    #[arg(long)]
    experiment: Option<String>,
    /// TOML file overriding the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; defaults to runs/<experiment>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print registered experiments and exit.
    #[arg(long)]
    list: bool,
}

fn run(args: Args) -> Result<bool> {
    if args.list {
        for e in list_experiments() {
            println!("{:<22} {}\n{:<22} [{}]", e.name, e.description, "", e.anchor);
        }
        return Ok(true);
    }
    let Some(name) = args.experiment else {
        bail!("missing --experiment NAME (use --list to see the registry)");
    };
    let out = args.out.unwrap_or_else(|| PathBuf::from("runs").join(&name));
    let spec = ExperimentSpec {
        name,
        config: args.config,
        seed: args.seed,
        out: out.clone(),
    };
    let manifest = run_experiment(&spec)?;
    for c in &manifest.checks {
        println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
    }
    println!("manifest: {}", out.join("manifest.json").display());
    Ok(manifest.passed)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
