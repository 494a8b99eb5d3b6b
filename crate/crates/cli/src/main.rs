use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rwre_core::runner::{self, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "rwre", version, about = "Particle currents of random walks in a random environment")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "RWRE_WORKERS")]
    workers: Option<usize>,

    /// Output directory (default: the configured one, else ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Limit parameters and Psi/Gamma tables.
    Theory,
    /// Sample environments and export their profiles.
    Env,
    /// Replica simulation alongside exact quenched moments.
    Simulate,
    /// Run the acceptance suite; exits 1 if any check fails.
    Verify,
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.workers {
        anyhow::ensure!(n > 0, "--workers must be positive");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    let out = cli
        .out
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    match cli.command {
        Command::Theory => {
            let (r, _) = runner::cmd_theory(&config, &out)?;
            println!("v_P          {}", r.speed);
            println!("E T_1        {}", r.mean_crossing);
            println!("mu           {}", r.mu);
            println!("sigma0^2     {}", r.sigma0_sq);
            println!("sigma1^2     {} +- {} (closed form {})", r.sigma1_sq, r.sigma1_sq_se, r.sigma1_sq_closed);
            println!("sigma2^2     {}", r.sigma2_sq);
        }
        Command::Env => {
            let (s, _) = runner::cmd_env(&config, &out)?;
            for e in s {
                println!(
                    "env {}: window [{}, {}], sup|h| = {:.4}, Z_n(1) = {:?}",
                    e.environment, e.window.lo, e.window.hi, e.sup_abs_h, e.z
                );
            }
        }
        Command::Simulate => {
            let (s, _) = runner::cmd_simulate(&config, &out)?;
            for m in s {
                println!(
                    "env {} n {}: {} replicas, exact mean {:?}",
                    m.environment, m.n, m.replicas, m.exact.mean
                );
            }
        }
        Command::Verify => {
            let (report, _) = runner::cmd_verify(&config, &out)?;
            print!("{}", report.table());
            return Ok(report.passed());
        }
    }
    println!("artifacts in {}", out.display());
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
