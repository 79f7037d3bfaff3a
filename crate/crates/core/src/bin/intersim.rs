use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use intersim::check::check_run;
use intersim::config::{load_config, ConfigError, ScenarioConfig};
use intersim::output::{emit, read_run};
use intersim::signal::Policy;
use intersim::sim::{Engine, SimError};
use intersim::sweep::{cell_name, sweep};

const EXIT_CONFIG: u8 = 2;
const EXIT_BREACH: u8 = 3;

#[derive(Parser)]
#[command(name = "intersim", version, about = "Signalized intersection with connected and human-driven vehicles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        penetration: Option<f64>,
        #[arg(long, value_parser = parse_policy)]
        policy: Option<Policy>,
        #[arg(long)]
        cycle: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the twelve policy-by-penetration cells.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        /// Skip trajectory traces.
        #[arg(long)]
        no_trace: bool,
    },
    /// Check the invariants of an emitted run directory.
    Check { dir: PathBuf },
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    match s {
        "adaptive" | "ac" => Ok(Policy::Adaptive),
        "fixed" | "fc" => Ok(Policy::Fixed),
        other => Err(format!("unknown policy `{other}` (adaptive or fixed)")),
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Breach(anyhow::Error),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        if e.downcast_ref::<ConfigError>().is_some() {
            return Failure::Config(e);
        }
        match e.downcast_ref::<SimError>() {
            Some(SimError::Config(_)) => Failure::Config(e),
            Some(SimError::Breach(_)) => Failure::Breach(e),
            None => Failure::Other(e),
        }
    }
}

fn base_config(path: Option<&PathBuf>) -> anyhow::Result<ScenarioConfig> {
    match path {
        Some(p) => Ok(load_config(p)?),
        None => Ok(ScenarioConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, seed, penetration, policy, cycle, out } => {
            let mut cfg = base_config(config.as_ref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = penetration {
                cfg.penetration = p;
            }
            if let Some(p) = policy {
                cfg.policy = p;
            }
            if let Some(c) = cycle {
                cfg.t_cycle = c;
                cfg.first_cycle_durations = None;
            }
            cfg.validate().map_err(|e| Failure::Config(e.into()))?;
            let output = Engine::new(&cfg).map_err(anyhow::Error::from)?.run().map_err(anyhow::Error::from)?;
            emit(&output, &out).map_err(anyhow::Error::from)?;
            let m = &output.metrics;
            println!(
                "vehicles {} exited {} mean travel time {:.3} s (cav {:.3}, hdv {:.3}) mean energy {:.4} complete {}",
                m.spawned, m.exited, m.all.travel_time, m.cav.travel_time, m.hdv.travel_time, m.all.energy, m.complete
            );
        }
        Command::Sweep { config, seed, out, no_trace } => {
            let mut cfg = base_config(config.as_ref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let rows = sweep(&cfg, !no_trace, |cell, pen, output| -> anyhow::Result<()> {
                emit(output, &out.join(cell_name(cell, pen)))?;
                Ok(())
            })?;
            let path = out.join("summary.csv");
            let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
            for r in &rows {
                w.serialize(r).map_err(anyhow::Error::from)?;
                println!("{:<10} mean travel time {:8.3} s  breaches {}", r.cell, r.mean_travel_time, r.breaches);
            }
            w.flush().map_err(anyhow::Error::from)?;
        }
        Command::Check { dir } => {
            let artifacts = read_run(&dir).map_err(anyhow::Error::from)?;
            let report = check_run(&artifacts);
            println!("{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?);
            if !report.is_clean() {
                return Err(Failure::Breach(anyhow::anyhow!("{} invariant violations", report.violations())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Breach(e)) => {
            eprintln!("invariant breach: {e:#}");
            ExitCode::from(EXIT_BREACH)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
