use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pvrecon::config::ExperimentConfig;
use pvrecon::experiment::{self, NOISY_FILE, SMOOTHED_FILE, VELOCITY_FILE};
use pvrecon::Error;
use serde::Serialize;

/// Point-vortex circulation and trajectory recovery from passive tracers.
#[derive(Parser)]
#[command(name = "pvrecon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML); the built-in reference experiment when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replaces every stage seed with values derived from this one.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::reference(),
        };
        if let Some(seed) = self.seed {
            cfg.override_seed(seed);
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the configured system; writes vortex and tracer files.
    Simulate(#[command(flatten)] Common),
    /// Add Gaussian noise to a raw tracer file.
    Corrupt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Gaussian-smooth a tracer file.
    Smooth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Finite-difference tracer velocities.
    Velocities {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Estimate circulations from tracer positions and velocities.
    Circulations {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tracers: PathBuf,
        #[arg(long)]
        velocities: PathBuf,
        /// Ground-truth vortex file; enables error reporting.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Recover vortex trajectories with circulations held fixed.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tracers: PathBuf,
        /// Report written by `circulations`.
        #[arg(long)]
        circulations: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Compare a recovered vortex file with the truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        recovered: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Report written by `reconstruct`; adds partition-boundary flags.
        #[arg(long)]
        reconstruction: Option<PathBuf>,
    },
    /// Largest Lyapunov exponent of the configured vortex system.
    Lyapunov(#[command(flatten)] Common),
    /// Tracer autocorrelation curves and the decorrelation time.
    Autocorr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tracers: PathBuf,
        /// Write every n-th lag to the table.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Every stage in order; writes metrics.json.
    Pipeline(#[command(flatten)] Common),
    /// Print the reference configuration as TOML.
    ReferenceConfig,
}

#[derive(Serialize)]
struct Paths {
    written: Vec<PathBuf>,
}

fn print<T: Serialize>(value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn prepare(common: &Common) -> Result<ExperimentConfig, Error> {
    let cfg = common.load()?;
    std::fs::create_dir_all(&common.out)?;
    Ok(cfg)
}

fn written(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = prepare(&common)?;
            let (v, t) = experiment::cmd_simulate(&cfg, &common.out)?;
            print(&Paths { written: vec![v, t] })
        }
        Command::Corrupt { common, input } => {
            let cfg = prepare(&common)?;
            let path = written(&common.out, NOISY_FILE);
            experiment::cmd_corrupt(&cfg, &input, &path)?;
            print(&Paths { written: vec![path] })
        }
        Command::Smooth { common, input } => {
            let cfg = prepare(&common)?;
            let path = written(&common.out, SMOOTHED_FILE);
            experiment::cmd_smooth(&cfg, &input, &path)?;
            print(&Paths { written: vec![path] })
        }
        Command::Velocities { common, input } => {
            prepare(&common)?;
            let path = written(&common.out, VELOCITY_FILE);
            experiment::cmd_velocities(&input, &path)?;
            print(&Paths { written: vec![path] })
        }
        Command::Circulations { common, tracers, velocities, truth } => {
            let cfg = prepare(&common)?;
            print(&experiment::cmd_circulations(&cfg, &tracers, &velocities, truth.as_deref(), &common.out)?)
        }
        Command::Reconstruct { common, tracers, circulations, truth } => {
            let cfg = prepare(&common)?;
            print(&experiment::cmd_reconstruct(&cfg, &tracers, &circulations, truth.as_deref(), &common.out)?)
        }
        Command::Evaluate { common, recovered, truth, reconstruction } => {
            prepare(&common)?;
            print(&experiment::cmd_evaluate(&recovered, &truth, reconstruction.as_deref(), &common.out)?)
        }
        Command::Lyapunov(common) => {
            let cfg = prepare(&common)?;
            print(&experiment::cmd_lyapunov(&cfg, &common.out)?)
        }
        Command::Autocorr { common, tracers, stride } => {
            let cfg = prepare(&common)?;
            print(&experiment::cmd_autocorr(&cfg, &tracers, stride, &common.out)?)
        }
        Command::Pipeline(common) => {
            let cfg = prepare(&common)?;
            let metrics = experiment::run_pipeline(&cfg, &common.out)?;
            print(&serde_json::json!({
                "circulations": metrics.circulations.circulations,
                "circulation_errors": metrics.circulations.relative_errors,
                "tau": metrics.reconstruction.tau,
                "total_error": metrics.evaluation.total_error,
                "reset_fraction": metrics.evaluation.reset_fraction,
            }))
        }
        Command::ReferenceConfig => {
            print!("{}", ExperimentConfig::reference().to_toml_string()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let doc = serde_json::json!({ "error": e.category(), "message": e.to_string() });
            eprintln!("{doc}");
            ExitCode::FAILURE
        }
    }
}
