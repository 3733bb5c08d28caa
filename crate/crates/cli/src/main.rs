use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spsgf_cli::config::Severity;
use spsgf_cli::error::CliError;
use spsgf_cli::report::{format_table, report};
use spsgf_cli::run::{run, sweep, truncation};
use spsgf_cli::{CheckKind, Overrides, Preset, SimConfig};
use spsgf_core::dynamics::Algorithm;

/// Simulate saddle-point and safe-gradient flows for network optimization.
#[derive(Parser)]
#[command(name = "spsgf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its CSVs and manifest.
    Run {
        #[command(flatten)]
        base: BaseArgs,
        #[arg(long)]
        algorithm: Option<Algorithm>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Run a grid of (algorithm, tau) pairs, one directory per run.
    Sweep {
        #[command(flatten)]
        base: BaseArgs,
        /// Algorithms to run (comma separated); defaults to the configured one.
        #[arg(long, value_delimiter = ',')]
        algorithm: Vec<Algorithm>,
        /// Tau grid (comma separated); defaults to 0.1,1,10.
        #[arg(long, value_delimiter = ',')]
        tau: Vec<f64>,
    },
    /// Run checks on the artifacts of a finished run.
    Check {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        /// Checks to run (comma separated): anytime, convergence, equilibrium, sensitivity, licq.
        #[arg(long, value_delimiter = ',')]
        checks: Vec<CheckKind>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Report problems with a configuration without running it.
    Validate {
        #[command(flatten)]
        base: BaseArgs,
        #[arg(long)]
        algorithm: Option<Algorithm>,
        #[arg(long)]
        tau: Option<f64>,
    },
}

#[derive(Args)]
struct BaseArgs {
    /// TOML configuration, or a manifest.json to rerun.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl BaseArgs {
    fn overrides(&self, algorithm: Option<Algorithm>, tau: Option<f64>) -> Overrides {
        Overrides {
            preset: self.preset,
            algorithm,
            tau,
            epsilon: self.epsilon,
            alpha: self.alpha,
            dt: self.dt,
            horizon: self.horizon,
            out: self.out.clone(),
            seed: self.seed,
        }
    }

    fn load(&self, algorithm: Option<Algorithm>, tau: Option<f64>) -> Result<SimConfig, CliError> {
        if self.config.is_none() && self.preset.is_none() {
            return Err(CliError::Config(
                "either --config or --preset is required".into(),
            ));
        }
        SimConfig::load(self.config.as_deref(), &self.overrides(algorithm, tau))
    }
}

fn print_warnings(cfg: &SimConfig) {
    for v in cfg.violations() {
        if v.severity == Severity::Warning {
            eprintln!("{v}");
        }
    }
}

fn execute(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Run {
            base,
            algorithm,
            tau,
        } => {
            let cfg = base.load(algorithm, tau)?;
            print_warnings(&cfg);
            let manifest = run(&cfg)?;
            println!(
                "{}: {} rows in {:.2} s -> {}",
                cfg.algorithm,
                manifest.rows,
                manifest.wall_time_seconds,
                cfg.output.display()
            );
            if let Some(why) = truncation(&manifest) {
                return Err(CliError::Truncated(why));
            }
            if !cfg.checks.is_empty() {
                let records = report(&cfg.output, &cfg.checks, None)?;
                println!("{}", format_table(&records));
                if records.iter().any(|r| !r.passed) {
                    return Ok(ExitCode::FAILURE);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            base,
            algorithm,
            tau,
        } => {
            let mut cfg = base.load(None, None)?;
            let mut spec = cfg.sweep.take().unwrap_or_default();
            if !algorithm.is_empty() {
                spec.algorithms = algorithm;
            }
            if !tau.is_empty() {
                spec.tau = tau;
            }
            cfg.sweep = Some(spec);
            print_warnings(&cfg);
            let entries = sweep(&cfg)?;
            let mut ok = true;
            for e in &entries {
                println!(
                    "{:<16} tau={:<6} {:<10} {}",
                    e.algorithm.name(),
                    e.tau,
                    e.status,
                    e.dir.display()
                );
                ok &= e.status == "completed";
            }
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
        Command::Check { out, checks, seed } => {
            let records = report(&out, &checks, seed)?;
            println!("{}", format_table(&records));
            Ok(if records.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Validate {
            base,
            algorithm,
            tau,
        } => {
            let cfg = base.load(algorithm, tau)?;
            let violations = cfg.violations();
            for v in &violations {
                println!("{}: {v}", v.field);
            }
            if violations.iter().any(|v| v.severity == Severity::Error) {
                Ok(ExitCode::from(2))
            } else {
                if violations.is_empty() {
                    println!("ok");
                }
                Ok(ExitCode::SUCCESS)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
