use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use canvolt::config::load_config;
use canvolt::engine::{run_scenario, run_sweep, write_sweep_csv, EngineError};
use canvolt::params::{calibrate, parse_targets, ModelParams, ParamsError};

/// Deterministic CAN bus voltage-attack simulator.
#[derive(Debug, Parser)]
#[command(name = "canvolt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its trace and summary.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        summary: PathBuf,
        /// Compare the summary against the scenario's [expect] section.
        #[arg(long)]
        check: bool,
    },
    /// Run the scenario's [sweep] grid and write one row per value.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the parameter calibration for `name[=value],...` or `all`.
    Calibrate {
        #[arg(long)]
        targets: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a scenario without simulating it.
    Validate { config: PathBuf },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(String),
    Runtime(String),
    Check(Vec<String>),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Check(_) => 3,
        }
    }
}

fn config_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn engine_err(e: EngineError) -> Failure {
    match e {
        EngineError::Config { .. } => Failure::Config(e.to_string()),
        other => Failure::Runtime(other.to_string()),
    }
}

fn params_err(e: ParamsError) -> Failure {
    Failure::Config(format!("parameters: {e}"))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            config,
            trace,
            summary,
            check,
        } => {
            let cfg = load_config(&config).map_err(|e| config_err(&config, e))?;
            let params = ModelParams::from_env().map_err(params_err)?;
            let (tr, sum) = run_scenario(&cfg, &params).map_err(engine_err)?;
            let mut w = create(&trace)?;
            tr.write_csv(&mut w)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", trace.display())))?;
            w.flush().map_err(io_err(&trace))?;
            let mut w = create(&summary)?;
            serde_json::to_writer_pretty(&mut w, &sum)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", summary.display())))?;
            writeln!(w).and_then(|_| w.flush()).map_err(io_err(&summary))?;
            if check {
                let expect = cfg
                    .expect
                    .as_ref()
                    .ok_or_else(|| config_err(&config, "--check needs an [expect] section"))?;
                let failures = sum.check(expect);
                if !failures.is_empty() {
                    return Err(Failure::Check(failures));
                }
                println!("check passed");
            }
            Ok(())
        }
        Command::Sweep { config, out } => {
            let cfg = load_config(&config).map_err(|e| config_err(&config, e))?;
            if cfg.sweep.is_none() {
                return Err(config_err(&config, "sweep: section is required"));
            }
            let params = ModelParams::from_env().map_err(params_err)?;
            let rows = run_sweep(&cfg, &params).map_err(engine_err)?;
            let mut w = create(&out)?;
            write_sweep_csv(&rows, &mut w).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
            w.flush().map_err(io_err(&out))
        }
        Command::Calibrate { targets, out } => {
            let targets = parse_targets(&targets).map_err(params_err)?;
            if targets.is_empty() {
                return Err(Failure::Config("targets: list is empty".into()));
            }
            let base = ModelParams::from_env().map_err(params_err)?;
            let p = calibrate(&targets, &base).map_err(params_err)?;
            std::fs::write(&out, p.to_toml()).map_err(io_err(&out))
        }
        Command::Validate { config } => {
            let cfg = load_config(&config).map_err(|e| config_err(&config, e))?;
            println!(
                "{}: ok ({} ECUs, {} s{}{})",
                config.display(),
                cfg.ecus.len(),
                cfg.duration,
                cfg.attack.as_ref().map(|a| format!(", attack {}", a.kind.name())).unwrap_or_default(),
                cfg.irs.as_ref().map(|i| format!(", irs {}", i.kind.name())).unwrap_or_default(),
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Runtime(m) => eprintln!("error: {m}"),
                Failure::Check(list) => {
                    for m in list {
                        eprintln!("check failed: {m}");
                    }
                }
            }
            ExitCode::from(f.code())
        }
    }
}
