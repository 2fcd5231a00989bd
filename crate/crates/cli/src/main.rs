//! `blochlap`: band structures, Fermi curves, resolvent kernels and checks
//! for periodic Schroedinger operators.

mod cache;
mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Params, RunConfig};
use output::OutDir;

#[derive(Debug, Parser)]
#[command(
    name = "blochlap",
    version,
    about = "Periodic Schroedinger operator toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Band functions and gap report (d = 1 transfer matrices, d = 2 plane waves).
    Bands(Params),
    /// Fermi curves F_τ with curvature report and SVG.
    Fermi(Params),
    /// Resolvent kernel scan and decay fit.
    Kernel(Params),
    /// Assumption and exponent-region reports.
    Verify(Params),
    /// Farfield leading term against the resonant kernel.
    Farfield(Params),
    /// Fermi-curve geometry and mountain-pass sign.
    NlhGeometry(Params),
    /// Rerun from a manifest.json.
    Replay {
        manifest: PathBuf,
        /// Write to this directory instead of the recorded one.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum Failure {
    /// Bad input: exit code 2.
    Validation(String),
    /// Anything else: exit code 1.
    Internal(anyhow::Error),
}

impl From<bloch_lap::Error> for Failure {
    fn from(e: bloch_lap::Error) -> Self {
        match e {
            bloch_lap::Error::InvalidInput(_) | bloch_lap::Error::FrequencyOutsideWindow { .. } => {
                Failure::Validation(e.to_string())
            }
            other => Failure::Internal(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Internal(e)
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("BLOCHLAP_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::Validation(format!(
            "BLOCHLAP_THREADS must be a positive integer, got '{v}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Internal(e.into()))
}

fn execute(c: RunConfig) -> Result<(), Failure> {
    let mut out = OutDir::new(&c.output)?;
    let cmd = c.command.clone().unwrap_or_default();
    let result = match cmd.as_str() {
        "bands" => commands::bands(&c, &mut out),
        "fermi" => commands::fermi(&c, &mut out),
        "kernel" => commands::kernel(&c, &mut out),
        "verify" => commands::verify(&c, &mut out),
        "farfield" => commands::farfield(&c, &mut out),
        "nlh-geometry" => commands::nlh_geometry(&c, &mut out),
        other => Err(Failure::Validation(format!("unknown command '{other}'"))),
    };
    let status = match &result {
        Ok(()) => "ok",
        Err(Failure::Validation(_)) => "invalid-input",
        Err(Failure::Internal(_)) => "error",
    };
    out.finish(&c, status)?;
    eprintln!("wrote {}", out_path(&c).display());
    result
}

fn out_path(c: &RunConfig) -> PathBuf {
    c.output.join("manifest.json")
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    let (name, params) = match cli.command {
        Command::Bands(p) => ("bands", p),
        Command::Fermi(p) => ("fermi", p),
        Command::Kernel(p) => ("kernel", p),
        Command::Verify(p) => ("verify", p),
        Command::Farfield(p) => ("farfield", p),
        Command::NlhGeometry(p) => ("nlh-geometry", p),
        Command::Replay { manifest, output } => {
            let text = std::fs::read_to_string(&manifest)
                .map_err(|e| Failure::Validation(format!("{}: {e}", manifest.display())))?;
            let v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Failure::Validation(format!("{}: {e}", manifest.display())))?;
            let cfg = v
                .get("config")
                .cloned()
                .ok_or_else(|| Failure::Validation("manifest has no config".into()))?;
            let mut c: RunConfig = serde_json::from_value(cfg)
                .map_err(|e| Failure::Validation(format!("{}: {e}", manifest.display())))?;
            if let Some(o) = output {
                c.output = o;
            }
            c.validate()?;
            return execute(c);
        }
    };
    execute(config::resolve(name, &params)?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
