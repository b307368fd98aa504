//! `mfg`: solve the tracking mean-field game, sweep x(r), check consistency of
//! the equilibrium and estimate n-player Nash gaps. Everything lands as CSV.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_list, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    NonConvergence(String),
    Verification(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::NonConvergence(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::NonConvergence(m) => write!(f, "no convergence: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<mfg_tracking::Error> for CliError {
    fn from(e: mfg_tracking::Error) -> Self {
        use mfg_tracking::Error as E;
        match e {
            E::NonConvergence { .. } | E::Bracket(_) | E::Quadrature { .. } => CliError::NonConvergence(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "mfg", version = commands::BUILD, about = "Mean-field benchmark-tracking equilibrium solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute f* and write f_star.csv, f_star.json and (underperforming) trace.csv.
    Solve(Common),
    /// Sweep r ↦ x(r) and write x_of_r.csv.
    Curve(Common),
    /// Check μE[θ*] = f* by simulation and write consistency.csv.
    Verify(Common),
    /// Estimate ε-Nash gaps for finite populations and write gap.csv.
    Nplayer(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Time steps on [0, T].
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initial auxiliary state, overrides x0/v0 from the config.
    #[arg(long)]
    x0: Option<f64>,
    #[arg(long)]
    z0: Option<f64>,
    /// Comma-separated dual levels for `curve`.
    #[arg(long)]
    r_list: Option<String>,
    /// Comma-separated population sizes for `nplayer`.
    #[arg(long)]
    n_list: Option<String>,
    /// Replications per population size for `nplayer`.
    #[arg(long)]
    replications: Option<usize>,
    /// Heterogeneity spread for `nplayer`.
    #[arg(long)]
    delta: Option<f64>,
    /// Scale the reference drift in `verify` (fault injection).
    #[arg(long)]
    perturb: Option<f64>,
}

impl Common {
    fn resolve(self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.paths {
            c.paths = v;
        }
        if let Some(v) = self.steps {
            c.steps = v;
        }
        if let Some(v) = self.out {
            c.out = v;
        }
        if let Some(v) = self.x0 {
            c.x0 = Some(v);
            c.v0 = None;
        }
        if let Some(v) = self.z0 {
            c.z0 = v;
        }
        if let Some(v) = &self.r_list {
            c.r_list = parse_list(v).map_err(CliError::Validation)?;
        }
        if let Some(v) = &self.n_list {
            c.n_list = parse_list(v).map_err(CliError::Validation)?;
        }
        if let Some(v) = self.replications {
            c.nplayer_paths = v;
        }
        if let Some(v) = self.delta {
            c.delta = v;
        }
        if let Some(v) = self.perturb {
            c.perturb = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Solve(a) => commands::solve(&a.resolve()?),
        Command::Curve(a) => commands::curve(&a.resolve()?),
        Command::Verify(a) => commands::verify(&a.resolve()?),
        Command::Nplayer(a) => commands::nplayer(&a.resolve()?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mfg: {e}");
            ExitCode::from(e.code())
        }
    }
}
