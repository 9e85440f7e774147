//! Command-line front end: parse a run configuration, apply overrides,
//! dispatch to the requested workflow, and report output files.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for solver errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pfsim_core::config::RunConfig;
use pfsim_core::workflows::{
    cmd_decompose, cmd_evolve, cmd_fit, cmd_spectrum, cmd_steady, cmd_sweep_current, cmd_validate,
    CommandOutcome,
};
use pfsim_core::PfError;

#[derive(Parser)]
#[command(
    name = "pfsim",
    about = "Pseudo-fermion simulation of fermionic impurities coupled to continuum reservoirs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a configuration field, e.g. --set solver.rtol=1e-9 or
    /// --set construction.map=exact4. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Override output.dir.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override output.prefix.
    #[arg(long)]
    prefix: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Correlation tables: exact reference vs decomposition vs constructed bath.
    Decompose(CommonArgs),
    /// Fit the Matsubara envelope and report residuals.
    Fit(CommonArgs),
    /// Validate constructed baths against the exact correlation.
    Validate(CommonArgs),
    /// Propagate the augmented state and record system occupations.
    Evolve(CommonArgs),
    /// Solve the steady state; report occupations and lead currents.
    Steady(CommonArgs),
    /// Steady current versus chemical potential difference.
    SweepCurrent(CommonArgs),
    /// Impurity spectral function.
    Spectrum(CommonArgs),
}

fn apply_override(doc: &mut toml::Value, key: &str, raw: &str) -> Result<(), String> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let table = node
            .as_table_mut()
            .ok_or_else(|| format!("{} is not a table", parts[..i].join(".")))?;
        if last {
            // interpret the raw text as a TOML literal, else as a string
            let parsed = format!("v = {raw}")
                .parse::<toml::Value>()
                .ok()
                .and_then(|d| d.get("v").cloned())
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    Ok(())
}

fn load_config(args: &CommonArgs) -> Result<RunConfig, PfError> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut doc: toml::Value = text
        .parse()
        .map_err(|e| PfError::Config(format!("{}: {e}", args.config.display())))?;
    for entry in &args.overrides {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| PfError::Config(format!("override {entry:?} is not KEY=VALUE")))?;
        apply_override(&mut doc, key, value).map_err(PfError::Config)?;
    }
    if let Some(dir) = &args.out_dir {
        apply_override(&mut doc, "output.dir", &dir.display().to_string())
            .map_err(PfError::Config)?;
    }
    if let Some(prefix) = &args.prefix {
        apply_override(&mut doc, "output.prefix", prefix).map_err(PfError::Config)?;
    }
    RunConfig::from_toml_value(doc)
}

fn exit_code_for(err: &PfError) -> u8 {
    match err {
        PfError::Config(_)
        | PfError::InvalidParameter(_)
        | PfError::DegenerateGrid(_)
        | PfError::LayoutMismatch(_)
        | PfError::IndexOutOfRange { .. }
        | PfError::DimensionMismatch(_)
        | PfError::Io(_) => 2,
        PfError::PoleCollision { .. }
        | PfError::RegulatorTooSmall { .. }
        | PfError::QuadratureNonConvergence { .. }
        | PfError::StepSizeUnderflow { .. }
        | PfError::DegenerateNullSpace(_)
        | PfError::NoConvergence(_)
        | PfError::ParityViolation(_)
        | PfError::InsufficientTmax { .. } => 3,
    }
}

fn report(outcome: &CommandOutcome) {
    for file in &outcome.files {
        println!("wrote {}", file.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run): (
        &CommonArgs,
        fn(&RunConfig) -> Result<CommandOutcome, PfError>,
    ) = match &cli.command {
        Command::Decompose(a) => (a, cmd_decompose),
        Command::Fit(a) => (a, cmd_fit),
        Command::Validate(a) => (a, cmd_validate),
        Command::Evolve(a) => (a, cmd_evolve),
        Command::Steady(a) => (a, cmd_steady),
        Command::SweepCurrent(a) => (a, cmd_sweep_current),
        Command::Spectrum(a) => (a, cmd_spectrum),
    };
    let config = match load_config(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&config) {
        Ok(outcome) => {
            report(&outcome);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
