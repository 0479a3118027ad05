use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use holefill::harness::commands::{dry_run, run, Command};
use holefill::harness::config::ExperimentConfig;
use holefill::harness::exit_code;
use holefill::Result;

#[derive(Parser)]
#[command(name = "holefill", version, about = "Beamstop hole filling, conditioning and HIO experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Validate and print the resolved config without computing.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Recover the hole of one phantom and write the singular spectrum and panels.
    Recover,
    /// Condition-number table over the (N, m, k0) sweep.
    CondTable,
    /// Noise amplification histograms.
    NoiseHist,
    /// One HIO reconstruction.
    Hio,
    /// Paired HIO-alone and Fill+HIO runs over hole widths.
    FillHio,
    /// Partial-Fill+HIO against HIO-alone under noise.
    PartialFill,
    /// Exact against asymptotic recovery norm over m.
    SweepFig13,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Recover => Command::Recover,
            Cmd::CondTable => Command::CondTable,
            Cmd::NoiseHist => Command::NoiseHist,
            Cmd::Hio => Command::Hio,
            Cmd::FillHio => Command::FillHio,
            Cmd::PartialFill => Command::PartialFill,
            Cmd::SweepFig13 => Command::SweepFig13,
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<String> {
    let cfg = resolve(cli)?;
    let cmd = Command::from(cli.command);
    if cli.dry_run {
        return dry_run(cmd, &cfg);
    }
    let outcome = run(cmd, &cfg)?;
    Ok(serde_json::to_string_pretty(&outcome)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(text) => {
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
