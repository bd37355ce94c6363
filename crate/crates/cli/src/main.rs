use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use conchain_core::config::{ExperimentConfig, Format};
use conchain_core::experiment::{cmd_attack, cmd_compare, cmd_run, cmd_sweep, CommandOutput};

/// Deterministic simulator for contention-aware transaction ordering.
#[derive(Parser)]
#[command(name = "conchain", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One run per configured scheme and mix.
    Run(Common),
    /// Scheme comparison table.
    Compare(Common),
    /// Contention sweep over one knob.
    Sweep(Common),
    /// Defended and undefended arms of an attack scenario.
    Attack(Common),
}

#[derive(Args)]
struct Common {
    /// Config file; omitted means all defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format (overrides `output.format`).
    #[arg(long, value_parser = ["json", "csv"])]
    format: Option<String>,
    /// Seed for every random stream (overrides config).
    #[arg(long)]
    seed: Option<u64>,
    /// Also write per-run engine event logs.
    #[arg(long)]
    event_log: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let text = match &self.config {
            Some(path) => fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
            None => String::new(),
        };
        let mut cfg = ExperimentConfig::parse_with_process_env(&text)?;
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(dir) = &self.out {
            cfg.output.dir = dir.clone();
        }
        if let Some(f) = &self.format {
            cfg.output.format = if f == "csv" { Format::Csv } else { Format::Json };
        }
        if self.event_log {
            cfg.engine.event_log = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(cfg: &ExperimentConfig, out: &CommandOutput) -> Result<()> {
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for a in &out.artifacts {
        let path = dir.join(&a.name);
        fs::write(&path, &a.contents).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", out.summary);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| -> Result<()> {
        let (common, run): (&Common, fn(&ExperimentConfig) -> conchain_core::Result<CommandOutput>) = match &cli.command {
            Command::Run(c) => (c, cmd_run),
            Command::Compare(c) => (c, cmd_compare),
            Command::Sweep(c) => (c, cmd_sweep),
            Command::Attack(c) => (c, cmd_attack),
        };
        let cfg = common.load()?;
        let out = run(&cfg)?;
        write(&cfg, &out)
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
