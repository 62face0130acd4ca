//! `rrdps`: key rates, rate landscapes, decoy bounds and self-checks for
//! round-robin differential-phase-shift key distribution.
//!
//! With no arguments it sweeps the reference fiber link from 0 to 160 km for
//! the weak-coherent and heralded sources, without decoys and with infinite
//! decoys, and writes the optimized rates as CSV to stdout.

mod checks;
mod config;
mod run;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{RunConfig, SourceName};
use rrdps::DecoyTier;

#[derive(Debug, Parser)]
#[command(name = "rrdps", version, about = "Secret-key rates for round-robin DPS key distribution")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// JSON run configuration; omitted fields take their defaults.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Output file (defaults to `output.path`, then stdout).
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,

    /// Seed for the Monte Carlo checks.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Decoy tiers to evaluate; repeat or separate with commas.
    #[arg(long, global = true, value_delimiter = ',')]
    tier: Vec<DecoyTier>,

    /// Sources to evaluate; repeat or separate with commas.
    #[arg(long, global = true, value_delimiter = ',', value_enum)]
    source: Vec<SourceName>,

    /// Pulses per packet.
    #[arg(short = 'L', long, global = true)]
    packet_length: Option<u32>,

    /// Worker threads (all cores by default).
    #[arg(long, global = true, env = "RRDPS_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimized key rate at every sweep point (the default).
    Rate,
    /// Key rate over the intensity/threshold grid at one transmittance.
    Landscape {
        /// Overall transmittance (defaults to `channel.eta`).
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Decoy-state yield and error bounds.
    Bounds {
        /// CSV of `intensity_per_pulse,gain,qber` rows (signal plus decoys);
        /// the tier follows from the row count.
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// Runs the model self-checks and writes a JSON report.
    Validate,
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.validate.seed = seed;
        }
        if !self.tier.is_empty() {
            cfg.protocol.tiers = self.tier.clone();
        }
        if !self.source.is_empty() {
            cfg.source.kinds = self.source.clone();
        }
        if let Some(l) = self.packet_length {
            cfg.protocol.packet_length = l;
        }
        if let Some(Command::Landscape { eta: Some(eta) }) = &self.command {
            cfg.channel.eta = Some(*eta);
            cfg.sweep = None;
        }
        if self.out.is_some() {
            cfg.output.path = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Runs the command; `Ok(false)` means a self-check failed.
fn execute(cli: &Cli) -> Result<bool> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring worker threads")?;
    }
    let cfg = cli.run_config()?;
    let sink = table::Sink::new(cfg.output.path.clone());
    match cli.command.as_ref().unwrap_or(&Command::Rate) {
        Command::Rate => {
            let (table, ranges) = run::rate(&cfg)?;
            sink.write(&table.render(cfg.output.precision))?;
            for (source, tier, range) in ranges {
                match range {
                    Some(d) => eprintln!("{source} {tier}: key up to {d:.1} km"),
                    None => eprintln!("{source} {tier}: no key"),
                }
            }
            Ok(true)
        }
        Command::Landscape { .. } => {
            if cfg.channel.eta.is_none() {
                anyhow::bail!("landscape needs a transmittance: pass --eta or set channel.eta");
            }
            sink.write(&run::landscape(&cfg)?.render(cfg.output.precision))?;
            Ok(true)
        }
        Command::Bounds { observations } => {
            let table = match observations {
                Some(path) => run::bounds_from_file(&cfg, path)?,
                None => run::bounds_simulated(&cfg)?,
            };
            sink.write(&table.render(cfg.output.precision))?;
            Ok(true)
        }
        Command::Validate => {
            let report = checks::run(&cfg)?;
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            sink.write(&text)?;
            Ok(report.pass)
        }
    }
}
