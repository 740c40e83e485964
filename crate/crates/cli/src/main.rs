//! `fca`: synthesize scenes, separate mixtures and benchmark FCA against FastFCA-AS.

mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "fca", version = manifest::VERSION, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a reverberant mixture and its reference images
    Synth(Overrides),
    /// Separate a mixture (or a synthetic scene) into source images
    Separate(Overrides),
    /// Run both estimators on identical synthetic scenes and initializations
    Bench(Overrides),
    /// Print per-iteration inversion and multiplication counts
    ExpectedCounts {
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 3)]
        sources: usize,
        #[arg(long, default_value_t = 249)]
        frames: usize,
        #[arg(long, default_value_t = 512)]
        bins: usize,
        #[arg(long, default_value_t = 1)]
        inner_k: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(o) => commands::synth(&mut RunConfig::resolve(&o)?),
        Command::Separate(o) => commands::separate_cmd(&mut RunConfig::resolve(&o)?),
        Command::Bench(o) => commands::bench_cmd(&RunConfig::resolve(&o)?),
        Command::ExpectedCounts {
            order,
            sources,
            frames,
            bins,
            inner_k,
        } => {
            anyhow::ensure!(
                order > 0 && sources > 0 && frames > 0 && bins > 0 && inner_k > 0,
                "all dimensions must be positive"
            );
            commands::expected_counts_cmd(order, sources, frames, bins, inner_k);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
