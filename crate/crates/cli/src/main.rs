#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod data;
mod overlay;

use clap::{Parser, Subcommand};

/// Encode, decode and evaluate butterfly field representations.
#[derive(Debug, Parser)]
#[command(name = "butterfly", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Annotations to one fields file per image
    Encode(commands::EncodeCmd),
    /// Fields files to a detections file, with optional overlay images
    Decode(commands::DecodeCmd),
    /// Encode then decode annotations and evaluate against themselves
    Roundtrip(commands::RoundtripCmd),
    /// Score a detections file against ground truth
    Eval(commands::EvalCmd),
    /// Generate synthetic scenes and run the noise ablation
    Synth(commands::SynthCmd),
    /// Time the decoder on a fields file
    Bench(commands::BenchCmd),
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Encode(c) => c.run(),
        Command::Decode(c) => c.run(),
        Command::Roundtrip(c) => c.run(),
        Command::Eval(c) => c.run(),
        Command::Synth(c) => c.run(),
        Command::Bench(c) => c.run(),
    }
}
