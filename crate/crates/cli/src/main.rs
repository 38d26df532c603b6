//! Command-line entry point. Exit codes: 0 on success, 1 on invalid input
//! (flags, configuration, malformed files), 2 on I/O failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use tripletloc::commands::{evaluate, gen_synth, perturb, report, train};
use tripletloc::config::{load_sections, Sections};
use tripletloc::error::Result;

/// Two-stage visual room and position localization: generate synthetic
/// datasets, train coarse/fine encoders with triplet losses, perturb images,
/// evaluate retrieval, and tabulate results.
#[derive(Parser)]
#[command(name = "tripletloc", version)]
struct Cli {
    /// Configuration file ([section] key = value); flags override it,
    /// it overrides built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Generate a seeded synthetic multi-room dataset.
    GenSynth(gen_synth::GenSynthArgs),
    /// Train the coarse or fine encoder stage.
    Train(train::TrainArgs),
    /// Localize a query split against a map split and write metrics.
    Evaluate(evaluate::EvaluateArgs),
    /// Apply a perturbation to a directory of PGM images.
    Perturb(perturb::PerturbArgs),
    /// Aggregate evaluation runs into one comparison table.
    Report(report::ReportArgs),
}

fn dispatch(cli: &Cli) -> Result<()> {
    let config: Option<Sections> = match &cli.config {
        Some(path) => Some(load_sections(path, false)?),
        None => None,
    };
    let cfg = config.as_ref();
    match &cli.command {
        Command::GenSynth(args) => gen_synth::run(args, cfg),
        Command::Train(args) => train::run(args, cfg),
        Command::Evaluate(args) => evaluate::run(args, cfg),
        Command::Perturb(args) => perturb::run(args, cfg),
        Command::Report(args) => report::run(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not failures; everything else is
            // invalid input.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
