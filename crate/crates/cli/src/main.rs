//! `dialcart` command-line entry point.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dialcart", version, about = "Dialogue-act cartography and active-learning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every offline subcommand.
#[derive(Args, Clone)]
pub struct Common {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory. Nothing is written outside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and write a normalized copy plus a summary.
    Ingest(commands::IngestArgs),
    /// Session-level train/test split.
    Split(commands::SplitArgs),
    /// Train a classifier and save a checkpoint.
    Train(commands::TrainArgs),
    /// Data map of a labeled corpus from its training dynamics.
    Cartography(commands::CartographyArgs),
    /// Simulated active learning against gold labels.
    Simulate(commands::SimulateArgs),
    /// Rebuild tables and plots from a simulation's raw results.
    Report(commands::ReportArgs),
    /// Run the annotation service.
    Serve(commands::ServeArgs),
    /// Cohen's kappa between two annotations of the same corpus.
    Kappa(commands::KappaArgs),
    /// Generate a synthetic corpus.
    Synth(commands::SynthArgs),
    /// Reproduce the service's next batch from a project export.
    Select(commands::SelectArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Split(_) => "split",
            Command::Train(_) => "train",
            Command::Cartography(_) => "cartography",
            Command::Simulate(_) => "simulate",
            Command::Report(_) => "report",
            Command::Serve(_) => "serve",
            Command::Kappa(_) => "kappa",
            Command::Synth(_) => "synth",
            Command::Select(_) => "select",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Cartography(a) => commands::cartography(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Report(a) => commands::report(a),
        Command::Serve(a) => commands::serve(a),
        Command::Kappa(a) => commands::kappa(a),
        Command::Synth(a) => commands::synth(a),
        Command::Select(a) => commands::select(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({
                "level": "error",
                "command": name,
                "message": e.to_string(),
                "causes": e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
            });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
