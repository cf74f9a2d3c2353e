use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod failure;

use failure::Failure;

/// Beat and downbeat tracking from the command line.
///
/// Log verbosity follows the `RUST_LOG` environment variable (default `info`).
#[derive(Debug, Parser)]
#[command(name = "beatrack", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic click-track dataset with a manifest.
    Synth(commands::SynthArgs),
    /// Train a model on the training split of a manifest.
    Train(commands::TrainArgs),
    /// Write beat and downbeat estimates for audio files.
    Predict(commands::PredictArgs),
    /// Score estimates against reference annotations.
    Eval(commands::EvalArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Train(args) => commands::train(args),
        Command::Predict(args) => commands::predict(args),
        Command::Eval(args) => commands::eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: Failure) -> ExitCode {
    eprintln!("error: {e}");
    e.exit_code()
}

