//! `listenhead`: synthesize data, train, infer, evaluate, check gradients
//! and plot trajectories.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 failed check.

mod commands;
mod plot;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EvalArgs, GradcheckArgs, InferArgs, PlotArgs, SynthArgs, TrainArgs};

#[derive(Parser, Debug)]
#[command(name = "listenhead", version, about = "Listener head motion generation in 3DMM coefficient space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic speaker-listener dataset with a manifest.
    Synth(SynthArgs),
    /// Train a model on a dataset manifest.
    Train(TrainArgs),
    /// Predict listener coefficients from a checkpoint.
    Infer(InferArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Draw predicted and ground-truth trajectories to a PNG.
    Plot(PlotArgs),
}

/// Why a command did not succeed.
pub enum Failure {
    Runtime(anyhow::Error),
    /// The command ran but its check did not pass.
    Check(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Plot(a) => commands::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
    }
}
