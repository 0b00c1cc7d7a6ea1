use clap::{Parser, Subcommand};

use cohesion_cli::commands::{
    cmd_evaluate, cmd_export, cmd_grid, cmd_prepare, cmd_synth, cmd_train, EvaluateArgs,
    ExportArgs, GridArgs, PrepareArgs, SynthArgs, TrainArgs,
};

/// Multimodal graph recommender: prepare data, train, evaluate, sweep, export.
#[derive(Parser)]
#[command(name = "cohesion", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Turn raw interactions + feature matrices into a prepared dataset.
    Prepare(PrepareArgs),
    /// Generate a planted-cluster synthetic dataset.
    Synth(SynthArgs),
    /// Fit the model and write checkpoint, log, metrics, and manifest.
    Train(TrainArgs),
    /// Score a checkpoint on the validation or test split.
    Evaluate(EvaluateArgs),
    /// Sweep lr x reg_lambda x n_layers and rank the cells.
    Grid(GridArgs),
    /// Dump final and per-modality embeddings as CMF1 matrices.
    Export(ExportArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Ok(v) = std::env::var("COHESION_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not cap the thread pool: {e}");
                }
            }
            _ => log::warn!("ignoring COHESION_THREADS='{v}' (want a positive integer)"),
        }
    }
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Prepare(a) => cmd_prepare(a),
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Grid(a) => cmd_grid(a),
        Cmd::Export(a) => cmd_export(a),
    };
    if let Err(e) = result {
        log::error!("{e:#}");
        std::process::exit(1);
    }
}
