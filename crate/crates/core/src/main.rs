use std::path::PathBuf;
use std::process::ExitCode;

use causal_hmm::cli::{run, Command, Options};
use causal_hmm::experiment::ExperimentConfig;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "causal-hmm",
    version,
    about = "Causal hidden Markov model experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample the train/val/test dataset from the simulator.
    Generate(Common),
    /// Train the configured model for every seed.
    Train(Common),
    /// ACC/AUC over the window grid on every split.
    Eval(Common),
    /// Linear probes on the s+v and z posterior means.
    Probe(Common),
    /// Held-out R² between learned and true latent blocks.
    Align {
        #[command(flatten)]
        common: Common,
        /// Align the true latents with themselves instead of a model.
        #[arg(long)]
        truth: bool,
    },
    /// Per-block saliency heatmaps as PGM images.
    Saliency {
        #[command(flatten)]
        common: Common,
        /// Comma-separated sequence indices, replacing eval.saliency.sequences.
        #[arg(long, value_delimiter = ',')]
        sequences: Option<Vec<usize>>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Override a dotted key, e.g. --set train.epochs=50.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Only this seed of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Use this checkpoint instead of the run directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common, mut opts) = match cli.command {
        Cmd::Generate(c) => (Command::Generate, c, Options::default()),
        Cmd::Train(c) => (Command::Train, c, Options::default()),
        Cmd::Eval(c) => (Command::Eval, c, Options::default()),
        Cmd::Probe(c) => (Command::Probe, c, Options::default()),
        Cmd::Align { common, truth } => (
            Command::Align,
            common,
            Options {
                truth,
                ..Options::default()
            },
        ),
        Cmd::Saliency { common, sequences } => (
            Command::Saliency,
            common,
            Options {
                sequences,
                ..Options::default()
            },
        ),
    };
    opts.seed = common.seed;
    opts.checkpoint = common.checkpoint;
    let result = ExperimentConfig::load(&common.config, &common.set)
        .and_then(|cfg| run(cmd, &cfg, &opts, &mut std::io::stdout().lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
