//! `vigtext`: synthetic data, graph building, training, evaluation and
//! robustness runs from the command line.

mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "vigtext", version, about = "Deepfake image detection over patch and explanation graphs")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for graph building; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderChoice {
    Toy,
    Fixture,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AttackChoice {
    Fgsm,
    Pgd,
    Generator,
}

/// Where the data comes from and how graphs are built.
#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Override the manifest's embedding provider.
    #[arg(long, value_enum)]
    provider: Option<ProviderChoice>,
    /// Model server base URL for `--provider remote`.
    #[arg(long, env = "VIGTEXT_ENDPOINT")]
    endpoint: Option<String>,
    /// Image embedding fixture for `--provider fixture`.
    #[arg(long)]
    fixture_image: Option<PathBuf>,
    /// Token embedding fixture for `--provider fixture`.
    #[arg(long)]
    fixture_text: Option<PathBuf>,
    /// Override the manifest's grid size.
    #[arg(long)]
    grid: Option<usize>,
    /// Graph cache directory (default `<out>/cache`).
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    no_cache: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic real/fake dataset with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        count: usize,
        #[arg(long, default_value_t = 4)]
        grid: usize,
        /// Checkerboard amplitude in 0..255 pixel units.
        #[arg(long, default_value_t = 24.0)]
        strength: f64,
        /// Image side in pixels.
        #[arg(long, default_value_t = 60)]
        size: usize,
    },
    /// Draw the labelled patch grid over an image.
    Overlay {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 4)]
        grid: usize,
        /// Output PPM path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build one graph file per manifest entry.
    BuildGraphs {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the classifier on the train split, selecting on val.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        epochs: usize,
        /// Base learning rate; halved every ten epochs.
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
    },
    /// Evaluate a checkpoint on one split and on every `extra:` split.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Accuracy an `extra:` split must reach.
        #[arg(long, default_value_t = 0.9)]
        tau_g: f64,
    },
    /// Evaluate a checkpoint under perturbations and attacks.
    Attack {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<AttackChoice>,
        /// L∞ budget in [0, 1] pixel units for `--kind fgsm|pgd`.
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
        /// Extra suite entries, e.g. `blur:2:1.0`, `resize:30x30`, `pgd:0.01`.
        #[arg(long)]
        spec: Vec<String>,
        /// Run the default perturbation and attack suite.
        #[arg(long)]
        suite: bool,
        /// Accuracy every row must reach.
        #[arg(long, default_value_t = 0.9)]
        tau_r: f64,
        #[arg(long, default_value = "test")]
        split: String,
        /// Optimizer steps for `--kind generator`.
        #[arg(long, default_value_t = 30)]
        steps: usize,
    },
    /// Render a report JSON file as a table.
    Report {
        #[arg(long)]
        input: PathBuf,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
