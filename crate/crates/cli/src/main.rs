mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "docbinformer",
    version,
    about = "Two-level vision transformer for document image binarization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that reads a run configuration.
#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// Configuration file of `[section]` headers and `key = value` lines.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Dataset root laid out as `<root>/<year>/{degraded,gt}/<id>.<ext>`.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Held-out year.
    #[arg(long)]
    pub year: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop the residual connection around attention.
    #[arg(long)]
    pub no_attn_residual: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Otsu,
    Sauvola,
}

#[derive(Args, Clone, Copy, Debug)]
pub struct SauvolaArgs {
    /// Sauvola window side, odd.
    #[arg(long, default_value_t = 25)]
    pub window: usize,
    #[arg(long, default_value_t = 0.2)]
    pub k: f64,
    /// Dynamic range of the standard deviation on a [0, 1] scale.
    #[arg(long, default_value_t = 0.5)]
    pub r: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Mild,
    Uneven,
}

#[derive(Subcommand)]
enum Command {
    /// Train on every year except the held-out one.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        epochs: Option<u64>,
        #[arg(long)]
        max_steps: Option<u64>,
        /// Where checkpoints and the loss log are written.
        #[arg(long, value_name = "DIR")]
        output_dir: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
    },
    /// Binarize one image with a trained model.
    Binarize {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Output image; PGM if the extension is `.pgm`, PNG otherwise.
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
        /// Tiles per forward pass.
        #[arg(long, default_value_t = 4)]
        batch: usize,
    },
    /// Score a model or a baseline on the held-out year.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(
            long,
            value_name = "FILE",
            conflicts_with = "baseline",
            required_unless_present = "baseline"
        )]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<Method>,
        #[command(flatten)]
        sauvola: SauvolaArgs,
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
        /// Write per-image and mean scores as CSV.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
        /// Save every binarized image here.
        #[arg(long, value_name = "DIR")]
        save_dir: Option<PathBuf>,
    },
    /// Train and score each row of the architecture ablation grid.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated row ids, 1 to 5.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4, 5])]
        rows: Vec<usize>,
        /// Epoch budget per row.
        #[arg(long, default_value_t = 1)]
        epochs: u64,
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
    },
    /// Binarize one image with Otsu or Sauvola.
    Baseline {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        #[command(flatten)]
        sauvola: SauvolaArgs,
    },
    /// Write a synthetic degraded/ground-truth dataset.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [2016u32, 2017])]
        years: Vec<u32>,
        #[arg(long, default_value_t = 3)]
        per_year: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, value_enum, default_value_t = SynthKind::Uneven)]
        degradation: SynthKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    commands::init_threads()?;
    match command {
        Command::Train {
            run,
            epochs,
            max_steps,
            output_dir,
            resume,
        } => commands::train(&run, epochs, max_steps, output_dir, resume),
        Command::Binarize {
            checkpoint,
            input,
            output,
            threshold,
            batch,
        } => commands::binarize(&checkpoint, &input, &output, threshold, batch),
        Command::Eval {
            run,
            checkpoint,
            baseline,
            sauvola,
            threshold,
            csv,
            save_dir,
        } => commands::eval(
            &run, checkpoint, baseline, sauvola, threshold, csv, save_dir,
        ),
        Command::Ablate {
            run,
            rows,
            epochs,
            max_steps,
            csv,
        } => commands::ablate(&run, &rows, epochs, max_steps, csv),
        Command::Baseline {
            method,
            input,
            output,
            sauvola,
        } => commands::baseline(method, &input, &output, sauvola),
        Command::Synth {
            out,
            years,
            per_year,
            size,
            degradation,
            seed,
        } => commands::synth(&out, &years, per_year, size, degradation, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
