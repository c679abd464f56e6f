use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod files;

use qudit_graybox::Error;

#[derive(Parser)]
#[command(name = "qudit-graybox", version, about = "Graybox noise modelling and pulse control for qudits")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true, env = "QUDIT_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// A system given either as a TOML file or a bundled preset name.
#[derive(Args, Clone, Debug)]
#[group(required = true, multiple = false)]
pub struct SystemSource {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a Monte-Carlo dataset of random pulses.
    GenDataset {
        #[command(flatten)]
        system: SystemSource,
        /// JSON-lines output; the manifest goes next to it as `.manifest.json`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1024)]
        examples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the noise realizations in the binary dump format.
        #[arg(long)]
        noise_dump: Option<PathBuf>,
    },
    /// Fit a graybox model to a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = qudit_graybox::graybox::DEFAULT_HIDDEN)]
        hidden: usize,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        /// Loss curves CSV (default: next to the model as `.curves.csv`).
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Optimize a pulse for a target gate against a trained model.
    Optimize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gate: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "lab")]
        frame: String,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        #[arg(long, default_value_t = 300)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Realizations for the noisy fidelity evaluations (default: the
        /// model configuration's count).
        #[arg(long)]
        eval_realisations: Option<usize>,
    },
    /// Sweep J and N along eps * theta for a set of pulses.
    Landscape {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated sources: `random:N[:SEED]`, `result:PATH`,
        /// `dataset:PATH:I[-J]`.
        #[arg(long)]
        pulses: String,
        #[arg(long)]
        gate: String,
        #[arg(long, default_value = "-1:1:41", allow_hyphen_values = true)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "lab")]
        frame: String,
        /// `samples` or `expansion`.
        #[arg(long, default_value = "samples")]
        source: String,
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, default_value_t = 200)]
        fidelity_realisations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Polynomial expansion of every noise operator around a dataset pulse.
    Expand {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pulse_id: usize,
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long)]
        out: PathBuf,
        /// Dataset holding the pulse (default: the one the model was trained on).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "-1:1:41", allow_hyphen_values = true)]
        grid: String,
    },
    /// Compare the periodogram of synthesized noise with the target spectrum.
    PsdCheck {
        #[command(flatten)]
        system: SystemSource,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        realisations: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// 2: usage or configuration, 3: files, 4: numerical failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidDimension(_)
        | Error::ContractViolation(_)
        | Error::Index(_)
        | Error::InvalidConfig(_)
        | Error::Domain(_) => 2,
        Error::Io(_) | Error::Json(_) | Error::Format(_) => 3,
        Error::Invertibility(_)
        | Error::DegenerateObservable(_)
        | Error::InvalidChoi(_)
        | Error::Fit(_)
        | Error::Divergence(_)
        | Error::OptimizationFailure { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::GenDataset {
            system,
            out,
            examples,
            seed,
            noise_dump,
        } => commands::gen_dataset(&system, &out, examples, seed, noise_dump.as_deref()),
        Command::Train {
            dataset,
            out,
            iters,
            seed,
            hidden,
            batch_size,
            learning_rate,
            curves,
        } => commands::train(&commands::TrainArgs {
            dataset,
            out,
            iters,
            seed,
            hidden,
            batch_size,
            learning_rate,
            curves,
        }),
        Command::Optimize {
            model,
            gate,
            out,
            frame,
            restarts,
            iters,
            seed,
            eval_realisations,
        } => commands::optimize(&commands::OptimizeArgs {
            model,
            gate,
            out,
            frame,
            restarts,
            iters,
            seed,
            eval_realisations,
        }),
        Command::Landscape {
            model,
            pulses,
            gate,
            grid,
            out,
            frame,
            source,
            order,
            fidelity_realisations,
            seed,
        } => commands::landscape(&commands::LandscapeArgs {
            model,
            pulses,
            gate,
            grid,
            out,
            frame,
            source,
            order,
            fidelity_realisations,
            seed,
        }),
        Command::Expand {
            model,
            pulse_id,
            order,
            out,
            dataset,
            grid,
        } => commands::expand(&model, pulse_id, order, &out, dataset.as_deref(), &grid),
        Command::PsdCheck {
            system,
            out,
            realisations,
            steps,
            seed,
        } => commands::psd_check(&system, &out, realisations, steps, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
