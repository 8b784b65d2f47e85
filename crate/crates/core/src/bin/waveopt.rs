use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use waveopt::pipeline::commands::{self, EditArgs, Layout};
use waveopt::pipeline::{Config, Method};
use waveopt::Result;

#[derive(Parser)]
#[command(
    name = "waveopt",
    version,
    about = "Wavelet-guided early stopping for embedding-optimized DDIM inversion"
)]
struct Cli {
    /// JSON config with sections schedule, denoiser, optimization, estimator, corpus, benchmark.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed applied to every seeded component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-class corpus.
    GenCorpus,
    /// Train the toy denoiser on the train and validation images.
    TrainDenoiser {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Endpoint scan of one corpus image.
    Scan {
        #[arg(long)]
        denoiser: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        image: usize,
    },
    /// Wavelet energies of every corpus image.
    Profile {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Attach ground-truth endpoints from a built dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Scan every image and store estimator samples.
    BuildDataset {
        #[arg(long)]
        denoiser: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train the endpoint estimator on a stored dataset.
    TrainEstimator {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Loss and MAE per split.
    EvalEstimator {
        #[arg(long)]
        estimator: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Invert a PGM image under one prompt token and resample under another.
    Edit {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        src_token: usize,
        #[arg(long)]
        edit_token: usize,
        #[arg(long, default_value = "npi+woe")]
        method: Method,
        #[arg(long)]
        denoiser: Option<PathBuf>,
        #[arg(long)]
        estimator: Option<PathBuf>,
    },
    /// Compare all methods on a corpus split.
    Benchmark {
        #[arg(long)]
        denoiser: Option<PathBuf>,
        #[arg(long)]
        estimator: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let layout = Layout::new(&cli.out);
    let or = |p: Option<PathBuf>, d: PathBuf| p.unwrap_or(d);
    match cli.command {
        Command::GenCorpus => commands::gen_corpus_cmd(&cfg, &layout),
        Command::TrainDenoiser { corpus } => commands::train_denoiser_cmd(&cfg, &layout, corpus.as_deref()),
        Command::Scan {
            denoiser,
            corpus,
            image,
        } => commands::scan_cmd(
            &cfg,
            &layout,
            &or(denoiser, layout.denoiser()),
            corpus.as_deref(),
            image,
        ),
        Command::Profile { corpus, dataset } => {
            commands::profile_cmd(&cfg, &layout, corpus.as_deref(), dataset.as_deref())
        }
        Command::BuildDataset { denoiser, corpus } => {
            commands::build_dataset_cmd(&cfg, &layout, &or(denoiser, layout.denoiser()), corpus.as_deref())
        }
        Command::TrainEstimator { dataset } => {
            commands::train_estimator_cmd(&cfg, &layout, &or(dataset, layout.dataset()))
        }
        Command::EvalEstimator { estimator, dataset } => commands::eval_estimator_cmd(
            &cfg,
            &layout,
            &or(estimator, layout.estimator()),
            &or(dataset, layout.dataset()),
        ),
        Command::Edit {
            image,
            src_token,
            edit_token,
            method,
            denoiser,
            estimator,
        } => {
            let denoiser = or(denoiser, layout.denoiser());
            let estimator = estimator.or_else(|| method.uses_estimator().then(|| layout.estimator()));
            commands::edit_cmd(
                &cfg,
                &layout,
                &EditArgs {
                    denoiser: &denoiser,
                    estimator: estimator.as_deref(),
                    image: &image,
                    src_token,
                    edit_token,
                    method,
                },
            )
        }
        Command::Benchmark {
            denoiser,
            estimator,
            corpus,
        } => {
            let estimator = estimator.or_else(|| {
                cfg.benchmark
                    .methods
                    .iter()
                    .any(|m| m.uses_estimator())
                    .then(|| layout.estimator())
            });
            commands::benchmark_cmd(
                &cfg,
                &layout,
                &or(denoiser, layout.denoiser()),
                estimator.as_deref(),
                corpus.as_deref(),
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", json!({ "error": { "kind": "usage", "message": message.trim() } }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::FAILURE
        }
    }
}
