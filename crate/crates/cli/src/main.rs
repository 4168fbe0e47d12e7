use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "chaincount",
    version,
    about = "Chain-ordered dense object counting pipelines"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Reject unknown fields in dataset records instead of warning.
    #[arg(long, global = true)]
    strict: bool,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Counting, GAME and localization metrics for a dataset.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        /// Report file; the text summary is always printed to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
        /// Comma-separated GAME levels.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<u32>>,
    },
    /// Confidence filtering and duplicate removal on every record's predictions.
    Dedup {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Minimum spacing along the chain axis, in pixels.
        #[arg(long)]
        distance: Option<f64>,
        /// Confidence threshold.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Two-pass divide-and-conquer counting; predictions are replaced by the stitched output.
    Partition {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = CounterKind::Oracle)]
        counter: CounterKind,
        /// Precomputed per-crop detections for `--counter file`.
        #[arg(long, required_if_eq("counter", "file"))]
        counter_file: Option<PathBuf>,
        /// Writes one JSON line per record with its first-pass size and slices.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        gap: Option<f64>,
        #[arg(long)]
        padding: Option<f64>,
        #[arg(long)]
        merge_distance: Option<f64>,
    },
    /// Gradient refinement of one chain; writes the per-step loss trace as CSV.
    Refine {
        /// Dataset to take the chain from; without it a synthetic jittered chain is used.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Record id within `--input` (default: first record with predictions and targets).
        #[arg(long)]
        record: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        rematch_every: Option<usize>,
        /// Loss weights as `cls,loc,neigh`.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        weights: Option<Vec<f64>>,
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Writes a synthetic dataset.
    Synth {
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        images: Option<usize>,
        /// Predictions copy the ground truth exactly.
        #[arg(long)]
        clean: bool,
    },
    /// Compares analytic loss gradients with central finite differences.
    Gradcheck {
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

#[derive(Args, Debug)]
struct ChainArgs {
    #[arg(long, default_value_t = 20)]
    chain_points: usize,
    #[arg(long, default_value_t = 30.0)]
    chain_spacing: f64,
    #[arg(long, default_value_t = 2.0)]
    chain_jitter: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CounterKind {
    Oracle,
    Noisy,
    File,
}

fn main() -> ExitCode {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Warn)
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

impl Cli {
    fn resolve_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::load(self.global.config.as_deref())?;
        if let Some(seed) = self.global.seed {
            cfg.seed = seed;
        }
        match &self.command {
            Command::Evaluate { levels, .. } => {
                if let Some(l) = levels {
                    cfg.metrics.game_levels = l.clone();
                }
            }
            Command::Dedup {
                distance, sigma, ..
            } => {
                if distance.is_some() {
                    cfg.dedup.distance_threshold = *distance;
                }
                if let Some(s) = sigma {
                    cfg.dedup.confidence_threshold = *s;
                }
            }
            Command::Partition {
                gap,
                padding,
                merge_distance,
                ..
            } => {
                if gap.is_some() {
                    cfg.partition.gap_threshold = *gap;
                }
                if let Some(p) = padding {
                    cfg.partition.padding = *p;
                }
                if let Some(m) = merge_distance {
                    cfg.partition.merge_distance = *m;
                }
            }
            Command::Refine {
                steps,
                lr,
                rematch_every,
                weights,
                ..
            } => {
                if let Some(s) = steps {
                    cfg.refine.steps = *s;
                }
                if let Some(lr) = lr {
                    cfg.refine.learning_rate = *lr;
                }
                if let Some(r) = rematch_every {
                    cfg.refine.rematch_every = *r;
                }
                if let Some(w) = weights {
                    cfg.refine.weights = chaincount_core::LossWeights::new(w[0], w[1], w[2]);
                }
            }
            Command::Synth { images, clean, .. } => {
                if let Some(n) = images {
                    cfg.synth.images = *n;
                }
                if *clean {
                    cfg.synth.corruption = chaincount_core::synth::CorruptionSpec::none();
                }
            }
            Command::Gradcheck {
                instances,
                step,
                tolerance,
            } => {
                if let Some(n) = instances {
                    cfg.gradcheck.instances = *n;
                }
                if let Some(s) = step {
                    cfg.gradcheck.step = *s;
                }
                if let Some(t) = tolerance {
                    cfg.gradcheck.tolerance = *t;
                }
            }
        }
        Ok(cfg)
    }
}
