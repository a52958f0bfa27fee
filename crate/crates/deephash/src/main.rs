//! Thin CLI over the library commands: argument parsing and config
//! overrides only, everything else lives in `deephash::commands`.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use deephash::commands;
use deephash::config::{
    load_compare_config, load_run_config, CompareConfig, LossName, RunConfig, Scheme,
    ThresholdSource,
};
use deephash::error::Result;

#[derive(Parser)]
#[command(
    name = "deephash",
    version,
    about = "Learn and evaluate compact binary hashes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run config; missing sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel ranking; defaults to all cores.
    #[arg(long, global = true, env = "DEEPHASH_THREADS")]
    threads: Option<usize>,
    /// Directory the outputs land in.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a hashing model on a feature file.
    Train(TrainFlags),
    /// Fine-tune a pretrained stack with contrastive pairs.
    Finetune(FinetuneFlags),
    /// Encode a feature file with a trained model.
    Encode(EncodeFlags),
    /// Score code files against ground truth.
    Eval(EvalFlags),
    /// Sweep schemes and bit widths into one long-format CSV.
    Compare(CompareFlags),
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    features: Option<PathBuf>,
    /// deephash | itq | lsh | pq.
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    bits: Option<usize>,
}

#[derive(Args)]
struct FinetuneFlags {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// single | double.
    #[arg(long)]
    loss: Option<LossName>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Recall snapshot cadence; needs --queries and --ground-truth.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeFlags {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    /// train | self: binarization statistics source.
    #[arg(long)]
    thresholds: Option<ThresholdSource>,
}

#[derive(Args)]
struct EvalFlags {
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    database: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Comma-separated list from recall@N | map | ukb | auc.
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<String>,
}

#[derive(Args)]
struct CompareFlags {
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_run_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| deephash::Error::InvalidConfig(format!("thread pool: {e}")))?;
        }
    }
    match &cli.command {
        Command::Train(f) => {
            let mut cfg = run_config(&cli)?;
            if let Some(p) = &f.features {
                cfg.paths.features = Some(p.clone());
            }
            if let Some(s) = f.scheme {
                cfg.scheme = s;
            }
            if let Some(b) = f.bits {
                cfg.bits = b;
            }
            commands::cmd_train(&cfg, &cli.out)
        }
        Command::Finetune(f) => {
            let mut cfg = run_config(&cli)?;
            if let Some(p) = &f.model {
                cfg.paths.model = Some(p.clone());
            }
            if let Some(p) = &f.features {
                cfg.paths.features = Some(p.clone());
            }
            if let Some(p) = &f.pairs {
                cfg.paths.pairs = Some(p.clone());
            }
            if let Some(p) = &f.queries {
                cfg.paths.queries = Some(p.clone());
            }
            if let Some(p) = &f.ground_truth {
                cfg.paths.ground_truth = Some(p.clone());
            }
            if let Some(l) = f.loss {
                cfg.finetune.loss = l;
            }
            if let Some(i) = f.iterations {
                cfg.finetune.iterations = i;
            }
            if let Some(c) = f.checkpoint_every {
                cfg.finetune.checkpoint_every = c;
            }
            commands::cmd_finetune(&cfg, &cli.out)
        }
        Command::Encode(f) => {
            let mut cfg = run_config(&cli)?;
            if let Some(p) = &f.model {
                cfg.paths.model = Some(p.clone());
            }
            if let Some(p) = &f.features {
                cfg.paths.features = Some(p.clone());
            }
            if let Some(t) = f.thresholds {
                cfg.encode.thresholds = t;
            }
            commands::cmd_encode(&cfg, &cli.out)
        }
        Command::Eval(f) => {
            let mut cfg = run_config(&cli)?;
            if let Some(p) = &f.queries {
                cfg.paths.queries = Some(p.clone());
            }
            if let Some(p) = &f.database {
                cfg.paths.database = Some(p.clone());
            }
            if let Some(p) = &f.ground_truth {
                cfg.paths.ground_truth = Some(p.clone());
            }
            if let Some(p) = &f.pairs {
                cfg.paths.pairs = Some(p.clone());
            }
            if !f.metrics.is_empty() {
                cfg.eval.metrics = f.metrics.clone();
            }
            commands::cmd_eval(&cfg, &cli.out)
        }
        Command::Compare(f) => {
            let mut cfg = match &cli.config {
                Some(p) => load_compare_config(p)?,
                None => CompareConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(p) = &f.features {
                cfg.paths.features = Some(p.clone());
            }
            if let Some(p) = &f.queries {
                cfg.paths.queries = Some(p.clone());
            }
            if let Some(p) = &f.ground_truth {
                cfg.paths.ground_truth = Some(p.clone());
            }
            commands::cmd_compare(&cfg, &cli.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
