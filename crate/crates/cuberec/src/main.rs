use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cuberec::cli::{
    cmd_ablate, cmd_evaluate, cmd_prepare, cmd_sweep, cmd_train, Overrides, RunConfig, SweepParam,
};
use cuberec::eval::AblationToggle;

/// Hypercube-based group recommender: prepare data, train, evaluate, run
/// ablations and hyperparameter sweeps.
#[derive(Parser)]
#[command(name = "cuberec", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate raw TSVs, split interactions, write the canonical dataset
    /// directory and a statistics table.
    Prepare(CommonArgs),
    /// Pretrain embeddings, then stage-two training; writes a checkpoint.
    Train(CommonArgs),
    /// Rank held-out items for every test group and report Recall/NDCG.
    Evaluate(CommonArgs),
    /// Train and evaluate the default model plus ablated variants.
    Ablate(AblateArgs),
    /// Sweep one hyperparameter (d, gamma, or mu) over a value grid.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Line-oriented key=value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Raw TSVs (prepare) or a prepared dataset directory (other commands).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Where outputs (prepared data, checkpoints, reports) are written.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Checkpoint to evaluate (defaults to <out-dir>/checkpoint.json).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Model variant: cuberec-g (geometric) or cuberec-a (attentive).
    #[arg(long)]
    variant: Option<String>,
    /// Embedding dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Graph convolution layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Inner-distance weight in the item-to-group distance.
    #[arg(long)]
    gamma: Option<f64>,
    /// Self-supervision loss weight.
    #[arg(long)]
    mu: Option<f64>,
    /// Hinge margin, applied to all three losses.
    #[arg(long)]
    lambda: Option<f64>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Mini-batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Negative samples per positive.
    #[arg(long)]
    negatives: Option<usize>,
    /// Dummy-group swap/imputation proportion.
    #[arg(long)]
    rho: Option<f64>,
    /// Dropout ratio on deep layers during training.
    #[arg(long)]
    dropout: Option<f64>,
    /// Epoch budget as `<pretrain>,<stage2>`.
    #[arg(long)]
    epochs: Option<String>,
    /// Seed for every random choice in the pipeline.
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation cutoffs, comma-separated (default 10,20).
    #[arg(long)]
    k: Option<String>,
    /// Worker threads for evaluation (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Drop social ties from the adjacency (the remove-SR ablation).
    #[arg(long)]
    remove_sr: bool,
    /// Score by center-only point distance (the point-distance ablation).
    #[arg(long)]
    point_distance: bool,
    /// Include the group-size breakdown in reports.
    #[arg(long)]
    buckets: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated toggles: remove_sr,point_distance,remove_ssl.
    #[arg(long, default_value = "remove_sr,point_distance,remove_ssl")]
    toggles: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Hyperparameter to sweep: d, gamma, or mu.
    #[arg(long)]
    param: String,
    /// Comma-separated values; defaults to the standard grid.
    #[arg(long)]
    values: Option<String>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            data_dir: self.data_dir.clone(),
            out_dir: self.out_dir.clone(),
            checkpoint: self.checkpoint.clone(),
            variant: self.variant.clone(),
            d: self.d,
            layers: self.layers,
            gamma: self.gamma,
            mu: self.mu,
            lambda: self.lambda,
            lr: self.lr,
            batch: self.batch,
            negatives: self.negatives,
            rho: self.rho,
            dropout: self.dropout,
            epochs: self.epochs.clone(),
            seed: self.seed,
            k: self.k.clone(),
            threads: self.threads,
            remove_sr: self.remove_sr,
            point_distance: self.point_distance,
            buckets: self.buckets,
        }
    }

    fn resolve(&self) -> cuberec::Result<RunConfig> {
        let cfg = RunConfig::resolve(self.config.as_deref(), &self.overrides())?;
        if cfg.threads > 0 {
            // Ignore the error if a pool already exists (tests, repeat calls).
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build_global();
        }
        Ok(cfg)
    }
}

fn run() -> cuberec::Result<()> {
    match Cli::parse().command {
        Command::Prepare(args) => {
            cmd_prepare(&args.resolve()?)?;
        }
        Command::Train(args) => {
            let (checkpoint, _) = cmd_train(&args.resolve()?)?;
            println!("checkpoint written to {}", checkpoint.display());
        }
        Command::Evaluate(args) => {
            let (csv, _) = cmd_evaluate(&args.resolve()?)?;
            println!("metrics written to {}", csv.display());
        }
        Command::Ablate(args) => {
            let cfg = args.common.resolve()?;
            let toggles = args
                .toggles
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| AblationToggle::parse(s.trim()))
                .collect::<cuberec::Result<Vec<_>>>()?;
            let path = cmd_ablate(&cfg, &toggles)?;
            println!("ablation results written to {}", path.display());
        }
        Command::Sweep(args) => {
            let cfg = args.common.resolve()?;
            let param = SweepParam::parse(&args.param)?;
            let values = match &args.values {
                Some(list) => Some(
                    list.split(',')
                        .map(|v| {
                            v.trim().parse::<f64>().map_err(|_| {
                                cuberec::Error::Validation(format!("bad sweep value {v:?}"))
                            })
                        })
                        .collect::<cuberec::Result<Vec<f64>>>()?,
                ),
                None => None,
            };
            let path = cmd_sweep(&cfg, param, values)?;
            println!("sweep results written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
