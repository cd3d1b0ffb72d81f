mod commands;
mod config;
mod plot;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use semidense::data::Split;
use semidense::network::SizeTier;
use semidense::trainer::Strategy;

use crate::commands::EvalArgs;
use crate::config::{resolve, Overrides};

/// Depth completion from semi-dense sensor maps.
#[derive(Parser)]
#[command(name = "semidense", version, about)]
struct Cli {
    /// TOML experiment config; values override the preset and defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for scene generation, corruption and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset preset: synthetic, matterport, nyu, scannet or kitti.
    #[arg(long, global = true)]
    profile: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic RGB-D dataset.
    GenData {
        /// Number of scenes.
        #[arg(long)]
        n: usize,
        /// How many of the last scenes form the test split.
        #[arg(long, default_value_t = 0)]
        test: usize,
    },
    /// Write a copy of a dataset with corrupted sensor depth.
    Corrupt {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a model; writes checkpoints and the loss history.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Continue from a checkpoint written by `train`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long, requires = "checkpoint")]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory of predicted 16-bit depth PNGs.
        #[arg(long, requires = "gt", conflicts_with = "data")]
        pred: Option<PathBuf>,
        /// Directory of ground-truth 16-bit depth PNGs.
        #[arg(long, requires = "pred")]
        gt: Option<PathBuf>,
        /// train, val or test; defaults to test when present.
        #[arg(long)]
        split: Option<Split>,
        /// Input construction: semi_dense_corruption, uniform_sparse or none.
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Recompute every report with the reference implementation.
        #[arg(long)]
        check_oracle: bool,
        /// Number of samples to render as image panels.
        #[arg(long, default_value_t = 4)]
        plots: usize,
    },
    /// Train once per loss function and tabulate test metrics.
    AblateLoss {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train both variants across encoder sizes.
    AblateBackbone {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated tiers.
        #[arg(long, value_delimiter = ',', default_value = "T0,T1,T2,T3,T4")]
        tiers: Vec<SizeTier>,
    },
    /// Regenerate an SVG chart from a backbone CSV or a history JSON.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Command::Plot { input, output } = &cli.command {
        let path = commands::plot(input, output.clone())?;
        eprintln!("wrote {}", path.display());
        return Ok(());
    }
    let cfg = resolve(&Overrides {
        config: cli.config.clone(),
        profile: cli.profile.clone(),
        seed: cli.seed,
        out: cli.out.clone(),
    })
    .context("resolving configuration")?;
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    match &cli.command {
        Command::GenData { n, test } => commands::gen_data(&cfg, *n, *test),
        Command::Corrupt { data } => commands::corrupt_dataset(&cfg, data),
        Command::Train { data, resume } => commands::train(&cfg, data, resume.as_deref()),
        Command::Eval {
            data,
            checkpoint,
            pred,
            gt,
            split,
            strategy,
            check_oracle,
            plots,
        } => commands::eval(
            &cfg,
            &EvalArgs {
                data: data.as_deref(),
                checkpoint: checkpoint.as_deref(),
                pred: pred.as_deref(),
                gt: gt.as_deref(),
                split: *split,
                strategy: *strategy,
                check_oracle: *check_oracle,
                plots: *plots,
            },
        ),
        Command::AblateLoss { data } => commands::ablate_loss(&cfg, data),
        Command::AblateBackbone { data, tiers } => commands::ablate_backbone(&cfg, data, tiers),
        Command::Plot { .. } => unreachable!("handled above"),
    }
}
