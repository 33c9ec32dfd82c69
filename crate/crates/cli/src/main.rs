//! Command-line entry point: prepare | train | evaluate | ablate | inspect.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CmdError, CmdResult, InspectTarget};
use config::{Precision, RunConfig};

#[derive(Parser)]
#[command(
    name = "teprompt",
    about = "Task-enlightenment prompt learning for implicit discourse relation recognition",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each one overrides the matching
/// config-file field.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Run configuration file (TOML). Flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for this run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed for corpus generation, initialization and batching.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Numeric precision: f32 or f64.
    #[arg(long, global = true)]
    precision: Option<String>,
    /// Ablation variant to build and train.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Corpus file to load instead of generating synthetic data.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Corpus file format: jsonl or tsv.
    #[arg(long, global = true)]
    format: Option<String>,
    /// Synthetic training-set size.
    #[arg(long, global = true)]
    num_train: Option<usize>,
    /// Synthetic test-set (and dev-set) size.
    #[arg(long, global = true)]
    num_test: Option<usize>,
    /// Training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Optimizer learning rate.
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    /// Mini-batch size.
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Sense-classification loss weight.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Connective-prediction loss weight.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Decoupled weight decay.
    #[arg(long, global = true)]
    weight_decay: Option<f64>,
    /// Hidden width of the toy backbone.
    #[arg(long, global = true)]
    d_h: Option<usize>,
    /// Encoder layers of the toy backbone.
    #[arg(long, global = true)]
    layers: Option<usize>,
    /// Attention heads of the toy backbone.
    #[arg(long, global = true)]
    heads: Option<usize>,
    /// Dropout rate during training.
    #[arg(long, global = true)]
    dropout: Option<f64>,
    /// Directory of an exported pretrained backbone.
    #[arg(long, global = true)]
    pretrained: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize the corpus split and its statistics manifest.
    Prepare {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train one variant on the prepared corpus and write a checkpoint.
    Train {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on the prepared test split.
    Evaluate {
        #[command(flatten)]
        overrides: Overrides,
        /// Checkpoint directory (default: `<out>/checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate all nine variants under one seed and config.
    Ablate {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Dump per-head answer probabilities and decision states for one
    /// instance or an ad-hoc argument pair.
    Inspect {
        #[command(flatten)]
        overrides: Overrides,
        /// Checkpoint directory (default: `<out>/checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Instance id from the prepared corpus.
        #[arg(long, conflicts_with_all = ["arg1", "arg2"])]
        id: Option<String>,
        /// First argument text of an ad-hoc pair.
        #[arg(long, requires = "arg2")]
        arg1: Option<String>,
        /// Second argument text of an ad-hoc pair.
        #[arg(long, requires = "arg1")]
        arg2: Option<String>,
    },
}

fn apply_overrides(mut cfg: RunConfig, o: &Overrides) -> CmdResult<RunConfig> {
    let parse_cfg = |e: String| CmdError::Config(anyhow::anyhow!(e));
    if let Some(out) = &o.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &o.precision {
        cfg.precision = p.parse::<Precision>().map_err(parse_cfg)?;
    }
    if let Some(v) = &o.variant {
        cfg.training.variant = v
            .parse()
            .map_err(|e: teprompt_core::Error| CmdError::Config(anyhow::anyhow!(e)))?;
    }
    if let Some(path) = &o.corpus {
        cfg.corpus.source = config::CorpusSource::File;
        cfg.corpus.path = Some(path.clone());
    }
    if let Some(f) = &o.format {
        cfg.corpus.format = f.parse().map_err(parse_cfg)?;
    }
    if let Some(n) = o.num_train {
        cfg.corpus.num_train = n;
    }
    if let Some(n) = o.num_test {
        cfg.corpus.num_test = n;
    }
    if let Some(n) = o.epochs {
        cfg.training.epochs = n;
    }
    if let Some(x) = o.learning_rate {
        cfg.training.learning_rate = x;
    }
    if let Some(n) = o.batch_size {
        cfg.training.batch_size = n;
    }
    if let Some(x) = o.beta {
        cfg.training.beta = x;
    }
    if let Some(x) = o.gamma {
        cfg.training.gamma = x;
    }
    if let Some(x) = o.weight_decay {
        cfg.training.weight_decay = x;
    }
    if let Some(n) = o.d_h {
        cfg.backbone.d_h = n;
    }
    if let Some(n) = o.layers {
        cfg.backbone.layers = n;
    }
    if let Some(n) = o.heads {
        cfg.backbone.heads = n;
    }
    if let Some(x) = o.dropout {
        cfg.backbone.dropout = x;
    }
    if let Some(dir) = &o.pretrained {
        cfg.backbone.kind = config::BackboneKind::Pretrained;
        cfg.backbone.pretrained_dir = Some(dir.clone());
    }
    Ok(cfg)
}

fn resolve_config(o: &Overrides) -> CmdResult<RunConfig> {
    let base = match &o.config {
        Some(path) => RunConfig::load(path).map_err(CmdError::Config)?,
        None => RunConfig::default(),
    };
    apply_overrides(base, o)
}

fn run() -> CmdResult {
    let cli = Cli::parse();
    match cli.command {
        Command::Prepare { overrides } => {
            let cfg = resolve_config(&overrides)?;
            commands::cmd_prepare(&cfg)
        }
        Command::Train { overrides } => {
            let cfg = resolve_config(&overrides)?;
            commands::cmd_train(&cfg)
        }
        Command::Evaluate {
            overrides,
            checkpoint,
        } => {
            let cfg = resolve_config(&overrides)?;
            commands::cmd_evaluate(&cfg, checkpoint.as_deref())
        }
        Command::Ablate { overrides } => {
            let cfg = resolve_config(&overrides)?;
            commands::cmd_ablate(&cfg)
        }
        Command::Inspect {
            overrides,
            checkpoint,
            id,
            arg1,
            arg2,
        } => {
            let cfg = resolve_config(&overrides)?;
            let target = match (id, arg1, arg2) {
                (Some(id), _, _) => InspectTarget::Id(id),
                (None, Some(arg1), Some(arg2)) => InspectTarget::Pair { arg1, arg2 },
                _ => {
                    return Err(CmdError::Config(anyhow::anyhow!(
                        "inspect needs either --id or both --arg1 and --arg2"
                    )))
                }
            };
            commands::cmd_inspect(&cfg, checkpoint.as_deref(), target)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err.error());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
