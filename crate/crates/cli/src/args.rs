use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use spanlink_core::engine::{Packing, TypeOrder};
use spanlink_core::{Limits, OptimizerConfig, Task, TrainTarget};

use crate::Usage;

#[derive(Parser)]
#[command(name = "spanlink", version, about = "Schema-guided span extraction by token linking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train a model on an annotated dataset and write a checkpoint.
    Train(Box<TrainArgs>),
    /// Extract tuples from a dataset with a checkpoint or the gold oracle.
    Predict(PredictArgs),
    /// Score predictions against gold annotations.
    Eval(EvalArgs),
    /// Show the queries built for a text and prefix.
    InspectQuery(InspectArgs),
    /// Write a synthetic annotated corpus for a schema.
    GenSynthetic(GenArgs),
}

fn type_order(s: &str) -> Result<TypeOrder, String> {
    match s {
        "schema" => Ok(TypeOrder::Schema),
        "lexicographic" => Ok(TypeOrder::Lexicographic),
        _ => Err(format!("unknown type order {s:?} (expected schema or lexicographic)")),
    }
}

fn train_target(s: &str) -> Result<TrainTarget, String> {
    match s {
        "all" => Ok(TrainTarget::All),
        "scoring-only" => Ok(TrainTarget::ScoringOnly),
        _ => Err(format!("unknown training target {s:?} (expected all or scoring-only)")),
    }
}

fn packing(s: &str) -> Result<Packing, String> {
    match s {
        "shared" => Ok(Packing::Shared),
        "single" => Ok(Packing::Single),
        _ => Err(format!("unknown packing {s:?} (expected shared or single)")),
    }
}

/// Flags of `train`. Every flag except `--config` may also be given as a
/// snake_case key in the TOML config file; flags win.
#[derive(Args, Deserialize, Default, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// TOML file with default values for the flags below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Schema document.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Training records, one JSON object per line.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Where to write the checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Append one JSON record per epoch to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub max_total: Option<usize>,
    #[arg(long)]
    pub max_esi: Option<usize>,
    /// Link threshold stored in the checkpoint.
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    #[arg(long, value_parser = type_order)]
    pub type_order: Option<TypeOrder>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = train_target)]
    pub target: Option<TrainTarget>,
    /// Stop once the training-set F1 reaches this value.
    #[arg(long)]
    pub stop_at_f1: Option<f64>,
    /// Metric reported as the per-epoch training F1.
    #[arg(long)]
    pub eval_task: Option<Task>,
    /// Skip the per-epoch training-set evaluation.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub skip_eval: Option<bool>,
    #[arg(long)]
    pub workers: Option<usize>,
}

macro_rules! fill_from {
    ($flags:expr, $file:expr; $($field:ident),* $(,)?) => {
        $( if $flags.$field.is_none() { $flags.$field = $file.$field; } )*
    };
}

pub fn required<'a, T>(value: &'a Option<T>, flag: &str) -> anyhow::Result<&'a T> {
    value.as_ref().ok_or_else(|| Usage(format!("missing --{flag} (flag or config key)")).into())
}

impl TrainArgs {
    /// Fills unset flags from the config file, if one was given.
    pub fn resolve(mut self) -> anyhow::Result<Self> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let file = read_config(&path)?;
        fill_from!(self, file; schema, train, checkpoint, resume, log, dim, layers, max_total, max_esi, delta,
            type_order, learning_rate, weight_decay, clip_norm, warmup_fraction, epochs, batch_size, seed,
            target, stop_at_f1, eval_task, skip_eval, workers);
        Ok(self)
    }

    pub fn limits(&self, fallback: Limits) -> Limits {
        Limits {
            max_total: self.max_total.unwrap_or(fallback.max_total),
            max_esi: self.max_esi.unwrap_or(fallback.max_esi),
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        let d = OptimizerConfig::default();
        OptimizerConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            clip_norm: self.clip_norm.unwrap_or(d.clip_norm),
            warmup_fraction: self.warmup_fraction.unwrap_or(d.warmup_fraction),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            seed: self.seed.unwrap_or(d.seed),
            target: self.target.unwrap_or(d.target),
            stop_at_f1: self.stop_at_f1,
            workers: self.workers.unwrap_or(1),
        }
    }
}

fn read_config(path: &Path) -> anyhow::Result<TrainArgs> {
    let doc = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut file: TrainArgs = toml::from_str(&doc).with_context(|| format!("config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut file.schema, &mut file.train, &mut file.checkpoint, &mut file.resume, &mut file.log]
        .into_iter()
        .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(file)
}

#[derive(Args)]
pub struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long, required_unless_present = "gold_oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Schema document; must match the checkpoint's. Required with `--gold-oracle`.
    #[arg(long, required_if_eq("gold_oracle", "true"))]
    pub schema: Option<PathBuf>,
    /// Records to extract from, one JSON object per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Output records; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Link threshold; defaults to the checkpoint's.
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    /// Replay the input annotations through the engine instead of a model.
    #[arg(long)]
    pub gold_oracle: bool,
    #[arg(long)]
    pub max_total: Option<usize>,
    #[arg(long)]
    pub max_esi: Option<usize>,
    #[arg(long, value_parser = type_order)]
    pub type_order: Option<TypeOrder>,
    #[arg(long, value_parser = packing, default_value = "shared")]
    pub packing: Packing,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// Metric name; repeat for several.
    #[arg(long, required = true)]
    pub task: Vec<Task>,
}

#[derive(Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub text: String,
    /// A prefix as `type: span,type: span`; repeat for several groups.
    #[arg(long)]
    pub prefix: Vec<String>,
    /// Use this checkpoint's tokenizer instead of one built from the inputs.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = type_order, default_value = "schema")]
    pub type_order: TypeOrder,
    #[arg(long, default_value_t = Limits::default().max_total)]
    pub max_total: usize,
    /// Defaults to 256 or half of `--max-total`, whichever is smaller.
    #[arg(long)]
    pub max_esi: Option<usize>,
    /// Print only the detokenized queries, one per line.
    #[arg(long)]
    pub rendered: bool,
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output records; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub max_chains: usize,
    /// Probability of descending one more schema level.
    #[arg(long, default_value_t = 0.75)]
    pub descend: f64,
}
