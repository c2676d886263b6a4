//! Command-line parsing. Every subcommand accepts the same flat set of
//! flags; each flag that is given becomes one key of the top configuration
//! layer.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::checkpoint::Checkpoint;
use crate::commands;
use crate::config::{self, RunConfig};
use crate::error::Failure;

#[derive(Debug, Parser)]
#[command(name = "modalmend", version, about = "Multimodal learning with missing modalities: synthetic data, training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth(Flags),
    /// Train a model variant and write its history and best checkpoint.
    Train(Flags),
    /// Evaluate a checkpoint on the test split (bootstrap) or run k-fold cross-validation.
    Eval(Flags),
    /// Train and test across extra missing rates applied to every modality.
    Sweep(Flags),
    /// Compare cross-modal similarity matrices against noise and shuffle baselines.
    Intuition(Flags),
    /// Export per-patient fusion attention matrices from a checkpoint.
    DumpAttention(Flags),
}

#[derive(Debug, Default, Clone, Args)]
pub struct Flags {
    /// JSON configuration layered under the flags (same format as the emitted config.json).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Reuse an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Print per-epoch progress to stderr.
    #[arg(long)]
    pub progress: bool,
    /// Seed for generation, initialization, splitting and resampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint file written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated per-modality missing rates.
    #[arg(long, value_delimiter = ',')]
    pub missing: Option<Vec<f64>>,

    /// Number of synthetic patients.
    #[arg(long)]
    pub patients: Option<usize>,
    /// Modality list, e.g. vec:10,seq:6x8,grid:8x8.
    #[arg(long)]
    pub modalities: Option<String>,
    /// Number of binary labels.
    #[arg(long)]
    pub labels: Option<usize>,
    /// Dimension of the shared latent factor.
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Observation noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,

    /// full, ablation_cosine, ablation_mean_neighbor or zero_impute.
    #[arg(long)]
    pub variant: Option<String>,
    /// Latent width shared by all modalities.
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Transformer layers in the fusion module.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Attention heads in the fusion module.
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub seq_layers: Option<usize>,
    #[arg(long)]
    pub seq_heads: Option<usize>,
    /// Channels of the two grid convolutions, e.g. 8,16.
    #[arg(long, value_delimiter = ',')]
    pub grid_channels: Option<Vec<usize>>,
    #[arg(long)]
    pub ffn_mult: Option<usize>,
    #[arg(long)]
    pub delta_init: Option<f64>,
    #[arg(long)]
    pub threshold_init: Option<f64>,
    #[arg(long)]
    pub bandwidth_k: Option<f64>,
    #[arg(long)]
    pub bandwidth_q: Option<f64>,
    /// Temperature of the threshold's surrogate gradient.
    #[arg(long)]
    pub tau: Option<f64>,
    /// sequence or summary.
    #[arg(long)]
    pub token_mode: Option<String>,
    #[arg(long)]
    pub row_normalize: Option<bool>,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight of the kernel stability loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Training patients appended to every evaluation batch.
    #[arg(long)]
    pub reference_bank: Option<usize>,

    /// bootstrap or k_fold.
    #[arg(long)]
    pub protocol: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub resamples: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,

    /// Extra missing rates for `sweep`.
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    /// Seeds per rate for `sweep`.
    #[arg(long)]
    pub seeds: Option<usize>,

    /// Two modality indices for `intuition`, e.g. 0,1.
    #[arg(long, value_delimiter = ',')]
    pub pair: Option<Vec<usize>>,
    /// observed or trained.
    #[arg(long)]
    pub representation: Option<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Intuition noise level relative to each feature's standard deviation.
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub max_patients: Option<usize>,

    /// Patients exported by `dump-attention`.
    #[arg(long = "patient", value_delimiter = ',')]
    pub attention_patients: Option<Vec<usize>>,
    /// Number of test patients exported when none are named.
    #[arg(long)]
    pub limit: Option<usize>,
}

impl Flags {
    /// The top configuration layer built from the flags that were given.
    pub fn layer(&self) -> Value {
        let mut doc = json!({});
        let mut put = |path: &str, v: Option<Value>| {
            if let Some(v) = v {
                config::set_path(&mut doc, path, v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| json!(p));
        put("out", path(&self.out));
        put("data", path(&self.data));
        put("checkpoint", path(&self.checkpoint));
        put("missing", self.missing.as_ref().map(|v| json!(v)));
        put("synth.patients", self.patients.map(|v| json!(v)));
        put("synth.modalities", self.modalities.as_ref().map(|v| json!(v)));
        put("synth.labels", self.labels.map(|v| json!(v)));
        put("synth.latent_dim", self.latent_dim.map(|v| json!(v)));
        put("synth.noise", self.noise.map(|v| json!(v)));
        put("model.variant", self.variant.as_ref().map(|v| json!(v)));
        put("model.hidden_dim", self.hidden_dim.map(|v| json!(v)));
        put("model.fusion_layers", self.layers.map(|v| json!(v)));
        put("model.fusion_heads", self.heads.map(|v| json!(v)));
        put("model.seq_layers", self.seq_layers.map(|v| json!(v)));
        put("model.seq_heads", self.seq_heads.map(|v| json!(v)));
        put("model.grid_channels", self.grid_channels.as_ref().map(|v| json!(v)));
        put("model.ffn_mult", self.ffn_mult.map(|v| json!(v)));
        put("model.delta_init", self.delta_init.map(|v| json!(v)));
        put("model.threshold_init", self.threshold_init.map(|v| json!(v)));
        put("model.bandwidth_fraction_k", self.bandwidth_k.map(|v| json!(v)));
        put("model.bandwidth_fraction_q", self.bandwidth_q.map(|v| json!(v)));
        put("model.tau", self.tau.map(|v| json!(v)));
        put("model.token_mode", self.token_mode.as_ref().map(|v| json!(v)));
        put("model.row_normalize_adj", self.row_normalize.map(|v| json!(v)));
        put("train.epochs", self.epochs.map(|v| json!(v)));
        put("train.batch_size", self.batch_size.map(|v| json!(v)));
        put("train.lr", self.lr.map(|v| json!(v)));
        put("train.stability_weight", self.lambda.map(|v| json!(v)));
        put("train.grad_clip", self.grad_clip.map(|v| json!(v)));
        put("train.reference_bank", self.reference_bank.map(|v| json!(v)));
        put("eval.protocol", self.protocol.as_ref().map(|v| json!(v)));
        put("eval.folds", self.folds.map(|v| json!(v)));
        put("eval.bootstrap_resamples", self.resamples.map(|v| json!(v)));
        put("eval.train_fraction", self.train_fraction.map(|v| json!(v)));
        put("eval.val_fraction", self.val_fraction.map(|v| json!(v)));
        put("sweep.rates", self.rates.as_ref().map(|v| json!(v)));
        put("sweep.seeds", self.seeds.map(|v| json!(v)));
        put("intuition.pair", self.pair.as_ref().map(|v| json!(v)));
        put("intuition.representation", self.representation.as_ref().map(|v| json!(v)));
        put("intuition.repeats", self.repeats.map(|v| json!(v)));
        put("intuition.noise_std", self.noise_std.map(|v| json!(v)));
        put("intuition.max_patients", self.max_patients.map(|v| json!(v)));
        put("attention.patients", self.attention_patients.as_ref().map(|v| json!(v)));
        put("attention.limit", self.limit.map(|v| json!(v)));
        if let Some(seed) = self.seed {
            config::merge(&mut doc, config::seed_layer(seed));
        }
        doc
    }
}

/// Resolves the configuration for a command. When `with_checkpoint` is set
/// and a checkpoint is named, its stored configuration sits between the
/// environment seed and the config file.
pub fn resolve(flags: &Flags, with_checkpoint: bool) -> Result<RunConfig, Failure> {
    let mut lower = Vec::new();
    if let Some(seed) = config::env_seed()? {
        lower.push(config::seed_layer(seed));
    }
    let mut upper = Vec::new();
    if let Some(path) = &flags.config {
        upper.push(config::read_config_file(path)?);
    }
    upper.push(flags.layer());
    let first = config::resolve(lower.iter().chain(&upper).cloned().collect())?;
    if !with_checkpoint {
        return Ok(first);
    }
    let Some(path) = first.checkpoint.clone() else {
        return Ok(first);
    };
    let ck = Checkpoint::load(&path)?;
    let mut stored = serde_json::to_value(&ck.config).expect("serializable");
    if let Value::Object(map) = &mut stored {
        map.remove("out");
        map.remove("checkpoint");
    }
    lower.push(stored);
    config::resolve(lower.into_iter().chain(upper).collect())
}

/// Runs a parsed command and returns the text for stdout.
pub fn run(cli: &Cli) -> Result<String, Failure> {
    match &cli.command {
        Command::Synth(f) => commands::synth(&resolve(f, false)?, f.force),
        Command::Train(f) => commands::train(&resolve(f, false)?, f.force, f.progress),
        Command::Eval(f) => commands::eval(&resolve(f, true)?, f.force),
        Command::Sweep(f) => commands::sweep(&resolve(f, false)?, f.force),
        Command::Intuition(f) => commands::intuition_cmd(&resolve(f, false)?, f.force),
        Command::DumpAttention(f) => commands::dump_attention(&resolve(f, true)?, f.force),
    }
}
