//! Hyperparameters. Every run is fully determined by an [`ExperimentConfig`]
//! plus its dataset.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelVariant;

/// How modality tokens enter the multimodal transformer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    /// Present sequences contribute every timestep, with the last one
    /// replaced by the imputed/enhanced representation.
    Sequence,
    /// Every modality contributes exactly one token.
    Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    /// Latent width `N_h`, shared by every modality.
    pub hidden_dim: usize,
    pub seq_layers: usize,
    pub seq_heads: usize,
    /// Output channels of each strided convolution in the grid encoder.
    pub grid_channels: Vec<usize>,
    pub fusion_layers: usize,
    pub fusion_heads: usize,
    pub ffn_mult: usize,
    pub delta_init: f64,
    pub threshold_init: f64,
    pub bandwidth_fraction_k: f64,
    pub bandwidth_fraction_q: f64,
    /// Straight-through temperature of the similarity threshold.
    pub tau: f64,
    pub epsilon: f64,
    pub token_mode: TokenMode,
    pub row_normalize_adj: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: ModelVariant::Full,
            hidden_dim: 128,
            seq_layers: 2,
            seq_heads: 4,
            grid_channels: vec![8, 16],
            fusion_layers: 2,
            fusion_heads: 4,
            ffn_mult: 4,
            delta_init: 0.5,
            threshold_init: 0.5,
            bandwidth_fraction_k: 0.5,
            bandwidth_fraction_q: 1.0,
            tau: 0.1,
            epsilon: 1e-8,
            token_mode: TokenMode::Sequence,
            row_normalize_adj: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight `λ` of the stability loss.
    pub stability_weight: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Training patients appended as context to every evaluation batch.
    /// 0 keeps evaluation batch-internal.
    pub reference_bank: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            stability_weight: 0.1,
            grad_clip: 5.0,
            seed: 0,
            reference_bank: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// One train/validation/test split, test metrics with bootstrap std.
    Bootstrap,
    /// k-fold cross-validation, mean and std over folds.
    KFold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub protocol: Protocol,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub bootstrap_resamples: usize,
    pub folds: usize,
    pub split_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            protocol: Protocol::Bootstrap,
            train_fraction: 0.8,
            val_fraction: 0.1,
            bootstrap_resamples: 1000,
            folds: 10,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if m.hidden_dim == 0 {
            return bad("hidden_dim must be positive");
        }
        if m.seq_heads == 0 || m.hidden_dim % m.seq_heads != 0 {
            return bad("seq_heads must divide hidden_dim");
        }
        if m.fusion_heads == 0 || m.hidden_dim % m.fusion_heads != 0 {
            return bad("fusion_heads must divide hidden_dim");
        }
        if !(m.delta_init > 0.0 && m.delta_init < 1.0) || !(m.threshold_init > 0.0 && m.threshold_init < 1.0) {
            return bad("delta_init and threshold_init must lie in (0, 1)");
        }
        if !(m.bandwidth_fraction_k > 0.0 && m.bandwidth_fraction_q > 0.0) {
            return bad("bandwidth fractions must be positive");
        }
        if !(m.tau > 0.0) || !(m.epsilon > 0.0) {
            return bad("tau and epsilon must be positive");
        }
        if m.grid_channels.is_empty() || m.grid_channels.contains(&0) {
            return bad("grid_channels must be nonempty and positive");
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(t.lr > 0.0) || t.stability_weight < 0.0 || t.grad_clip < 0.0 {
            return bad("lr must be positive; stability_weight and grad_clip non-negative");
        }
        let e = &self.eval;
        if !(e.train_fraction > 0.0 && e.val_fraction >= 0.0 && e.train_fraction + e.val_fraction < 1.0) {
            return bad("split fractions must leave a nonempty test share");
        }
        if e.folds < 2 {
            return bad("folds must be at least 2");
        }
        Ok(())
    }
}
