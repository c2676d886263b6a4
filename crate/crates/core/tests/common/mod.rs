#![allow(dead_code)]

use modalmend_core::data::{generate, inject_missingness, SyntheticSpec};
use modalmend_core::{Dataset, ModalityKind, ModelConfig};

pub fn kinds() -> Vec<ModalityKind> {
    vec![
        ModalityKind::Vector { dim: 5 },
        ModalityKind::Sequence { len: 4, dim: 3 },
        ModalityKind::Grid { channels: 1, height: 6, width: 6 },
    ]
}

pub fn dataset(n: usize, rates: &[f64], seed: u64) -> Dataset {
    let spec = SyntheticSpec::random(&kinds(), 4, 2, 0.2, seed).unwrap();
    let d = generate(&spec, n, seed + 1).unwrap();
    inject_missingness(&d, rates, seed + 2).unwrap()
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        seq_layers: 1,
        seq_heads: 2,
        fusion_layers: 2,
        fusion_heads: 2,
        ffn_mult: 2,
        grid_channels: vec![2, 3],
        ..ModelConfig::default()
    }
}
