//! Resolved run configuration and its layering.
//!
//! A run's configuration is assembled from, in increasing precedence:
//! built-in defaults, the `MODALMEND_SEED` environment variable, the
//! configuration stored in a checkpoint (for commands that load one), a
//! `--config` file and finally command-line flags. Layers are merged as JSON
//! objects, so a config file only needs the keys it changes. The merged
//! document must deserialize into [`RunConfig`] with no unknown keys.

use std::path::PathBuf;

use modalmend_core::intuition::IntuitionConfig;
use modalmend_core::{EvalConfig, ExperimentConfig, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::Failure;

pub const SEED_ENV: &str = "MODALMEND_SEED";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub patients: usize,
    /// Comma-separated modality list such as `vec:10,seq:6x8,grid:8x8`.
    pub modalities: String,
    pub labels: usize,
    pub latent_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            patients: 512,
            modalities: "vec:10,seq:6x8,grid:8x8".into(),
            labels: 3,
            latent_dim: 8,
            noise: 0.3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    /// Extra missing rate applied to every modality, one run group per rate.
    pub rates: Vec<f64>,
    /// Number of seeds per rate; seed `s` offsets the train, split and
    /// injection seeds by `s`.
    pub seeds: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            rates: vec![0.3, 0.4, 0.5, 0.6],
            seeds: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Raw observations of the two modalities.
    #[default]
    Observed,
    /// Latents of unimodal classifiers trained on each modality.
    Trained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntuitionSettings {
    /// The two modalities compared.
    pub pair: [usize; 2],
    pub representation: Representation,
    /// Cap on the number of paired patients used (the first ones in order).
    pub max_patients: Option<usize>,
    pub repeats: usize,
    /// Noise level relative to each feature's standard deviation.
    pub noise_std: f64,
    pub seed: u64,
}

impl IntuitionSettings {
    pub fn experiment(&self) -> IntuitionConfig {
        IntuitionConfig {
            n_repeats: self.repeats,
            noise_std: self.noise_std,
            seed: self.seed,
        }
    }
}

impl Default for IntuitionSettings {
    fn default() -> Self {
        IntuitionSettings {
            pair: [0, 1],
            representation: Representation::Observed,
            max_patients: None,
            repeats: IntuitionConfig::default().n_repeats,
            noise_std: IntuitionConfig::default().noise_std,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionSettings {
    /// Patients to export; empty means the first `limit` test patients.
    pub patients: Vec<usize>,
    pub limit: usize,
}

impl Default for AttentionSettings {
    fn default() -> Self {
        AttentionSettings { patients: Vec::new(), limit: 4 }
    }
}

/// Everything a command needs, serialized as `config.json` in each output
/// directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Per-modality missing rates: generation rates for `synth`, extra
    /// missingness injected after loading for the other commands.
    pub missing: Option<Vec<f64>>,
    pub synth: SynthSettings,
    pub sweep: SweepSettings,
    pub intuition: IntuitionSettings,
    pub attention: AttentionSettings,
}

impl RunConfig {
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model.clone(),
            train: self.train.clone(),
            eval: self.eval.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Sets every seed in the document to `seed`.
pub fn seed_layer(seed: u64) -> Value {
    serde_json::json!({
        "train": { "seed": seed },
        "eval": { "split_seed": seed },
        "synth": { "seed": seed },
        "intuition": { "seed": seed },
    })
}

pub fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Failure::Config(format!("{SEED_ENV}: {e}"))),
    }
}

/// Recursively overlays `top` onto `base`. Objects merge key by key, any
/// other value replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Inserts `value` at a dotted path such as `model.hidden_dim`.
pub fn set_path(doc: &mut Value, path: &str, value: Value) {
    let mut cur = doc;
    let mut parts = path.split('.').peekable();
    while let Some(key) = parts.next() {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().expect("object");
        if parts.peek().is_none() {
            obj.insert(key.to_string(), value);
            return;
        }
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
}

/// Merges `layers` over the defaults and decodes the result.
pub fn resolve(layers: Vec<Value>) -> Result<RunConfig, Failure> {
    let mut doc = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    for layer in layers {
        merge(&mut doc, layer);
    }
    let config: RunConfig = serde_json::from_value(doc).map_err(|e| Failure::Config(e.to_string()))?;
    config.experiment().validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(config)
}

pub fn read_config_file(path: &std::path::Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(Failure::Config(format!("{}: expected a JSON object", path.display())));
    }
    Ok(value)
}

/// Dotted paths of every leaf where `a` and `b` differ.
pub fn differing_keys(a: &Value, b: &Value, prefix: &str) -> Vec<String> {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            let null = Value::Null;
            keys.into_iter()
                .flat_map(|k| {
                    let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    differing_keys(x.get(k).unwrap_or(&null), y.get(k).unwrap_or(&null), &path)
                })
                .collect()
        }
        _ if a == b => Vec::new(),
        _ => vec![prefix.to_string()],
    }
}
