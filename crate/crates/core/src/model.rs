//! The full missing-modality model and its ablation variants.

use alloc::vec;
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::{Batch, ModalityKind};
use crate::encoders::{EncodedModality, Encoder, EncoderShape};
use crate::error::{Error, Result};
use crate::imputation::{impute, mean_neighbor, zero_fill, Gate, Gcn, Imputed};
use crate::interaction::{FusionInput, Interaction};
use crate::kernel::{cosine_matrix, stability_term, DeepKernel};
use crate::nn::Fwd;
use crate::similarity::{presence_mask, Fusion};
use crate::tensor::{ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// Deep-kernel similarity, graph aggregation and gated imputation.
    #[default]
    Full,
    /// Cosine similarity in place of the deep kernels; no stability loss.
    AblationCosine,
    /// Similarity-weighted neighbour mean in place of the graph
    /// convolution and gates.
    AblationMeanNeighbor,
    /// Missing modalities enter the transformer as zero vectors.
    ZeroImpute,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] = [
        ModelVariant::Full,
        ModelVariant::AblationCosine,
        ModelVariant::AblationMeanNeighbor,
        ModelVariant::ZeroImpute,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Full => "full",
            ModelVariant::AblationCosine => "ablation_cosine",
            ModelVariant::AblationMeanNeighbor => "ablation_mean_neighbor",
            ModelVariant::ZeroImpute => "zero_impute",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    fn uses_deep_kernel(self) -> bool {
        matches!(self, ModelVariant::Full | ModelVariant::AblationMeanNeighbor)
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub kinds: Vec<ModalityKind>,
    pub n_labels: usize,
    pub params: ParamStore,
    pub encoders: Vec<Encoder>,
    pub kernels: Vec<DeepKernel>,
    pub fusion: Option<Fusion>,
    pub gcn: Vec<Gcn>,
    pub gates: Vec<Gate>,
    pub interaction: Interaction,
}

/// Everything a forward pass produced, kept on one graph.
pub struct Forward<'a> {
    pub f: Fwd<'a>,
    /// `[B, |C|]` probabilities.
    pub probs: Var,
    /// Summed stability term; a constant zero for variants without it.
    pub stability: Var,
    pub encoded: Vec<EncodedModality>,
    /// Per-modality similarity matrices (empty for the zero-imputation
    /// control).
    pub similarities: Vec<Var>,
    pub fused_raw: Option<Var>,
    pub adjacency: Option<Var>,
    pub imputed: Vec<Imputed>,
    pub fusion_input: FusionInput,
    pub attention: Vec<Vec<Var>>,
    /// Number of per-batch bandwidths that fell back to σ = 1.
    pub bandwidth_fallbacks: usize,
}

impl Model {
    pub fn new(kinds: &[ModalityKind], n_labels: usize, config: &ModelConfig, seed: u64) -> Result<Self> {
        if kinds.is_empty() || n_labels == 0 {
            return Err(Error::InvalidConfig("model needs at least one modality and one label".into()));
        }
        let n = config.hidden_dim;
        if n == 0 || config.seq_heads == 0 || n % config.seq_heads != 0 || config.fusion_heads == 0 || n % config.fusion_heads != 0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "hidden_dim {n} must be a positive multiple of the head counts"
            )));
        }
        for k in kinds {
            k.validate()?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let shape = EncoderShape {
            hidden: n,
            seq_layers: config.seq_layers,
            seq_heads: config.seq_heads,
            ffn_mult: config.ffn_mult,
            grid_channels: &config.grid_channels,
        };
        let encoders = kinds
            .iter()
            .enumerate()
            .map(|(m, &k)| Encoder::new(&mut params, &alloc::format!("enc{m}"), k, &shape, &mut rng))
            .collect();
        let variant = config.variant;
        let kernels = if variant.uses_deep_kernel() {
            (0..kinds.len())
                .map(|m| {
                    DeepKernel::new(
                        &mut params,
                        &alloc::format!("kernel{m}"),
                        n,
                        config.delta_init,
                        config.bandwidth_fraction_k,
                        config.bandwidth_fraction_q,
                        &mut rng,
                    )
                })
                .collect()
        } else {
            Vec::new()
        };
        let fusion = (variant != ModelVariant::ZeroImpute).then(|| Fusion::new(&mut params, config.threshold_init, config.tau, config.epsilon));
        let (gcn, gates) = if variant == ModelVariant::Full || variant == ModelVariant::AblationCosine {
            (
                (0..kinds.len()).map(|m| Gcn::new(&mut params, &alloc::format!("gcn{m}"), n, &mut rng)).collect(),
                (0..kinds.len()).map(|m| Gate::new(&mut params, &alloc::format!("gate{m}"), n, &mut rng)).collect(),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        let interaction = Interaction::new(
            &mut params,
            kinds.len(),
            n,
            config.fusion_layers,
            config.fusion_heads,
            config.ffn_mult,
            n_labels,
            &mut rng,
        );
        Ok(Model {
            config: config.clone(),
            kinds: kinds.to_vec(),
            n_labels,
            params,
            encoders,
            kernels,
            fusion,
            gcn,
            gates,
            interaction,
        })
    }

    /// Rebuilds a model around previously trained parameters.
    pub fn from_params(kinds: &[ModalityKind], n_labels: usize, config: &ModelConfig, params: &ParamStore) -> Result<Self> {
        let mut model = Model::new(kinds, n_labels, config, 0)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    pub fn forward(&self, batch: &Batch, trainable: bool) -> Result<Forward<'_>> {
        if batch.modalities.len() != self.kinds.len() {
            return Err(Error::InvalidData(alloc::format!(
                "batch has {} modalities, model expects {}",
                batch.modalities.len(),
                self.kinds.len()
            )));
        }
        for (mb, kind) in batch.modalities.iter().zip(&self.kinds) {
            if mb.kind != *kind {
                return Err(Error::InvalidData(alloc::format!("modality {} kind mismatch", mb.modality_id)));
            }
        }
        let b = batch.size();
        for i in 0..b {
            if !batch.modalities.iter().any(|mb| mb.present[i]) {
                return Err(Error::InvalidData(alloc::format!("patient {} has no modality", batch.indices[i])));
            }
        }
        let mut f = Fwd::new(&self.params, trainable);
        let encoded: Vec<EncodedModality> = self
            .encoders
            .iter()
            .zip(&batch.modalities)
            .map(|(e, mb)| e.encode(&mut f, mb))
            .collect::<Result<_>>()?;
        let variant = self.variant();
        let mut similarities = Vec::new();
        let mut stability = f.g.constant(Tensor::scalar(0.0));
        let mut fallbacks = 0;
        match variant {
            ModelVariant::Full | ModelVariant::AblationMeanNeighbor => {
                for ((kernel, enc), mb) in self.kernels.iter().zip(&encoded).zip(&batch.modalities) {
                    let out = kernel.forward(&mut f, enc.summary, &mb.present)?;
                    fallbacks += usize::from(out.sigma_k.warning.is_some()) + usize::from(out.sigma_q.warning.is_some());
                    let term = stability_term(&mut f, enc.summary, out.phi, &mb.present)?;
                    stability = f.g.add(stability, term)?;
                    similarities.push(out.matrix);
                }
            }
            ModelVariant::AblationCosine => {
                for enc in &encoded {
                    similarities.push(cosine_matrix(&mut f, enc.summary)?);
                }
            }
            ModelVariant::ZeroImpute => {}
        }
        let (fused_raw, adjacency) = match &self.fusion {
            Some(fusion) => {
                let masks: Vec<Tensor> = batch.modalities.iter().map(|mb| presence_mask(&mb.present)).collect();
                let raw = fusion.fuse(&mut f, &similarities, &masks)?;
                let adj = fusion.threshold(&mut f, raw)?;
                (Some(raw), Some(adj))
            }
            None => (None, None),
        };
        let mut imputed = Vec::with_capacity(encoded.len());
        for (m, (enc, mb)) in encoded.iter().zip(&batch.modalities).enumerate() {
            let h = enc.summary;
            let item = match variant {
                ModelVariant::Full | ModelVariant::AblationCosine => {
                    let adj = adjacency.expect("fusion exists");
                    let agg = self.gcn[m].propagate(&mut f, h, &mb.present, adj, self.config.row_normalize_adj)?;
                    let (alpha, beta) = self.gates[m].gates(&mut f, h, agg)?;
                    let output = impute(&mut f, h, agg, alpha, beta, &mb.present)?;
                    Imputed {
                        output,
                        aggregated: Some(agg),
                        alpha: Some(alpha),
                        beta: Some(beta),
                    }
                }
                ModelVariant::AblationMeanNeighbor => {
                    let adj = adjacency.expect("fusion exists");
                    let (output, mean) = mean_neighbor(&mut f, h, &mb.present, adj)?;
                    Imputed {
                        output,
                        aggregated: Some(mean),
                        alpha: None,
                        beta: None,
                    }
                }
                ModelVariant::ZeroImpute => Imputed {
                    output: zero_fill(&mut f, h, &mb.present)?,
                    aggregated: None,
                    alpha: None,
                    beta: None,
                },
            };
            imputed.push(item);
        }
        let outputs: Vec<Var> = imputed.iter().map(|i| i.output).collect();
        let fusion_input = self.interaction.assemble(&mut f, &outputs, &encoded, &batch.modalities, self.config.token_mode)?;
        let (z, attention) = self.interaction.interact(&mut f, &fusion_input)?;
        let probs = self.interaction.predict(&mut f, z)?;
        Ok(Forward {
            f,
            probs,
            stability,
            encoded,
            similarities,
            fused_raw,
            adjacency,
            imputed,
            fusion_input,
            attention,
            bandwidth_fallbacks: fallbacks,
        })
    }

    /// Probabilities for a batch, `B × |C|` row-major.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let fw = self.forward(batch, false)?;
        Ok(fw.f.g.value(fw.probs).data().to_vec())
    }

    /// Parameter-name groups, used to check that every part of the model
    /// receives gradient.
    pub fn parameter_groups(&self) -> Vec<(&'static str, Vec<crate::tensor::ParamId>)> {
        let prefixes: [(&'static str, &str); 6] = [
            ("encoders", "enc"),
            ("kernels", "kernel"),
            ("threshold", "fusion.lambda"),
            ("gcn", "gcn"),
            ("gates", "gate"),
            ("transformer", "fusion."),
        ];
        let mut out: Vec<(&'static str, Vec<_>)> = prefixes.iter().map(|(g, _)| (*g, vec![])).collect();
        for (id, name, _) in self.params.iter() {
            if let Some(k) = prefixes.iter().position(|(_, p)| name.starts_with(p)) {
                out[k].1.push(id);
            }
        }
        out.retain(|(_, ids)| !ids.is_empty());
        out
    }
}
