//! Token assembly, the multimodal transformer and the multi-label head.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::config::TokenMode;
use crate::data::ModalityBatch;
use crate::encoders::EncodedModality;
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_encoding, Fwd, TransformerLayer};
use crate::tensor::{Expand, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Interaction {
    pub cls: ParamId,
    pub type_embeddings: Vec<ParamId>,
    pub layers: Vec<TransformerLayer>,
    pub w_final: ParamId,
    pub hidden: usize,
}

/// Assembled transformer input.
///
/// Every patient shares the same token layout: the classification token,
/// then one block per modality. A present sequential modality in sequence
/// mode fills its whole block; a patient missing it gets padding keys that
/// attention ignores, followed by the single imputed token.
#[derive(Clone, Debug)]
pub struct FusionInput {
    /// `[B, T_total, N_h]`.
    pub tokens: Var,
    /// `B × T_total`; false marks padding keys.
    pub key_mask: Vec<bool>,
    /// Modality of each position, `None` for the classification token.
    pub token_modality: Vec<Option<usize>>,
}

impl FusionInput {
    pub fn width(&self) -> usize {
        self.token_modality.len()
    }

    /// Positions that carry a real token for patient `i`.
    pub fn real_positions(&self, i: usize) -> Vec<usize> {
        let t = self.width();
        (0..t).filter(|&p| self.key_mask[i * t + p]).collect()
    }
}

impl Interaction {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, modalities: usize, hidden: usize, layers: usize, heads: usize, ffn_mult: usize, n_labels: usize, rng: &mut R) -> Self {
        Interaction {
            cls: store.insert_uniform("fusion.cls", &[hidden], hidden, rng),
            type_embeddings: (0..modalities).map(|m| store.insert_uniform(alloc::format!("fusion.type{m}"), &[hidden], hidden, rng)).collect(),
            layers: (0..layers)
                .map(|l| TransformerLayer::new(store, &alloc::format!("fusion.layer{l}"), hidden, heads, ffn_mult, rng))
                .collect(),
            w_final: store.insert_uniform("fusion.w_final", &[hidden, n_labels], hidden, rng),
            hidden,
        }
    }

    pub fn assemble(&self, f: &mut Fwd, imputed: &[Var], encoded: &[EncodedModality], batches: &[ModalityBatch], mode: TokenMode) -> Result<FusionInput> {
        if imputed.len() != batches.len() || encoded.len() != batches.len() || batches.len() != self.type_embeddings.len() {
            return Err(Error::invalid("assemble", "modality counts disagree"));
        }
        let b = batches.first().map_or(0, ModalityBatch::batch_size);
        let n = self.hidden;
        let cls = f.p(self.cls);
        let cls = f.g.expand(cls, Expand::Rows, &[b, 1, n])?;
        let mut blocks = vec![cls];
        let mut widths = vec![1usize];
        let mut token_modality = vec![None];
        for (m, batch) in batches.iter().enumerate() {
            let fin = f.g.reshape(imputed[m], &[b, 1, n])?;
            let t = match (mode, batch.kind) {
                (TokenMode::Sequence, crate::data::ModalityKind::Sequence { len, .. }) => len,
                _ => 1,
            };
            let block = if t == 1 {
                fin
            } else {
                let head = f.g.slice(encoded[m].tokens, 1, 0, t - 1)?;
                let block = f.g.concat(&[head, fin], 1)?;
                let pe = sinusoidal_encoding(t, n);
                let mut keep = Vec::with_capacity(b * t * n);
                let mut shift = Vec::with_capacity(b * t * n);
                for &p in &batch.present {
                    for pos in 0..t {
                        let k = if p || pos == t - 1 { 1.0 } else { 0.0 };
                        keep.extend(core::iter::repeat(k).take(n));
                        if p {
                            shift.extend_from_slice(&pe.data()[pos * n..(pos + 1) * n]);
                        } else {
                            shift.extend(core::iter::repeat(0.0).take(n));
                        }
                    }
                }
                let keep = f.g.constant(Tensor::new(vec![b, t, n], keep)?);
                let shift = f.g.constant(Tensor::new(vec![b, t, n], shift)?);
                let block = f.g.mul(block, keep)?;
                f.g.add(block, shift)?
            };
            let te = f.p(self.type_embeddings[m]);
            let te = f.g.expand(te, Expand::Rows, &[b, t, n])?;
            blocks.push(f.g.add(block, te)?);
            widths.push(t);
            token_modality.extend(core::iter::repeat(Some(m)).take(t));
        }
        let tokens = if blocks.len() == 1 { blocks[0] } else { f.g.concat(&blocks, 1)? };
        let total: usize = widths.iter().sum();
        let mut key_mask = Vec::with_capacity(b * total);
        for i in 0..b {
            key_mask.push(true);
            for (m, batch) in batches.iter().enumerate() {
                let t = widths[m + 1];
                for pos in 0..t {
                    key_mask.push(batch.present[i] || pos == t - 1);
                }
            }
        }
        Ok(FusionInput {
            tokens,
            key_mask,
            token_modality,
        })
    }

    /// Runs the transformer stack. Returns the final tokens and, per layer,
    /// one `[B, T, T]` attention tensor per head.
    pub fn interact(&self, f: &mut Fwd, input: &FusionInput) -> Result<(Var, Vec<Vec<Var>>)> {
        let mask = if input.key_mask.iter().all(|&k| k) {
            None
        } else {
            Some(input.key_mask.as_slice())
        };
        let mut z = input.tokens;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, weights) = layer.forward(f, z, mask)?;
            z = next;
            attention.push(weights);
        }
        Ok((z, attention))
    }

    /// `sigmoid(z[:, 0, :] W_final)`, shape `[B, |C|]`.
    pub fn predict(&self, f: &mut Fwd, z: Var) -> Result<Var> {
        let b = f.g.shape(z)[0];
        let first = f.g.slice(z, 1, 0, 1)?;
        let first = f.g.reshape(first, &[b, self.hidden])?;
        let w = f.p(self.w_final);
        let logits = f.g.matmul(first, w)?;
        Ok(f.g.sigmoid(logits))
    }
}

/// The attention block of patient `i` restricted to its real tokens,
/// together with the positions kept.
pub fn patient_attention(weights: &Tensor, input: &FusionInput, i: usize) -> (Vec<usize>, Vec<f64>) {
    let t = input.width();
    let pos = input.real_positions(i);
    let mut out = Vec::with_capacity(pos.len() * pos.len());
    for &r in &pos {
        for &c in &pos {
            out.push(weights.data()[(i * t + r) * t + c]);
        }
    }
    (pos, out)
}

