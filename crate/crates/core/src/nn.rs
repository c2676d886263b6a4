//! Layers shared by the encoders, the deep kernels and the multimodal
//! transformer.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::error::Result;
use crate::math;
use crate::tensor::{Expand, Graph, ParamId, ParamStore, Tensor, Var};

/// Layer-norm epsilon used inside models.
pub const LN_EPS: f64 = 1e-6;

/// A graph under construction together with the parameters it reads.
pub struct Fwd<'a> {
    pub g: Graph,
    pub store: &'a ParamStore,
    pub trainable: bool,
}

impl<'a> Fwd<'a> {
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Fwd {
            g: Graph::new(),
            store,
            trainable,
        }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        self.g.param(self.store, id, self.trainable)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut R) -> Self {
        let w = store.insert_uniform(alloc::format!("{name}.w"), &[fan_in, fan_out], fan_in, rng);
        let b = bias.then(|| store.insert_uniform(alloc::format!("{name}.b"), &[fan_out], fan_in, rng));
        Linear { w, b, fan_in, fan_out }
    }

    /// Applies `x W + b` over the last axis of `x`.
    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let shape = f.g.shape(x).to_vec();
        let rows = shape.iter().product::<usize>() / self.fan_in.max(1);
        let flat = if shape.len() == 2 { x } else { f.g.reshape(x, &[rows, self.fan_in])? };
        let w = f.p(self.w);
        let mut y = f.g.matmul(flat, w)?;
        if let Some(b) = self.b {
            let b = f.p(b);
            let bb = f.g.expand(b, Expand::Rows, &[rows, self.fan_out])?;
            y = f.g.add(y, bb)?;
        }
        if shape.len() == 2 {
            Ok(y)
        } else {
            let mut out = shape;
            *out.last_mut().expect("rank >= 1") = self.fan_out;
            f.g.reshape(y, &out)
        }
    }
}

/// Two linear layers with a ReLU in between.
#[derive(Clone, Debug)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dims: [usize; 3], rng: &mut R) -> Self {
        Mlp2 {
            first: Linear::new(store, &alloc::format!("{name}.0"), dims[0], dims[1], true, rng),
            second: Linear::new(store, &alloc::format!("{name}.1"), dims[1], dims[2], true, rng),
        }
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let h = self.first.forward(f, x)?;
        let h = f.g.relu(h);
        self.second.forward(f, h)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.insert(alloc::format!("{name}.gain"), Tensor::full(&[dim], 1.0)),
            bias: store.insert(alloc::format!("{name}.bias"), Tensor::zeros(&[dim])),
            dim,
        }
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let shape = f.g.shape(x).to_vec();
        let n = f.g.layer_norm(x, LN_EPS)?;
        let gain = f.p(self.gain);
        let gain = f.g.expand(gain, Expand::Rows, &shape)?;
        let bias = f.p(self.bias);
        let bias = f.g.expand(bias, Expand::Rows, &shape)?;
        let y = f.g.mul(n, gain)?;
        f.g.add(y, bias)
    }
}

/// Multi-head self-attention over `[B, T, N]` token batches.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Self {
        MultiHeadAttention {
            heads,
            query: Linear::new(store, &alloc::format!("{name}.q"), dim, dim, true, rng),
            key: Linear::new(store, &alloc::format!("{name}.k"), dim, dim, true, rng),
            value: Linear::new(store, &alloc::format!("{name}.v"), dim, dim, true, rng),
            output: Linear::new(store, &alloc::format!("{name}.o"), dim, dim, true, rng),
        }
    }

    /// Returns the attended tokens and one `[B, T, T]` weight tensor per head.
    /// `key_mask` (length `B·T`) hides padding keys.
    pub fn forward(&self, f: &mut Fwd, x: Var, key_mask: Option<&[bool]>) -> Result<(Var, Vec<Var>)> {
        let shape = f.g.shape(x).to_vec();
        let (b, t, n) = (shape[0], shape[1], shape[2]);
        let d = n / self.heads;
        let q = self.query.forward(f, x)?;
        let k = self.key.forward(f, x)?;
        let v = self.value.forward(f, x)?;
        let score_mask: Option<Vec<bool>> = key_mask.map(|m| {
            let mut out = Vec::with_capacity(b * t * t);
            for bi in 0..b {
                for _ in 0..t {
                    out.extend_from_slice(&m[bi * t..(bi + 1) * t]);
                }
            }
            out
        });
        let scale = 1.0 / math::sqrt(d as f64);
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = f.g.slice(q, 2, h * d, d)?;
            let kh = f.g.slice(k, 2, h * d, d)?;
            let vh = f.g.slice(v, 2, h * d, d)?;
            let kt = f.g.transpose(kh)?;
            let scores = f.g.bmm(qh, kt)?;
            let scores = f.g.scale(scores, scale);
            let attn = f.g.softmax(scores, score_mask.as_deref())?;
            outs.push(f.g.bmm(attn, vh)?);
            weights.push(attn);
        }
        let cat = if outs.len() == 1 { outs[0] } else { f.g.concat(&outs, 2)? };
        let y = self.output.forward(f, cat)?;
        Ok((y, weights))
    }
}

/// Post-norm transformer layer:
/// `z̃ = LN(z + MHSA(z))`, `z' = LN(z̃ + FFN(z̃))`.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: Mlp2,
    pub norm2: LayerNorm,
}

impl TransformerLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ffn_mult: usize, rng: &mut R) -> Self {
        TransformerLayer {
            attention: MultiHeadAttention::new(store, &alloc::format!("{name}.attn"), dim, heads, rng),
            norm1: LayerNorm::new(store, &alloc::format!("{name}.ln1"), dim),
            ffn: Mlp2::new(store, &alloc::format!("{name}.ffn"), [dim, ffn_mult.max(1) * dim, dim], rng),
            norm2: LayerNorm::new(store, &alloc::format!("{name}.ln2"), dim),
        }
    }

    pub fn forward(&self, f: &mut Fwd, z: Var, key_mask: Option<&[bool]>) -> Result<(Var, Vec<Var>)> {
        let (att, weights) = self.attention.forward(f, z, key_mask)?;
        let r = f.g.add(z, att)?;
        let zt = self.norm1.forward(f, r)?;
        let ff = self.ffn.forward(f, zt)?;
        let r = f.g.add(zt, ff)?;
        Ok((self.norm2.forward(f, r)?, weights))
    }
}

/// Sinusoidal positional encoding `[len, dim]`.
pub fn sinusoidal_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / math::powf(10000.0, 2.0 * pair / dim as f64);
            data[pos * dim + i] = if i % 2 == 0 { math::sin(angle) } else { math::cos(angle) };
        }
    }
    Tensor::new(vec![len, dim], data).expect("consistent")
}
