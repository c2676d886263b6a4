//! Per-modality encoders mapping raw inputs to `N_h`-wide latents.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::data::{ModalityBatch, ModalityKind};
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_encoding, Fwd, Linear, Mlp2, TransformerLayer};
use crate::tensor::{ParamStore, Tensor, Var};

/// Encoder output: `tokens` is `[B, T, N_h]`, `summary` is `[B, N_h]`.
#[derive(Clone, Copy, Debug)]
pub struct EncodedModality {
    pub tokens: Var,
    pub summary: Var,
}

#[derive(Clone, Debug)]
pub struct VectorEncoder {
    pub mlp: Mlp2,
}

#[derive(Clone, Debug)]
pub struct SequenceEncoder {
    pub input: Linear,
    pub layers: Vec<TransformerLayer>,
    pub len: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub kernel: Linear,
    pub out_channels: usize,
}

#[derive(Clone, Debug)]
pub struct GridEncoder {
    pub convs: Vec<ConvLayer>,
    pub projection: Linear,
}

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

fn conv_out(size: usize) -> usize {
    (size + 2 * PAD - KERNEL) / STRIDE + 1
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Vector(VectorEncoder),
    Sequence(SequenceEncoder),
    Grid(GridEncoder),
}

/// Encoder hyperparameters taken from the model configuration.
#[derive(Clone, Debug)]
pub struct EncoderShape<'a> {
    pub hidden: usize,
    pub seq_layers: usize,
    pub seq_heads: usize,
    pub ffn_mult: usize,
    pub grid_channels: &'a [usize],
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, kind: ModalityKind, shape: &EncoderShape, rng: &mut R) -> Self {
        let n = shape.hidden;
        match kind {
            ModalityKind::Vector { dim } => Encoder::Vector(VectorEncoder {
                mlp: Mlp2::new(store, name, [dim, n, n], rng),
            }),
            ModalityKind::Sequence { len, dim } => Encoder::Sequence(SequenceEncoder {
                input: Linear::new(store, &alloc::format!("{name}.in"), dim, n, true, rng),
                layers: (0..shape.seq_layers)
                    .map(|l| TransformerLayer::new(store, &alloc::format!("{name}.layer{l}"), n, shape.seq_heads, shape.ffn_mult, rng))
                    .collect(),
                len,
                hidden: n,
            }),
            ModalityKind::Grid { channels, height, width } => {
                let mut c_in = channels;
                let (mut h, mut w) = (height, width);
                let mut convs = Vec::new();
                for (l, &c_out) in shape.grid_channels.iter().enumerate() {
                    convs.push(ConvLayer {
                        kernel: Linear::new(store, &alloc::format!("{name}.conv{l}"), KERNEL * KERNEL * c_in, c_out, true, rng),
                        out_channels: c_out,
                    });
                    c_in = c_out;
                    h = conv_out(h);
                    w = conv_out(w);
                }
                Encoder::Grid(GridEncoder {
                    convs,
                    projection: Linear::new(store, &alloc::format!("{name}.proj"), h * w * c_in, n, true, rng),
                })
            }
        }
    }

    /// Encodes a batch. Every row is encoded independently, including
    /// placeholder rows, whose outputs are shielded downstream.
    pub fn encode(&self, f: &mut Fwd, batch: &ModalityBatch) -> Result<EncodedModality> {
        let shape = batch.values.shape();
        let mut expect = vec![batch.batch_size()];
        expect.extend(batch.kind.item_shape());
        if shape != expect.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "encode",
                lhs: shape.to_vec(),
                rhs: expect,
            });
        }
        let b = batch.batch_size();
        match self {
            Encoder::Vector(enc) => {
                let x = f.g.constant(batch.values.clone());
                let summary = enc.mlp.forward(f, x)?;
                let n = f.g.shape(summary)[1];
                let tokens = f.g.reshape(summary, &[b, 1, n])?;
                Ok(EncodedModality { tokens, summary })
            }
            Encoder::Sequence(enc) => {
                let t = enc.len;
                let n = enc.hidden;
                let x = f.g.constant(batch.values.clone());
                let h = enc.input.forward(f, x)?;
                let pe = f.g.constant(tile(&sinusoidal_encoding(t, n), b));
                let mut z = f.g.add(h, pe)?;
                for layer in &enc.layers {
                    z = layer.forward(f, z, None)?.0;
                }
                let last = f.g.slice(z, 1, t - 1, 1)?;
                let summary = f.g.reshape(last, &[b, n])?;
                Ok(EncodedModality { tokens: z, summary })
            }
            Encoder::Grid(enc) => {
                let (c, h, w) = (shape[1], shape[2], shape[3]);
                let mut x = f.g.constant(channels_last(&batch.values, b, c, h, w));
                let (mut hh, mut ww) = (h, w);
                for conv in &enc.convs {
                    let cols = f.g.im2col(x, KERNEL, STRIDE, PAD)?;
                    let y = conv.kernel.forward(f, cols)?;
                    x = f.g.relu(y);
                    hh = conv_out(hh);
                    ww = conv_out(ww);
                    x = f.g.reshape(x, &[b, hh, ww, conv.out_channels])?;
                }
                let flat_len = f.g.value(x).numel() / b;
                let flat = f.g.reshape(x, &[b, flat_len])?;
                let summary = enc.projection.forward(f, flat)?;
                let n = f.g.shape(summary)[1];
                let tokens = f.g.reshape(summary, &[b, 1, n])?;
                Ok(EncodedModality { tokens, summary })
            }
        }
    }
}

pub(crate) fn tile(t: &Tensor, b: usize) -> Tensor {
    let mut shape = vec![b];
    shape.extend_from_slice(t.shape());
    let mut data = Vec::with_capacity(b * t.numel());
    for _ in 0..b {
        data.extend_from_slice(t.data());
    }
    Tensor::new(shape, data).expect("tiled shape")
}

fn channels_last(x: &Tensor, b: usize, c: usize, h: usize, w: usize) -> Tensor {
    let src = x.data();
    let mut data = vec![0.0; src.len()];
    for bi in 0..b {
        for ci in 0..c {
            for yi in 0..h {
                for xi in 0..w {
                    data[((bi * h + yi) * w + xi) * c + ci] = src[((bi * c + ci) * h + yi) * w + xi];
                }
            }
        }
    }
    Tensor::new(vec![b, h, w, c], data).expect("same element count")
}
