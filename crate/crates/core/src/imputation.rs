//! Neighbour aggregation over the fused patient graph and gated
//! imputation of the per-modality latents.

use alloc::vec::Vec;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::mask_rows;
use crate::nn::Fwd;
use crate::tensor::{Expand, ParamId, ParamStore, Tensor, Var};

/// Two-layer graph convolution weights (no bias) for one modality.
#[derive(Clone, Debug)]
pub struct Gcn {
    pub w0: ParamId,
    pub w1: ParamId,
}

/// Gate projections for one modality.
#[derive(Clone, Debug)]
pub struct Gate {
    pub wo: ParamId,
    pub ws: ParamId,
}

/// Graph handles for one modality after imputation.
#[derive(Clone, Copy, Debug)]
pub struct Imputed {
    /// `[B, N_h]` representation handed to the multimodal transformer.
    pub output: Var,
    /// Neighbour-aggregated `Ĥ`, `[B, N_h]`.
    pub aggregated: Option<Var>,
    /// Normalized gates, `[B, 1]` each.
    pub alpha: Option<Var>,
    pub beta: Option<Var>,
}

fn check_square(op: &'static str, f: &Fwd, adj: Var, b: usize) -> Result<()> {
    let s = f.g.shape(adj);
    if s != [b, b] {
        return Err(Error::ShapeMismatch {
            op,
            lhs: s.to_vec(),
            rhs: alloc::vec![b, b],
        });
    }
    Ok(())
}

/// Divides each row by its sum; all-zero rows stay zero.
pub(crate) fn row_normalize(f: &mut Fwd, w: Var) -> Result<Var> {
    let shape = f.g.shape(w).to_vec();
    let sums = f.g.sum_last(w);
    let guard: Vec<f64> = f.g.value(sums).data().iter().map(|&s| if s == 0.0 { 1.0 } else { 0.0 }).collect();
    let guard = f.g.constant(Tensor::new(f.g.shape(sums).to_vec(), guard)?);
    let denom = f.g.add(sums, guard)?;
    let denom = f.g.expand(denom, Expand::Cols, &shape)?;
    f.g.div(w, denom)
}

impl Gcn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, hidden: usize, rng: &mut R) -> Self {
        Gcn {
            w0: store.insert_uniform(alloc::format!("{name}.w0"), &[hidden, hidden], hidden, rng),
            w1: store.insert_uniform(alloc::format!("{name}.w1"), &[hidden, hidden], hidden, rng),
        }
    }

    /// `ReLU(Π̃ ReLU(Π̃ H W0) W1)` with the rows of absent patients zeroed
    /// first so placeholder content cannot reach neighbours.
    pub fn propagate(&self, f: &mut Fwd, h: Var, present: &[bool], adj: Var, normalize: bool) -> Result<Var> {
        check_square("propagate", f, adj, present.len())?;
        let adj = if normalize { row_normalize(f, adj)? } else { adj };
        let hz = mask_rows(f, h, present)?;
        let w0 = f.p(self.w0);
        let w1 = f.p(self.w1);
        let x = f.g.matmul(adj, hz)?;
        let x = f.g.matmul(x, w0)?;
        let x = f.g.relu(x);
        let x = f.g.matmul(adj, x)?;
        let x = f.g.matmul(x, w1)?;
        Ok(f.g.relu(x))
    }
}

impl Gate {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, hidden: usize, rng: &mut R) -> Self {
        Gate {
            wo: store.insert_uniform(alloc::format!("{name}.wo"), &[hidden, 1], hidden, rng),
            ws: store.insert_uniform(alloc::format!("{name}.ws"), &[hidden, 1], hidden, rng),
        }
    }

    /// Returns `(α, β)` with `α = a/(a+b)`, `β = 1 − α`, where
    /// `a = sigmoid(H Wo)` and `b = sigmoid(Ĥ Ws)`.
    pub fn gates(&self, f: &mut Fwd, h: Var, aggregated: Var) -> Result<(Var, Var)> {
        let wo = f.p(self.wo);
        let ws = f.p(self.ws);
        let a = f.g.matmul(h, wo)?;
        let a = f.g.sigmoid(a);
        let b = f.g.matmul(aggregated, ws)?;
        let b = f.g.sigmoid(b);
        let sum = f.g.add(a, b)?;
        let alpha = f.g.div(a, sum)?;
        let beta = f.g.one_minus(alpha);
        Ok((alpha, beta))
    }
}

fn presence_columns(f: &mut Fwd, present: &[bool], width: usize) -> Result<(Var, Var)> {
    let mut p = Vec::with_capacity(present.len() * width);
    let mut q = Vec::with_capacity(present.len() * width);
    for &v in present {
        for _ in 0..width {
            p.push(if v { 1.0 } else { 0.0 });
            q.push(if v { 0.0 } else { 1.0 });
        }
    }
    let shape = alloc::vec![present.len(), width];
    let p = f.g.constant(Tensor::new(shape.clone(), p)?);
    let q = f.g.constant(Tensor::new(shape, q)?);
    Ok((p, q))
}

/// Present rows get `α·h + β·ĥ`, missing rows get `ĥ`.
pub fn impute(f: &mut Fwd, h: Var, aggregated: Var, alpha: Var, beta: Var, present: &[bool]) -> Result<Var> {
    let shape = f.g.shape(h).to_vec();
    if f.g.shape(aggregated) != shape.as_slice() || shape[0] != present.len() {
        return Err(Error::ShapeMismatch {
            op: "impute",
            lhs: shape,
            rhs: f.g.shape(aggregated).to_vec(),
        });
    }
    let a = f.g.expand(alpha, Expand::Cols, &shape)?;
    let b = f.g.expand(beta, Expand::Cols, &shape)?;
    let own = f.g.mul(a, h)?;
    let nb = f.g.mul(b, aggregated)?;
    let blend = f.g.add(own, nb)?;
    let (p, q) = presence_columns(f, present, shape[1])?;
    let kept = f.g.mul(p, blend)?;
    let filled = f.g.mul(q, aggregated)?;
    f.g.add(kept, filled)
}

/// Similarity-weighted mean of the valid neighbours' latents, used in place
/// of the graph convolution and gates. Present rows pass through.
pub fn mean_neighbor(f: &mut Fwd, h: Var, present: &[bool], adj: Var) -> Result<(Var, Var)> {
    let b = present.len();
    check_square("mean_neighbor", f, adj, b)?;
    let mut cols = Vec::with_capacity(b * b);
    for _ in 0..b {
        cols.extend(present.iter().map(|&p| if p { 1.0 } else { 0.0 }));
    }
    let cols = f.g.constant(Tensor::new(alloc::vec![b, b], cols)?);
    let w = f.g.mul(adj, cols)?;
    let w = row_normalize(f, w)?;
    let hz = mask_rows(f, h, present)?;
    let mean = f.g.matmul(w, hz)?;
    let width = f.g.shape(h)[1];
    let (p, q) = presence_columns(f, present, width)?;
    let kept = f.g.mul(p, h)?;
    let filled = f.g.mul(q, mean)?;
    Ok((f.g.add(kept, filled)?, mean))
}

/// Present rows pass through, missing rows become zero vectors.
pub fn zero_fill(f: &mut Fwd, h: Var, present: &[bool]) -> Result<Var> {
    mask_rows(f, h, present)
}
