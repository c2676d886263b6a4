//! Task-guided deep kernels.
//!
//! For one modality with latents `H` the similarity of patients `i, j` is
//!
//! ```text
//! Π[i,j] = ((1 − δ)·k(φ(h_i), φ(h_j)) + δ) · q(h_i, h_j)
//! ```
//!
//! where `k` and `q` are RBF kernels whose bandwidths are fractions of the
//! mean pairwise distance among the batch's valid rows, `φ` is a learned
//! two-layer map and `δ = sigmoid(delta_raw)` keeps the raw-space kernel in
//! play. Bandwidths are recomputed per batch and act as constants for
//! differentiation.

use alloc::vec::Vec;
use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::nn::{Fwd, Mlp2};
use crate::tensor::{Expand, ParamId, ParamStore, Tensor, Var};

/// Gaussian RBF `exp(−‖a − b‖² / 2σ²)`.
pub fn rbf(a: &[f64], b: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("rbf", alloc::format!("sigma must be positive, got {sigma}")));
    }
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "rbf",
            lhs: alloc::vec![a.len()],
            rhs: alloc::vec![b.len()],
        });
    }
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(math::exp(-d2 / (2.0 * sigma * sigma)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BandwidthWarning {
    /// Fewer than two valid rows.
    TooFewRows,
    /// All valid rows coincide.
    ZeroSpread,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bandwidth {
    pub sigma: f64,
    pub warning: Option<BandwidthWarning>,
}

/// `fraction ×` the mean Euclidean distance over pairs of valid rows of a
/// `B × N` matrix, falling back to `σ = 1` for degenerate batches.
pub fn bandwidth_from_batch(h: &Tensor, valid: &[bool], fraction: f64) -> Result<Bandwidth> {
    if h.rank() != 2 || h.shape()[0] != valid.len() {
        return Err(Error::ShapeMismatch {
            op: "bandwidth_from_batch",
            lhs: h.shape().to_vec(),
            rhs: alloc::vec![valid.len()],
        });
    }
    if !(fraction > 0.0) {
        return Err(Error::invalid("bandwidth_from_batch", "fraction must be positive"));
    }
    let n = h.shape()[1];
    let rows: Vec<&[f64]> = h.data().chunks(n.max(1)).zip(valid).filter(|(_, &v)| v).map(|(r, _)| r).collect();
    if rows.len() < 2 {
        return Ok(Bandwidth {
            sigma: 1.0,
            warning: Some(BandwidthWarning::TooFewRows),
        });
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d2: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            total += math::sqrt(d2);
            pairs += 1;
        }
    }
    let mean = total / pairs as f64;
    if mean == 0.0 {
        return Ok(Bandwidth {
            sigma: 1.0,
            warning: Some(BandwidthWarning::ZeroSpread),
        });
    }
    Ok(Bandwidth {
        sigma: fraction * mean,
        warning: None,
    })
}

/// Where a similarity matrix came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimilaritySource {
    Modality(usize),
    Fused,
}

/// A `B × B` patient similarity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Tensor,
    pub source: SimilaritySource,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.values.shape()[0]
    }

    /// Largest `|Π[i,j] − Π[j,i]|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.size();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max(math::abs(self.values.at(i, j) - self.values.at(j, i)));
            }
        }
        worst
    }
}

/// Learned parameters of one modality's deep kernel.
#[derive(Clone, Debug)]
pub struct DeepKernel {
    pub phi: Mlp2,
    pub delta_raw: ParamId,
    pub fraction_k: f64,
    pub fraction_q: f64,
}

/// Graph handles produced by [`DeepKernel::forward`].
#[derive(Clone, Copy, Debug)]
pub struct KernelOutput {
    pub matrix: Var,
    pub phi: Var,
    pub sigma_k: Bandwidth,
    pub sigma_q: Bandwidth,
}

fn logit(p: f64) -> f64 {
    math::ln(p / (1.0 - p))
}

fn rbf_matrix(f: &mut Fwd, x: Var, sigma: f64) -> Result<Var> {
    let d2 = f.g.pairwise_sq_dist(x)?;
    let scaled = f.g.scale(d2, -1.0 / (2.0 * sigma * sigma));
    Ok(f.g.exp(scaled))
}

impl DeepKernel {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, hidden: usize, delta_init: f64, fraction_k: f64, fraction_q: f64, rng: &mut R) -> Self {
        DeepKernel {
            phi: Mlp2::new(store, &alloc::format!("{name}.phi"), [hidden, hidden, hidden], rng),
            delta_raw: store.insert(alloc::format!("{name}.delta_raw"), Tensor::scalar(logit(delta_init))),
            fraction_k,
            fraction_q,
        }
    }

    pub fn delta(&self, store: &ParamStore) -> f64 {
        math::sigmoid(store.get(self.delta_raw).item())
    }

    pub fn forward(&self, f: &mut Fwd, h: Var, valid: &[bool]) -> Result<KernelOutput> {
        if !f.g.value(h).is_finite() {
            return Err(Error::NonFinite("deep kernel input contains NaN or infinity".into()));
        }
        let phi = self.phi.forward(f, h)?;
        let sigma_k = bandwidth_from_batch(f.g.value(phi), valid, self.fraction_k)?;
        let sigma_q = bandwidth_from_batch(f.g.value(h), valid, self.fraction_q)?;
        let k = rbf_matrix(f, phi, sigma_k.sigma)?;
        let q = rbf_matrix(f, h, sigma_q.sigma)?;
        let b = valid.len();
        let raw = f.p(self.delta_raw);
        let delta = f.g.sigmoid(raw);
        let delta = f.g.expand(delta, Expand::Scalar, &[b, b])?;
        let gap = f.g.one_minus(k);
        let lift = f.g.mul(delta, gap)?;
        let inner = f.g.add(k, lift)?;
        let matrix = f.g.mul(inner, q)?;
        Ok(KernelOutput { matrix, phi, sigma_k, sigma_q })
    }
}

/// Value-level convenience wrapper around [`DeepKernel::forward`].
pub fn deep_kernel_matrix(h: &Tensor, valid: &[bool], kernel: &DeepKernel, store: &ParamStore, modality: usize) -> Result<SimilarityMatrix> {
    let mut f = Fwd::new(store, false);
    let hv = f.g.constant(h.clone());
    let out = kernel.forward(&mut f, hv, valid)?;
    Ok(SimilarityMatrix {
        values: f.g.value(out.matrix).clone(),
        source: SimilaritySource::Modality(modality),
    })
}

/// Rows of `x` with `valid[i] = false` multiplied by zero.
pub(crate) fn mask_rows(f: &mut Fwd, x: Var, valid: &[bool]) -> Result<Var> {
    let shape = f.g.shape(x).to_vec();
    let width = shape[1];
    let mut data = Vec::with_capacity(valid.len() * width);
    for &v in valid {
        data.extend(core::iter::repeat(if v { 1.0 } else { 0.0 }).take(width));
    }
    let m = f.g.constant(Tensor::new(shape, data)?);
    f.g.mul(x, m)
}

/// `|‖φ(H)‖_F − ‖H‖_F|` over valid rows.
pub fn stability_term(f: &mut Fwd, h: Var, phi: Var, valid: &[bool]) -> Result<Var> {
    let hm = mask_rows(f, h, valid)?;
    let pm = mask_rows(f, phi, valid)?;
    let hh = f.g.mul(hm, hm)?;
    let pp = f.g.mul(pm, pm)?;
    let nh = f.g.sum_all(hh);
    let nh = f.g.sqrt(nh);
    let np = f.g.sum_all(pp);
    let np = f.g.sqrt(np);
    let d = f.g.sub(np, nh)?;
    Ok(f.g.abs(d))
}

/// Cosine similarity mapped to `[0, 1]` via `(1 + cos)/2`.
pub fn cosine_matrix(f: &mut Fwd, h: Var) -> Result<Var> {
    let shape = f.g.shape(h).to_vec();
    let (b, n) = (shape[0], shape[1]);
    let sq = f.g.mul(h, h)?;
    let norms = f.g.sum_last(sq);
    let norms = f.g.sqrt(norms);
    let norms = f.g.affine(norms, 1.0, 1e-12);
    let norms = f.g.expand(norms, Expand::Cols, &[b, n])?;
    let unit = f.g.div(h, norms)?;
    let ut = f.g.transpose(unit)?;
    let cos = f.g.matmul(unit, ut)?;
    Ok(f.g.affine(cos, 0.5, 0.5))
}
