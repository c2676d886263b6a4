//! Mask-aware fusion of per-modality similarities and the learnable
//! threshold that sparsifies the fused patient graph.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::nn::Fwd;
use crate::tensor::{ParamId, ParamStore, Tensor, Var};

/// `mask[i,j] = present[i] && present[j]`, as 0/1 values.
pub fn presence_mask(present: &[bool]) -> Tensor {
    let b = present.len();
    let mut data = Vec::with_capacity(b * b);
    for &pi in present {
        for &pj in present {
            data.push(if pi && pj { 1.0 } else { 0.0 });
        }
    }
    Tensor::new(alloc::vec![b, b], data).expect("square")
}

#[derive(Clone, Debug)]
pub struct Fusion {
    pub lambda_raw: ParamId,
    pub tau: f64,
    pub epsilon: f64,
}

impl Fusion {
    pub fn new(store: &mut ParamStore, threshold_init: f64, tau: f64, epsilon: f64) -> Self {
        let raw = math::ln(threshold_init / (1.0 - threshold_init));
        Fusion {
            lambda_raw: store.insert("fusion.lambda_raw", Tensor::scalar(raw)),
            tau,
            epsilon,
        }
    }

    /// Current threshold `Λ`.
    pub fn lambda(&self, store: &ParamStore) -> f64 {
        math::sigmoid(store.get(self.lambda_raw).item())
    }

    /// `Σ_m Π^m ∘ mask^m / (Σ_m mask^m + ε)`.
    pub fn fuse(&self, f: &mut Fwd, similarities: &[Var], masks: &[Tensor]) -> Result<Var> {
        if similarities.is_empty() || similarities.len() != masks.len() {
            return Err(Error::invalid(
                "fuse",
                alloc::format!("{} similarity matrices but {} masks", similarities.len(), masks.len()),
            ));
        }
        let shape = f.g.shape(similarities[0]).to_vec();
        let mut count = Tensor::full(&shape, self.epsilon);
        let mut numerator: Option<Var> = None;
        for (&s, mask) in similarities.iter().zip(masks) {
            if f.g.shape(s) != shape.as_slice() || mask.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "fuse",
                    lhs: shape.clone(),
                    rhs: mask.shape().to_vec(),
                });
            }
            let m = f.g.constant(mask.clone());
            let term = f.g.mul(s, m)?;
            numerator = Some(match numerator {
                None => term,
                Some(acc) => f.g.add(acc, term)?,
            });
        }
        let mut sums = Tensor::zeros(&shape);
        for mask in masks {
            for (s, m) in sums.data_mut().iter_mut().zip(mask.data()) {
                *s += m;
            }
        }
        for (c, s) in count.data_mut().iter_mut().zip(sums.data()) {
            *c += s;
        }
        let denom = f.g.constant(count);
        f.g.div(numerator.expect("nonempty"), denom)
    }

    /// Keeps entries strictly above `Λ` and zeroes the rest.
    pub fn threshold(&self, f: &mut Fwd, fused: Var) -> Result<Var> {
        let raw = f.p(self.lambda_raw);
        let lambda = f.g.sigmoid(raw);
        f.g.threshold(fused, lambda, self.tau)
    }
}
