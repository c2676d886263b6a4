//! Cross-modal similarity transfer: do patients that look alike in one
//! modality also look alike in another?
//!
//! For paired representations `Ha`, `Hb` the experiment compares
//! `‖Π_a − Π_b‖` against the same difference after perturbing `Hb` with
//! Gaussian noise and after shuffling its rows, under three similarity
//! metrics and three matrix norms.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{batches, split_indices, Dataset};
use crate::encoders::{Encoder, EncoderShape};
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{Fwd, Linear};
use crate::tensor::{Adam, AdamConfig, ParamStore, Tensor};
use crate::training::prediction_loss;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    NormalizedEuclidean,
    Cosine,
    Rbf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixNorm {
    Frobenius,
    Spectral,
    MeanAbs,
}

impl SimilarityMetric {
    pub const ALL: [SimilarityMetric; 3] = [SimilarityMetric::NormalizedEuclidean, SimilarityMetric::Cosine, SimilarityMetric::Rbf];

    pub fn name(self) -> &'static str {
        match self {
            SimilarityMetric::NormalizedEuclidean => "normalized_euclidean",
            SimilarityMetric::Cosine => "cosine",
            SimilarityMetric::Rbf => "rbf",
        }
    }
}

impl MatrixNorm {
    pub const ALL: [MatrixNorm; 3] = [MatrixNorm::Frobenius, MatrixNorm::Spectral, MatrixNorm::MeanAbs];

    pub fn name(self) -> &'static str {
        match self {
            MatrixNorm::Frobenius => "frobenius",
            MatrixNorm::Spectral => "spectral",
            MatrixNorm::MeanAbs => "mean_abs",
        }
    }
}

fn distances(h: &Tensor) -> (usize, Vec<f64>) {
    let (n, d) = (h.shape()[0], h.shape()[1]);
    let x = h.data();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = (0..d).map(|k| (x[i * d + k] - x[j * d + k]) * (x[i * d + k] - x[j * d + k])).sum();
            out[i * n + j] = math::sqrt(s);
            out[j * n + i] = out[i * n + j];
        }
    }
    (n, out)
}

/// `N × N` similarity of the rows of `h` under `metric`, valued in `[0, 1]`.
pub fn similarity_matrix(h: &Tensor, metric: SimilarityMetric) -> Result<Tensor> {
    if h.rank() != 2 || h.shape()[0] < 2 {
        return Err(Error::invalid("similarity_matrix", "need an N × D matrix with N ≥ 2"));
    }
    let n = h.shape()[0];
    let values = match metric {
        SimilarityMetric::NormalizedEuclidean => {
            let (_, d) = distances(h);
            let max = d.iter().copied().fold(0.0, f64::max);
            if max == 0.0 {
                vec![1.0; n * n]
            } else {
                d.iter().map(|v| 1.0 - v / max).collect()
            }
        }
        SimilarityMetric::Rbf => {
            let (_, d) = distances(h);
            let pairs = (n * (n - 1) / 2) as f64;
            let mut sum = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    sum += d[i * n + j];
                }
            }
            let sigma = if sum == 0.0 { 1.0 } else { sum / pairs };
            d.iter().map(|v| math::exp(-v * v / (2.0 * sigma * sigma))).collect()
        }
        SimilarityMetric::Cosine => {
            let dim = h.shape()[1];
            let x = h.data();
            let mut norms = Vec::with_capacity(n);
            for i in 0..n {
                let s: f64 = x[i * dim..(i + 1) * dim].iter().map(|v| v * v).sum();
                if s == 0.0 {
                    return Err(Error::invalid("similarity_matrix", alloc::format!("row {i} is the zero vector")));
                }
                norms.push(math::sqrt(s));
            }
            let mut out = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = (0..dim).map(|k| x[i * dim + k] * x[j * dim + k]).sum();
                    out[i * n + j] = (1.0 + dot / (norms[i] * norms[j])) / 2.0;
                }
            }
            out
        }
    };
    Tensor::new(vec![n, n], values)
}

/// Largest singular value by power iteration on `MᵀM`, stopping when the
/// Rayleigh quotient moves by at most `tol` relative.
pub fn spectral_norm(m: &Tensor, tol: f64) -> f64 {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    let a = m.data();
    if a.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..c).map(|i| 1.0 + 0.1 * ((i * 7 + 3) % 11) as f64).collect();
    let mut mv = vec![0.0; r];
    let mut prev = 0.0;
    for _ in 0..100_000 {
        let norm = math::sqrt(v.iter().map(|x| x * x).sum());
        for x in v.iter_mut() {
            *x /= norm;
        }
        for i in 0..r {
            mv[i] = (0..c).map(|j| a[i * c + j] * v[j]).sum();
        }
        let mut w = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                w[j] += a[i * c + j] * mv[i];
            }
        }
        // v is unit length, so ‖Mv‖² is the Rayleigh quotient of MᵀM
        let lambda: f64 = mv.iter().map(|x| x * x).sum();
        if math::abs(lambda - prev) <= tol * lambda {
            return math::sqrt(lambda);
        }
        prev = lambda;
        if w.iter().all(|&x| x == 0.0) {
            return math::sqrt(lambda);
        }
        v = w;
    }
    math::sqrt(prev)
}

pub const SPECTRAL_TOL: f64 = 1e-9;

/// `‖a − b‖` under `norm`.
pub fn difference_norm(a: &Tensor, b: &Tensor, norm: MatrixNorm) -> Result<f64> {
    if a.shape() != b.shape() || a.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "difference_norm",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Ok(match norm {
        MatrixNorm::Frobenius => math::sqrt(diff.iter().map(|v| v * v).sum()),
        MatrixNorm::MeanAbs => diff.iter().map(|v| math::abs(*v)).sum::<f64>() / diff.len().max(1) as f64,
        MatrixNorm::Spectral => spectral_norm(&Tensor::new(a.shape().to_vec(), diff)?, SPECTRAL_TOL),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntuitionCell {
    pub metric: SimilarityMetric,
    pub norm: MatrixNorm,
    pub original: f64,
    pub noise_mean: f64,
    pub shuffle_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntuitionReport {
    /// Metric-major, norm-minor: all nine combinations.
    pub cells: Vec<IntuitionCell>,
    pub n_repeats: usize,
    pub noise_std: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntuitionConfig {
    pub n_repeats: usize,
    /// Noise standard deviation as a multiple of each feature's std in `Hb`.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for IntuitionConfig {
    fn default() -> Self {
        IntuitionConfig {
            n_repeats: 1000,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

/// The random draws of one repeat.
pub struct Perturbation {
    pub noise: Vec<f64>,
    pub permutation: Vec<usize>,
}

/// Per-repeat generator, independent of how many repeats precede it.
pub fn repeat_rng(seed: u64, repeat: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat as u64 + 1);
    rng
}

fn feature_std(h: &Tensor) -> Vec<f64> {
    let (n, d) = (h.shape()[0], h.shape()[1]);
    let x = h.data();
    (0..d)
        .map(|k| {
            let col: Vec<f64> = (0..n).map(|i| x[i * d + k]).collect();
            crate::metrics::mean_std(&col).1
        })
        .collect()
}

/// Draws the noise and row permutation of one repeat.
pub fn draw(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: &[f64]) -> Perturbation {
    let noise = (0..n * d).map(|k| scale[k % d] * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.shuffle(rng);
    Perturbation { noise, permutation }
}

pub fn permute_rows(h: &Tensor, perm: &[usize]) -> Tensor {
    let d = h.shape()[1];
    let mut data = Vec::with_capacity(h.numel());
    for &p in perm {
        data.extend_from_slice(&h.data()[p * d..(p + 1) * d]);
    }
    Tensor::new(h.shape().to_vec(), data).expect("same shape")
}

/// Per-repeat differences `(noise, shuffle)` for every metric × norm cell.
pub fn repeat_differences(ha_sims: &[Tensor], hb: &Tensor, p: &Perturbation) -> Result<Vec<(f64, f64)>> {
    let mut noisy = hb.clone();
    for (v, e) in noisy.data_mut().iter_mut().zip(&p.noise) {
        *v += e;
    }
    let shuffled = permute_rows(hb, &p.permutation);
    let mut out = Vec::with_capacity(9);
    for (k, metric) in SimilarityMetric::ALL.into_iter().enumerate() {
        let pn = similarity_matrix(&noisy, metric)?;
        let ps = similarity_matrix(&shuffled, metric)?;
        for norm in MatrixNorm::ALL {
            out.push((difference_norm(&ha_sims[k], &pn, norm)?, difference_norm(&ha_sims[k], &ps, norm)?));
        }
    }
    Ok(out)
}

/// Runs the original / noise / shuffle comparison on paired rows.
pub fn run_experiment(ha: &Tensor, hb: &Tensor, config: &IntuitionConfig) -> Result<IntuitionReport> {
    let repeats: Vec<usize> = (0..config.n_repeats).collect();
    run_repeats(ha, hb, config, &repeats).and_then(|partial| finish(ha, hb, config, &[partial]))
}

/// Summed per-cell differences over a subset of repeats, so that repeats
/// can be split across workers and merged with [`finish`].
pub fn run_repeats(ha: &Tensor, hb: &Tensor, config: &IntuitionConfig, repeats: &[usize]) -> Result<Vec<(f64, f64)>> {
    check_pair(ha, hb)?;
    let sims: Vec<Tensor> = SimilarityMetric::ALL.into_iter().map(|m| similarity_matrix(ha, m)).collect::<Result<_>>()?;
    let scale: Vec<f64> = feature_std(hb).iter().map(|s| s * config.noise_std).collect();
    let (n, d) = (hb.shape()[0], hb.shape()[1]);
    let mut sums = vec![(0.0, 0.0); 9];
    for &r in repeats {
        let p = draw(&mut repeat_rng(config.seed, r), n, d, &scale);
        for (acc, (a, b)) in sums.iter_mut().zip(repeat_differences(&sims, hb, &p)?) {
            acc.0 += a;
            acc.1 += b;
        }
    }
    Ok(sums)
}

fn check_pair(ha: &Tensor, hb: &Tensor) -> Result<()> {
    if ha.rank() != 2 || hb.rank() != 2 || ha.shape()[0] != hb.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "run_experiment",
            lhs: ha.shape().to_vec(),
            rhs: hb.shape().to_vec(),
        });
    }
    Ok(())
}

/// Combines partial sums from [`run_repeats`] into the report.
pub fn finish(ha: &Tensor, hb: &Tensor, config: &IntuitionConfig, partials: &[Vec<(f64, f64)>]) -> Result<IntuitionReport> {
    check_pair(ha, hb)?;
    if config.n_repeats == 0 {
        return Err(Error::invalid("run_experiment", "n_repeats must be at least 1"));
    }
    let r = config.n_repeats as f64;
    let mut cells = Vec::with_capacity(9);
    for (k, metric) in SimilarityMetric::ALL.into_iter().enumerate() {
        let pa = similarity_matrix(ha, metric)?;
        let pb = similarity_matrix(hb, metric)?;
        for (j, norm) in MatrixNorm::ALL.into_iter().enumerate() {
            let idx = k * 3 + j;
            let (mut noise, mut shuffle) = (0.0, 0.0);
            for p in partials {
                noise += p[idx].0;
                shuffle += p[idx].1;
            }
            cells.push(IntuitionCell {
                metric,
                norm,
                original: difference_norm(&pa, &pb, norm)?,
                noise_mean: noise / r,
                shuffle_mean: shuffle / r,
            });
        }
    }
    Ok(IntuitionReport {
        cells,
        n_repeats: config.n_repeats,
        noise_std: config.noise_std,
        seed: config.seed,
    })
}

/// Raw observations of modality `m` for the given patients, flattened to
/// one row each.
pub fn observed_rows(dataset: &Dataset, m: usize, patients: &[usize]) -> Tensor {
    let len = dataset.kinds[m].row_len();
    let mut data = Vec::with_capacity(patients.len() * len);
    for &i in patients {
        data.extend(dataset.row(m, i).iter().map(|&v| v as f64));
    }
    Tensor::new(vec![patients.len(), len], data).expect("row length")
}

/// Patients observed in both modalities.
pub fn paired_patients(dataset: &Dataset, a: usize, b: usize) -> Vec<usize> {
    (0..dataset.n_patients()).filter(|&i| dataset.present[a][i] && dataset.present[b][i]).collect()
}

/// Trains a unimodal classifier (encoder plus linear head) for each of
/// modalities `a` and `b` on the patients observing both, keeps the
/// parameters with the best validation loss, and returns the latent
/// representations of the held-out test patients.
pub fn trained_representations(dataset: &Dataset, a: usize, b: usize, config: &ExperimentConfig) -> Result<(Tensor, Tensor, Vec<usize>)> {
    let paired = paired_patients(dataset, a, b);
    let (tr, va, te) = split_indices(paired.len(), config.eval.train_fraction, config.eval.val_fraction, config.eval.split_seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&k| paired[k]).collect::<Vec<usize>>();
    let (tr, va, te) = (pick(&tr), pick(&va), pick(&te));
    let ha = unimodal_latents(dataset, a, &tr, &va, &te, config)?;
    let hb = unimodal_latents(dataset, b, &tr, &va, &te, config)?;
    Ok((ha, hb, te))
}

fn unimodal_latents(dataset: &Dataset, m: usize, train: &[usize], val: &[usize], test: &[usize], config: &ExperimentConfig) -> Result<Tensor> {
    let mc = &config.model;
    let tc = &config.train;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ (m as u64).wrapping_mul(0x9E37_79B9));
    let mut store = ParamStore::new();
    let shape = EncoderShape {
        hidden: mc.hidden_dim,
        seq_layers: mc.seq_layers,
        seq_heads: mc.seq_heads,
        ffn_mult: mc.ffn_mult,
        grid_channels: &mc.grid_channels,
    };
    let encoder = Encoder::new(&mut store, "uni.enc", dataset.kinds[m], &shape, &mut rng);
    let head = Linear::new(&mut store, "uni.head", mc.hidden_dim, dataset.n_labels, true, &mut rng);
    let mut adam = Adam::new(&store, AdamConfig { lr: tc.lr, ..AdamConfig::default() });
    let run = |store: &ParamStore, idx: &[usize], trainable: bool| -> Result<(f64, Vec<(crate::tensor::ParamId, Tensor)>, Tensor)> {
        let batch = dataset.batch(idx)?;
        let mut f = Fwd::new(store, trainable);
        let enc = encoder.encode(&mut f, &batch.modalities[m])?;
        let logits = head.forward(&mut f, enc.summary)?;
        let probs = f.g.sigmoid(logits);
        let y = f.g.constant(batch.labels.clone());
        let loss = prediction_loss(&mut f.g, probs, y)?;
        let value = f.g.value(loss).item();
        let grads = if trainable { f.g.backward(loss)?.param_grads() } else { Vec::new() };
        Ok((value, grads, f.g.value(enc.summary).clone()))
    };
    let mut order = train.to_vec();
    let mut best: Option<(f64, ParamStore)> = None;
    for _ in 0..tc.epochs {
        order.shuffle(&mut rng);
        for chunk in batches(&order, tc.batch_size) {
            let (loss, grads, _) = run(&store, &chunk, true)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("unimodal classifier diverged".into()));
            }
            adam.step(&mut store, &grads)?;
        }
        if !val.is_empty() {
            let (loss, _, _) = run(&store, val, false)?;
            if best.as_ref().map_or(true, |(b, _)| loss < *b) {
                best = Some((loss, store.clone()));
            }
        }
    }
    if let Some((_, params)) = best {
        store = params;
    }
    Ok(run(&store, test, false)?.2)
}
