//! Datasets, batches, the synthetic generator and missingness injection.
//!
//! Values are stored as `f32` so the on-disk format round-trips exactly;
//! batches widen them to `f64` tensors.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModalityKind {
    Vector { dim: usize },
    Sequence { len: usize, dim: usize },
    Grid { channels: usize, height: usize, width: usize },
}

impl ModalityKind {
    /// Number of stored values per patient.
    pub fn row_len(&self) -> usize {
        match *self {
            ModalityKind::Vector { dim } => dim,
            ModalityKind::Sequence { len, dim } => len * dim,
            ModalityKind::Grid { channels, height, width } => channels * height * width,
        }
    }

    /// Per-patient tensor shape (without the batch axis).
    pub fn item_shape(&self) -> Vec<usize> {
        match *self {
            ModalityKind::Vector { dim } => vec![dim],
            ModalityKind::Sequence { len, dim } => vec![len, dim],
            ModalityKind::Grid { channels, height, width } => vec![channels, height, width],
        }
    }

    pub fn is_sequence(&self) -> bool {
        matches!(self, ModalityKind::Sequence { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.item_shape();
        if dims.contains(&0) {
            return Err(Error::InvalidData(alloc::format!("modality {self:?} has a zero dimension")));
        }
        Ok(())
    }
}

/// Raw inputs of one modality for a batch of patients.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityBatch {
    /// Zero-based modality index.
    pub modality_id: usize,
    pub kind: ModalityKind,
    /// `[B, ...item_shape]`.
    pub values: Tensor,
    pub present: Vec<bool>,
}

impl ModalityBatch {
    pub fn batch_size(&self) -> usize {
        self.present.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub modalities: Vec<ModalityBatch>,
    /// `[B, |C|]` in {0, 1}.
    pub labels: Tensor,
    /// Dataset rows the batch was drawn from.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kinds: Vec<ModalityKind>,
    pub n_labels: usize,
    /// Per modality, `n_patients × row_len` values, row-major.
    pub values: Vec<Vec<f32>>,
    pub present: Vec<Vec<bool>>,
    /// `n_patients × n_labels`, row-major, each 0 or 1.
    pub labels: Vec<u8>,
    pub seed: u64,
    /// Missing rate requested for each modality (0 when none was injected).
    pub missing_rates: Vec<f64>,
}

impl Dataset {
    pub fn n_patients(&self) -> usize {
        if self.n_labels == 0 {
            0
        } else {
            self.labels.len() / self.n_labels
        }
    }

    pub fn n_modalities(&self) -> usize {
        self.kinds.len()
    }

    pub fn row(&self, m: usize, i: usize) -> &[f32] {
        let len = self.kinds[m].row_len();
        &self.values[m][i * len..(i + 1) * len]
    }

    /// Checks shapes, label values, the at-least-one-modality rule and the
    /// placeholder convention (missing rows are all zeros).
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidData(msg));
        let m = self.kinds.len();
        if m == 0 || self.n_labels == 0 {
            return bad("dataset needs at least one modality and one label".into());
        }
        if self.values.len() != m || self.present.len() != m || self.missing_rates.len() != m {
            return bad("per-modality arrays disagree with the modality count".into());
        }
        if self.labels.len() % self.n_labels != 0 {
            return bad("label array is not a whole number of rows".into());
        }
        let n = self.n_patients();
        if let Some(&v) = self.labels.iter().find(|&&v| v > 1) {
            return bad(alloc::format!("label value {v} is not 0 or 1"));
        }
        for (k, kind) in self.kinds.iter().enumerate() {
            kind.validate()?;
            if self.values[k].len() != n * kind.row_len() || self.present[k].len() != n {
                return bad(alloc::format!("modality {k} has the wrong number of rows"));
            }
            if !(0.0..1.0).contains(&self.missing_rates[k]) {
                return bad(alloc::format!("modality {k} missing rate outside [0, 1)"));
            }
            for i in 0..n {
                let row = self.row(k, i);
                if row.iter().any(|v| !v.is_finite()) {
                    return bad(alloc::format!("modality {k}, patient {i}: non-finite value"));
                }
                if !self.present[k][i] && row.iter().any(|&v| v != 0.0) {
                    return bad(alloc::format!("modality {k}, patient {i}: missing row is not zero"));
                }
            }
        }
        for i in 0..n {
            if !(0..m).any(|k| self.present[k][i]) {
                return bad(alloc::format!("patient {i} has no modality"));
            }
        }
        Ok(())
    }

    /// Realized fraction of patients missing each modality.
    pub fn realized_missing(&self) -> Vec<f64> {
        let n = self.n_patients().max(1) as f64;
        self.present.iter().map(|p| p.iter().filter(|&&x| !x).count() as f64 / n).collect()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let n = self.n_patients();
        if let Some(&i) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidData(alloc::format!("patient index {i} out of range ({n})")));
        }
        let b = indices.len();
        let modalities = self
            .kinds
            .iter()
            .enumerate()
            .map(|(m, kind)| {
                let mut data = Vec::with_capacity(b * kind.row_len());
                for &i in indices {
                    data.extend(self.row(m, i).iter().map(|&v| v as f64));
                }
                let mut shape = vec![b];
                shape.extend(kind.item_shape());
                ModalityBatch {
                    modality_id: m,
                    kind: *kind,
                    values: Tensor::new(shape, data).expect("row lengths match the kind"),
                    present: indices.iter().map(|&i| self.present[m][i]).collect(),
                }
            })
            .collect();
        let c = self.n_labels;
        let mut labels = Vec::with_capacity(b * c);
        for &i in indices {
            labels.extend(self.labels[i * c..(i + 1) * c].iter().map(|&v| v as f64));
        }
        Ok(Batch {
            modalities,
            labels: Tensor::new(vec![b, c], labels)?,
            indices: indices.to_vec(),
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset {
            kinds: self.kinds.clone(),
            n_labels: self.n_labels,
            values: vec![Vec::new(); self.kinds.len()],
            present: vec![Vec::new(); self.kinds.len()],
            labels: Vec::with_capacity(indices.len() * self.n_labels),
            seed: self.seed,
            missing_rates: self.missing_rates.clone(),
        };
        for &i in indices {
            for m in 0..self.kinds.len() {
                out.values[m].extend_from_slice(self.row(m, i));
                out.present[m].push(self.present[m][i]);
            }
            out.labels.extend_from_slice(&self.labels[i * self.n_labels..(i + 1) * self.n_labels]);
        }
        out
    }

    /// Label rows as `f64`, `n × |C|`.
    pub fn label_row(&self, i: usize) -> &[u8] {
        &self.labels[i * self.n_labels..(i + 1) * self.n_labels]
    }
}

/// Chunks `order` into consecutive batches; the last one may be smaller.
pub fn batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Shuffled train / validation / test partition of `0..n`.
pub fn split_indices(n: usize, train_fraction: f64, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let n_train = math::round(n as f64 * train_fraction) as usize;
    let n_val = math::round(n as f64 * val_fraction) as usize;
    if n_train == 0 || n_train + n_val >= n {
        return Err(Error::InvalidData(alloc::format!(
            "cannot split {n} patients with fractions {train_fraction}/{val_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok((order, val, test))
}

/// One modality of a [`SyntheticSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub kind: ModalityKind,
    /// `obs_dim × d` loading matrix, row-major. For sequences `obs_dim` is
    /// the per-step feature count, for grids it is `channels·height·width`.
    pub loading: Vec<f64>,
    pub noise_std: f64,
}

impl ModalitySpec {
    pub fn obs_dim(&self) -> usize {
        match self.kind {
            ModalityKind::Sequence { dim, .. } => dim,
            k => k.row_len(),
        }
    }
}

/// Ground-truth generative structure: a standard-normal latent observed
/// linearly (plus noise) by every modality, labels from hyperplanes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub latent_dim: usize,
    pub modalities: Vec<ModalitySpec>,
    /// `|C| × d` label hyperplane normals, row-major.
    pub hyperplanes: Vec<f64>,
    /// `d × d` transition of the latent state between sequence steps.
    pub dynamics: Vec<f64>,
}

impl SyntheticSpec {
    /// Draws loadings with `N(0, 1/d)` entries, random hyperplanes and a
    /// damped rotation for the sequence dynamics.
    pub fn random(kinds: &[ModalityKind], latent_dim: usize, n_labels: usize, noise_std: f64, seed: u64) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::InvalidData("latent dimension must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5EED);
        let d = latent_dim;
        let scale = 1.0 / math::sqrt(d as f64);
        let normal = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
        let modalities = kinds
            .iter()
            .map(|&kind| {
                let obs = match kind {
                    ModalityKind::Sequence { dim, .. } => dim,
                    k => k.row_len(),
                };
                ModalitySpec {
                    kind,
                    loading: (0..obs * d).map(|_| normal(&mut rng) * scale).collect(),
                    noise_std,
                }
            })
            .collect();
        let hyperplanes = (0..n_labels * d).map(|_| normal(&mut rng)).collect();
        let mut dynamics = vec![0.0; d * d];
        let mut k = 0;
        while k < d {
            if k + 1 < d {
                let angle: f64 = rng.random_range(0.2..1.2);
                let (s, c) = (0.95 * math::sin(angle), 0.95 * math::cos(angle));
                dynamics[k * d + k] = c;
                dynamics[k * d + k + 1] = -s;
                dynamics[(k + 1) * d + k] = s;
                dynamics[(k + 1) * d + k + 1] = c;
                k += 2;
            } else {
                dynamics[k * d + k] = 0.95;
                k += 1;
            }
        }
        Ok(SyntheticSpec { latent_dim, modalities, hyperplanes, dynamics })
    }

    pub fn n_labels(&self) -> usize {
        self.hyperplanes.len() / self.latent_dim.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.latent_dim;
        let bad = |msg: alloc::string::String| Err(Error::InvalidData(msg));
        if d == 0 {
            return bad("latent dimension must be at least 1".into());
        }
        if self.modalities.len() < 2 {
            return bad("at least two modalities are required".into());
        }
        if self.hyperplanes.is_empty() || self.hyperplanes.len() % d != 0 {
            return bad("hyperplanes must be |C| rows of length d".into());
        }
        if self.dynamics.len() != d * d {
            return bad("dynamics must be d × d".into());
        }
        for (m, spec) in self.modalities.iter().enumerate() {
            spec.kind.validate()?;
            if spec.loading.len() != spec.obs_dim() * d {
                return bad(alloc::format!("modality {m}: loading must be obs_dim × d"));
            }
            if !(spec.noise_std >= 0.0) {
                return bad(alloc::format!("modality {m}: noise_std must be non-negative"));
            }
        }
        Ok(())
    }
}

fn project(loading: &[f64], z: &[f64], out: &mut Vec<f64>) {
    let d = z.len();
    for row in loading.chunks(d) {
        out.push(row.iter().zip(z).map(|(a, b)| a * b).sum());
    }
}

/// 3×3 mean filter per channel, averaging only in-bounds neighbours.
fn smooth(img: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for c in 0..channels {
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut cnt) = (0.0, 0.0);
                for yy in y.saturating_sub(1)..(y + 2).min(h) {
                    for xx in x.saturating_sub(1)..(x + 2).min(w) {
                        acc += img[(c * h + yy) * w + xx];
                        cnt += 1.0;
                    }
                }
                out[(c * h + y) * w + x] = acc / cnt;
            }
        }
    }
    out
}

/// Samples a fully observed dataset of `n_patients` from `spec`.
pub fn generate(spec: &SyntheticSpec, n_patients: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.latent_dim;
    let c = spec.n_labels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<Vec<f32>> = spec.modalities.iter().map(|s| Vec::with_capacity(n_patients * s.kind.row_len())).collect();
    let mut labels = Vec::with_capacity(n_patients * c);
    let mut obs = Vec::new();
    for _ in 0..n_patients {
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for w in spec.hyperplanes.chunks(d) {
            let s: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
            labels.push(u8::from(s > 0.0));
        }
        for (m, ms) in spec.modalities.iter().enumerate() {
            obs.clear();
            match ms.kind {
                ModalityKind::Vector { .. } => project(&ms.loading, &z, &mut obs),
                ModalityKind::Sequence { len, .. } => {
                    let mut state = z.clone();
                    for _ in 0..len {
                        project(&ms.loading, &state, &mut obs);
                        state = spec.dynamics.chunks(d).map(|row| row.iter().zip(&state).map(|(a, b)| a * b).sum()).collect();
                    }
                }
                ModalityKind::Grid { channels, height, width } => {
                    let mut raw = Vec::with_capacity(channels * height * width);
                    project(&ms.loading, &z, &mut raw);
                    obs = smooth(&raw, channels, height, width);
                }
            }
            for v in obs.iter_mut() {
                if ms.noise_std > 0.0 {
                    *v += ms.noise_std * rng.sample::<f64, _>(StandardNormal);
                }
            }
            values[m].extend(obs.iter().map(|&v| v as f32));
        }
    }
    let m = spec.modalities.len();
    Ok(Dataset {
        kinds: spec.modalities.iter().map(|s| s.kind).collect(),
        n_labels: c,
        values,
        present: vec![vec![true; n_patients]; m],
        labels,
        seed,
        missing_rates: vec![0.0; m],
    })
}

/// Drops each (patient, modality) independently with the modality's rate,
/// on top of any existing missingness. A patient whose draw would remove
/// every remaining modality is re-drawn. Missing rows are zeroed.
pub fn inject_missingness(dataset: &Dataset, rates: &[f64], seed: u64) -> Result<Dataset> {
    let m = dataset.n_modalities();
    if rates.len() != m {
        return Err(Error::InvalidData(alloc::format!("expected {m} missing rates, got {}", rates.len())));
    }
    if let Some(r) = rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Error::InvalidData(alloc::format!("missing rate {r} outside [0, 1)")));
    }
    let mut out = dataset.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; m];
    for i in 0..dataset.n_patients() {
        loop {
            for k in 0..m {
                keep[k] = dataset.present[k][i] && rng.random::<f64>() >= rates[k];
            }
            if keep.iter().any(|&x| x) {
                break;
            }
        }
        for k in 0..m {
            if !keep[k] {
                out.present[k][i] = false;
                let len = dataset.kinds[k].row_len();
                out.values[k][i * len..(i + 1) * len].fill(0.0);
            }
        }
    }
    for k in 0..m {
        let prev = dataset.missing_rates[k];
        out.missing_rates[k] = 1.0 - (1.0 - prev) * (1.0 - rates[k]);
    }
    Ok(out)
}
