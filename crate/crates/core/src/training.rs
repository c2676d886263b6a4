//! Losses, the joint training loop and evaluation passes.

use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::math;
use crate::metrics::{self, MetricReport};
use crate::model::Model;
use crate::tensor::{Adam, AdamConfig, Graph, ParamId, Tensor, Var};

/// Probabilities are clamped into this band before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy, summed over labels and averaged over the batch.
pub fn prediction_loss(g: &mut Graph, probs: Var, labels: Var) -> Result<Var> {
    if g.shape(probs) != g.shape(labels) {
        return Err(Error::ShapeMismatch {
            op: "prediction_loss",
            lhs: g.shape(probs).to_vec(),
            rhs: g.shape(labels).to_vec(),
        });
    }
    if !g.value(probs).is_finite() {
        return Err(Error::NonFinite("prediction_loss: non-finite probability".into()));
    }
    let b = g.shape(probs)[0].max(1);
    let p = g.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let lp = g.log(p);
    let q = g.one_minus(p);
    let lq = g.log(q);
    let y_neg = g.one_minus(labels);
    let pos = g.mul(labels, lp)?;
    let neg = g.mul(y_neg, lq)?;
    let both = g.add(pos, neg)?;
    let s = g.sum_all(both);
    Ok(g.scale(s, -1.0 / b as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub prediction_loss: f64,
    pub stability_loss: f64,
    pub total: f64,
    pub lambda: f64,
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-size-weighted means over the epoch.
    pub loss: LossReport,
    pub val_loss: Option<f64>,
    pub val_micro_auc: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss, or the
    /// last epoch when there is no validation set.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Builds the loss of one batch on the forward graph.
fn batch_loss(fw: &mut crate::model::Forward<'_>, labels: &Tensor, lambda: f64) -> Result<(Var, LossReport)> {
    let g = &mut fw.f.g;
    let y = g.constant(labels.clone());
    let pred = prediction_loss(g, fw.probs, y)?;
    let weighted = g.scale(fw.stability, lambda);
    let total = g.add(pred, weighted)?;
    let report = LossReport {
        prediction_loss: g.value(pred).item(),
        stability_loss: g.value(fw.stability).item(),
        total: g.value(total).item(),
        lambda,
    };
    Ok((total, report))
}

fn clip(grads: &mut [(ParamId, Tensor)], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = math::sqrt(grads.iter().map(|(_, g)| g.sum_squares()).sum());
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
}

/// One optimization step on the given patients. Returns the loss before
/// the update and the (unclipped) per-parameter gradients.
pub fn train_step(model: &mut Model, adam: &mut Adam, dataset: &Dataset, indices: &[usize], config: &ExperimentConfig) -> Result<(LossReport, Vec<(ParamId, Tensor)>)> {
    let batch = dataset.batch(indices)?;
    let (report, grads) = {
        let mut fw = model.forward(&batch, true)?;
        let (total, report) = batch_loss(&mut fw, &batch.labels, config.train.stability_weight)?;
        if !report.total.is_finite() {
            return Err(Error::Diverged {
                epoch: 0,
                batch: 0,
                loss: report.total,
            });
        }
        let grads = fw.f.g.backward(total)?.param_grads();
        (report, grads)
    };
    let mut clipped = grads.clone();
    clip(&mut clipped, config.train.grad_clip);
    adam.step(&mut model.params, &clipped)?;
    Ok((report, grads))
}

/// Trains a freshly initialized model on `train_idx` with one shuffled
/// pass per epoch, reporting each epoch to `on_epoch`.
pub fn train<F>(dataset: &Dataset, train_idx: &[usize], val_idx: &[usize], config: &ExperimentConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord),
{
    config.validate()?;
    dataset.validate()?;
    if train_idx.is_empty() {
        return Err(Error::InvalidData("empty training split".into()));
    }
    let tc = &config.train;
    let mut model = Model::new(&dataset.kinds, dataset.n_labels, &config.model, tc.seed)?;
    let mut adam = Adam::new(
        &model.params,
        AdamConfig {
            lr: tc.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0xBA7C_4E5);
    let mut order = train_idx.to_vec();
    let mut history = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, crate::tensor::ParamStore)> = None;
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        for (bi, chunk) in batches(&order, tc.batch_size).iter().enumerate() {
            let (report, _) = train_step(&mut model, &mut adam, dataset, chunk, config).map_err(|e| match e {
                Error::Diverged { loss, .. } => Error::Diverged { epoch, batch: bi, loss },
                Error::NonFinite(msg) => Error::NonFinite(alloc::format!("epoch {epoch}, batch {bi}: {msg}")),
                other => other,
            })?;
            let w = chunk.len() as f64;
            sums[0] += w * report.prediction_loss;
            sums[1] += w * report.stability_loss;
            sums[2] += w * report.total;
        }
        let n = order.len() as f64;
        let (pred, stab) = (sums[0] / n, sums[1] / n);
        let mut record = EpochRecord {
            epoch,
            loss: LossReport {
                prediction_loss: pred,
                stability_loss: stab,
                total: pred + tc.stability_weight * stab,
                lambda: tc.stability_weight,
            },
            val_loss: None,
            val_micro_auc: None,
        };
        if !val_idx.is_empty() {
            let preds = predict(&model, dataset, val_idx, tc.batch_size, &[])?;
            record.val_loss = Some(preds.mean_loss);
            record.val_micro_auc = metrics::micro_macro_auc(&preds.scores, &preds.labels, preds.n_labels).ok().map(|a| a.micro);
            if best.as_ref().map_or(true, |(l, _, _)| preds.mean_loss < *l) {
                best = Some((preds.mean_loss, epoch, model.params.clone()));
            }
        }
        on_epoch(&record);
        history.push(record);
    }
    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, params)) = best {
        model.params = params;
    }
    Ok(TrainOutcome { model, history, best_epoch })
}

/// Model outputs for a list of patients, in the order given.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    /// `n × |C|` probabilities.
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub n_labels: usize,
    /// Mean per-patient cross-entropy.
    pub mean_loss: f64,
}

/// Runs the model over `indices` in consecutive batches. Each batch is
/// optionally extended with the `bank` patients as extra graph context;
/// only the requested patients are returned.
pub fn predict(model: &Model, dataset: &Dataset, indices: &[usize], batch_size: usize, bank: &[usize]) -> Result<Predictions> {
    if indices.is_empty() {
        return Err(Error::InvalidData("empty evaluation split".into()));
    }
    let c = dataset.n_labels;
    let mut scores = Vec::with_capacity(indices.len() * c);
    let mut labels = Vec::with_capacity(indices.len() * c);
    let mut loss_sum = 0.0;
    for chunk in batches(indices, batch_size) {
        let mut rows = chunk.clone();
        rows.extend(bank.iter().copied().filter(|i| !chunk.contains(i)));
        let batch = dataset.batch(&rows)?;
        let probs = model.predict(&batch)?;
        for (r, &i) in chunk.iter().enumerate() {
            let p = &probs[r * c..(r + 1) * c];
            let y = dataset.label_row(i);
            for (&pv, &yv) in p.iter().zip(y) {
                let pc = pv.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                loss_sum -= if yv != 0 { math::ln(pc) } else { math::ln(1.0 - pc) };
            }
            scores.extend_from_slice(p);
            labels.extend_from_slice(y);
        }
    }
    Ok(Predictions {
        scores,
        labels,
        n_labels: c,
        mean_loss: loss_sum / indices.len() as f64,
    })
}

/// The first `reference_bank` training patients, or none when disabled.
pub fn reference_bank(train_idx: &[usize], size: usize) -> Vec<usize> {
    train_idx.iter().copied().take(size).collect()
}

/// Predicts `test_idx` and computes the metric report with bootstrap
/// spread.
pub fn evaluate(model: &Model, dataset: &Dataset, test_idx: &[usize], bank: &[usize], config: &ExperimentConfig) -> Result<MetricReport> {
    let preds = predict(model, dataset, test_idx, config.train.batch_size, bank)?;
    metrics::report(
        &preds.scores,
        &preds.labels,
        preds.n_labels,
        preds.mean_loss,
        config.eval.bootstrap_resamples,
        config.eval.split_seed ^ config.train.seed,
    )
}

/// How much a patient's prediction moves when the evaluation set is
/// batched differently.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchDependence {
    pub mean_abs: f64,
    pub max_abs: f64,
}

/// Compares predictions under the given order with predictions under a
/// seeded reshuffle of the same patients.
pub fn batch_dependence(model: &Model, dataset: &Dataset, indices: &[usize], batch_size: usize, seed: u64) -> Result<BatchDependence> {
    let base = predict(model, dataset, indices, batch_size, &[])?;
    let mut perm: Vec<usize> = (0..indices.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let shuffled: Vec<usize> = perm.iter().map(|&k| indices[k]).collect();
    let other = predict(model, dataset, &shuffled, batch_size, &[])?;
    let c = dataset.n_labels;
    let (mut sum, mut max) = (0.0f64, 0.0f64);
    for (pos, &k) in perm.iter().enumerate() {
        for l in 0..c {
            let d = math::abs(base.scores[k * c + l] - other.scores[pos * c + l]);
            sum += d;
            max = max.max(d);
        }
    }
    Ok(BatchDependence {
        mean_abs: sum / base.scores.len() as f64,
        max_abs: max,
    })
}

