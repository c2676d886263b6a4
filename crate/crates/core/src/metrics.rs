//! Ranking metrics and resampling protocols.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

fn check_pair(op: &'static str, scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![scores.len()],
            rhs: vec![labels.len()],
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite(alloc::format!("{op}: NaN score")));
    }
    Ok(())
}

/// Area under the ROC curve as the Mann–Whitney statistic, ties counted
/// at their midrank.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_pair("auroc", scores, labels)?;
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateMetric("auroc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] != 0 {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Average precision, `Σ (R_n − R_{n−1}) P_n` over descending distinct
/// score thresholds.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_pair("auprc", scores, labels)?;
    let pos = labels.iter().filter(|&&l| l != 0).count();
    if pos == 0 {
        return Err(Error::DegenerateMetric("auprc needs a positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            if labels[k] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

/// Fraction of entries where `score ≥ 0.5` agrees with the label.
pub fn accuracy(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_pair("accuracy", scores, labels)?;
    if scores.is_empty() {
        return Err(Error::DegenerateMetric("accuracy of an empty set".into()));
    }
    let hits = scores.iter().zip(labels).filter(|(&s, &l)| (s >= 0.5) == (l != 0)).count();
    Ok(hits as f64 / scores.len() as f64)
}

fn column(values: &[f64], n_labels: usize, c: usize) -> Vec<f64> {
    values.iter().skip(c).step_by(n_labels).copied().collect()
}

fn label_column(labels: &[u8], n_labels: usize, c: usize) -> Vec<u8> {
    labels.iter().skip(c).step_by(n_labels).copied().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelAverages {
    pub micro: f64,
    pub macro_: f64,
    /// Labels left out of the macro mean because one class was absent.
    pub skipped: Vec<usize>,
}

fn per_label(scores: &[f64], labels: &[u8], n_labels: usize, metric: fn(&[f64], &[u8]) -> Result<f64>) -> Result<(f64, Vec<usize>)> {
    let mut sum = 0.0;
    let mut used = 0;
    let mut skipped = Vec::new();
    for c in 0..n_labels {
        match metric(&column(scores, n_labels, c), &label_column(labels, n_labels, c)) {
            Ok(v) => {
                sum += v;
                used += 1;
            }
            Err(Error::DegenerateMetric(_)) => skipped.push(c),
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::DegenerateMetric("every label is single-class".into()));
    }
    Ok((sum / used as f64, skipped))
}

/// Micro AUC over the flattened `B·|C|` pairs and macro AUC as the mean of
/// per-label AUCs, skipping single-class labels.
pub fn micro_macro_auc(scores: &[f64], labels: &[u8], n_labels: usize) -> Result<LabelAverages> {
    check_pair("micro_macro_auc", scores, labels)?;
    if n_labels == 0 || scores.len() % n_labels != 0 {
        return Err(Error::invalid("micro_macro_auc", "score count is not a multiple of the label count"));
    }
    let (macro_, skipped) = per_label(scores, labels, n_labels, auroc)?;
    let micro = auroc(scores, labels)?;
    Ok(LabelAverages { micro, macro_, skipped })
}

/// Standard deviation (population form) of `metric` over `resamples`
/// bootstrap draws of `0..n`. Draws on which the metric is undefined are
/// replaced by fresh draws.
pub fn bootstrap_std<F>(n: usize, resamples: usize, seed: u64, metric: F) -> Result<f64>
where
    F: Fn(&[usize]) -> Result<f64>,
{
    if n == 0 {
        return Err(Error::DegenerateMetric("bootstrap of an empty set".into()));
    }
    if resamples == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(resamples);
    let mut idx = vec![0usize; n];
    let mut failures = 0usize;
    while values.len() < resamples {
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        match metric(&idx) {
            Ok(v) => values.push(v),
            Err(Error::DegenerateMetric(_)) => {
                failures += 1;
                if failures > 100 * resamples.max(10) {
                    return Err(Error::DegenerateMetric("bootstrap draws are almost never valid".into()));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(mean_std(&values).1)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

/// Shuffles `0..n` and deals it into `k` folds whose sizes differ by at
/// most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || n < k {
        return Err(Error::invalid("kfold_split", alloc::format!("cannot make {k} folds from {n} items")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

/// Spread of each metric: bootstrap std for a single split, std across
/// folds for cross-validation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricStd {
    pub auroc: f64,
    pub auprc: f64,
    pub accuracy: f64,
    pub micro_auc: f64,
    pub macro_auc: f64,
}

/// `auroc` and `auprc` are per-label means (they coincide with the plain
/// metrics for a single label); `micro_auc` pools all label-score pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: f64,
    pub auprc: f64,
    pub accuracy: f64,
    pub micro_auc: f64,
    pub macro_auc: f64,
    pub mean_test_loss: f64,
    pub std: MetricStd,
    pub skipped_labels: Vec<usize>,
    pub n_patients: usize,
    pub fold: Option<usize>,
}

struct Point {
    auroc: f64,
    auprc: f64,
    accuracy: f64,
    micro: f64,
    macro_: f64,
}

fn point(scores: &[f64], labels: &[u8], n_labels: usize) -> Result<(Point, Vec<usize>)> {
    let avg = micro_macro_auc(scores, labels, n_labels)?;
    let (auprc, _) = per_label(scores, labels, n_labels, auprc)?;
    Ok((
        Point {
            auroc: avg.macro_,
            auprc,
            accuracy: accuracy(scores, labels)?,
            micro: avg.micro,
            macro_: avg.macro_,
        },
        avg.skipped,
    ))
}

fn gather(scores: &[f64], labels: &[u8], n_labels: usize, idx: &[usize]) -> (Vec<f64>, Vec<u8>) {
    let mut s = Vec::with_capacity(idx.len() * n_labels);
    let mut l = Vec::with_capacity(idx.len() * n_labels);
    for &i in idx {
        s.extend_from_slice(&scores[i * n_labels..(i + 1) * n_labels]);
        l.extend_from_slice(&labels[i * n_labels..(i + 1) * n_labels]);
    }
    (s, l)
}

/// Full report for one evaluation set, with bootstrap standard deviations.
pub fn report(scores: &[f64], labels: &[u8], n_labels: usize, mean_loss: f64, resamples: usize, seed: u64) -> Result<MetricReport> {
    check_pair("report", scores, labels)?;
    if n_labels == 0 || scores.is_empty() || scores.len() % n_labels != 0 {
        return Err(Error::DegenerateMetric("empty or ragged evaluation set".into()));
    }
    let n = scores.len() / n_labels;
    let (p, skipped) = point(scores, labels, n_labels)?;
    let mut draws: Vec<Point> = Vec::new();
    if resamples > 0 {
        let cell = core::cell::RefCell::new(&mut draws);
        bootstrap_std(n, resamples, seed, |idx| {
            let (s, l) = gather(scores, labels, n_labels, idx);
            let (pt, _) = point(&s, &l, n_labels)?;
            cell.borrow_mut().push(pt);
            Ok(0.0)
        })?;
    }
    let sd = |get: fn(&Point) -> f64| mean_std(&draws.iter().map(get).collect::<Vec<_>>()).1;
    let std = if draws.is_empty() {
        MetricStd::default()
    } else {
        MetricStd {
            auroc: sd(|p| p.auroc),
            auprc: sd(|p| p.auprc),
            accuracy: sd(|p| p.accuracy),
            micro_auc: sd(|p| p.micro),
            macro_auc: sd(|p| p.macro_),
        }
    };
    Ok(MetricReport {
        auroc: p.auroc,
        auprc: p.auprc,
        accuracy: p.accuracy,
        micro_auc: p.micro,
        macro_auc: p.macro_,
        mean_test_loss: mean_loss,
        std,
        skipped_labels: skipped,
        n_patients: n,
        fold: None,
    })
}

/// Mean over folds, with the across-fold standard deviation as spread.
pub fn aggregate_folds(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::DegenerateMetric("no folds to aggregate".into()));
    }
    let stat = |get: fn(&MetricReport) -> f64| mean_std(&reports.iter().map(get).collect::<Vec<_>>());
    let (auroc, auroc_sd) = stat(|r| r.auroc);
    let (auprc, auprc_sd) = stat(|r| r.auprc);
    let (acc, acc_sd) = stat(|r| r.accuracy);
    let (micro, micro_sd) = stat(|r| r.micro_auc);
    let (macro_, macro_sd) = stat(|r| r.macro_auc);
    let (loss, _) = stat(|r| r.mean_test_loss);
    let mut skipped: Vec<usize> = reports.iter().flat_map(|r| r.skipped_labels.iter().copied()).collect();
    skipped.sort_unstable();
    skipped.dedup();
    Ok(MetricReport {
        auroc,
        auprc,
        accuracy: acc,
        micro_auc: micro,
        macro_auc: macro_,
        mean_test_loss: loss,
        std: MetricStd {
            auroc: auroc_sd,
            auprc: auprc_sd,
            accuracy: acc_sd,
            micro_auc: micro_sd,
            macro_auc: macro_sd,
        },
        skipped_labels: skipped,
        n_patients: reports.iter().map(|r| r.n_patients).sum(),
        fold: None,
    })
}
