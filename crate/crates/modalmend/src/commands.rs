//! The experiment commands. Each takes a resolved [`RunConfig`], writes its
//! outputs plus `config.json` into the output directory and returns a short
//! summary for the terminal.

use std::fs;
use std::path::{Path, PathBuf};

use modalmend_core::data::{self, SyntheticSpec};
use modalmend_core::interaction::{patient_attention, FusionInput};
use modalmend_core::intuition::{self, IntuitionReport};
use modalmend_core::metrics::{self, MetricReport};
use modalmend_core::training::{self, EpochRecord};
use modalmend_core::{Dataset, ModalityKind, Protocol, Tensor};
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, CHECKPOINT_FILE};
use crate::config::{differing_keys, Representation, RunConfig, CONFIG_FILE};
use crate::error::Failure;
use crate::format;

pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_RUNS_FILE: &str = "sweep_runs.csv";
pub const INTUITION_CSV: &str = "intuition.csv";
pub const INTUITION_JSON: &str = "intuition.json";
pub const ATTENTION_DIR: &str = "attention";

/// Repeats of the intuition experiment are summed in this many fixed
/// chunks, so results do not depend on the worker count.
const INTUITION_CHUNKS: usize = 32;

/// Seed of the extra missingness injected when a run sets `missing`.
pub fn injection_seed(split_seed: u64) -> u64 {
    split_seed ^ 0x4D15_5ED0
}

/// Parses `vec:10,seq:6x8,grid:8x8` (sequence is length x features, grid
/// is height x width or channels x height x width).
pub fn parse_modalities(spec: &str) -> Result<Vec<ModalityKind>, Failure> {
    let bad = |item: &str, why: &str| Failure::Config(format!("modality {item:?}: {why}"));
    let mut kinds = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (tag, dims) = item.split_once(':').ok_or_else(|| bad(item, "expected kind:dims"))?;
        let dims: Vec<usize> = dims
            .split('x')
            .map(|d| d.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(item, "dimensions must be positive integers"))?;
        let kind = match (tag.trim(), dims.as_slice()) {
            ("vec" | "vector", &[dim]) => ModalityKind::Vector { dim },
            ("seq" | "sequence", &[len, dim]) => ModalityKind::Sequence { len, dim },
            ("grid", &[height, width]) => ModalityKind::Grid { channels: 1, height, width },
            ("grid", &[channels, height, width]) => ModalityKind::Grid { channels, height, width },
            _ => return Err(bad(item, "use vec:D, seq:LxD, grid:HxW or grid:CxHxW")),
        };
        kind.validate().map_err(|e| bad(item, &e.to_string()))?;
        kinds.push(kind);
    }
    if kinds.is_empty() {
        return Err(Failure::Config("no modalities given".into()));
    }
    Ok(kinds)
}

fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, Failure> {
    value.as_ref().ok_or_else(|| Failure::Config(format!("{flag} is required")))
}

/// Creates the output directory. An existing non-empty directory is only
/// reused with `force`.
pub fn prepare_out(config: &RunConfig, force: bool) -> Result<PathBuf, Failure> {
    let out = require(&config.out, "--out")?.clone();
    if out.exists() {
        if !out.is_dir() {
            return Err(Failure::Config(format!("{} exists and is not a directory", out.display())));
        }
        let non_empty = fs::read_dir(&out).map_err(|e| Failure::io(&out, e))?.next().is_some();
        if non_empty && !force {
            return Err(Failure::Config(format!("{} already exists; pass --force to overwrite", out.display())));
        }
    }
    fs::create_dir_all(&out).map_err(|e| Failure::io(&out, e))?;
    Ok(out)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

fn write_config(out: &Path, config: &RunConfig) -> Result<(), Failure> {
    write(&out.join(CONFIG_FILE), config.to_json())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write(path, s)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Failure::io(path, e))
}

/// Loads the configured dataset and applies any extra missingness.
pub fn load_data(config: &RunConfig) -> Result<Dataset, Failure> {
    let dir = require(&config.data, "--data")?;
    let dataset = format::read_dataset(dir)?;
    match &config.missing {
        Some(rates) => Ok(data::inject_missingness(&dataset, rates, injection_seed(config.eval.split_seed))?),
        None => Ok(dataset),
    }
}

type Split = (Vec<usize>, Vec<usize>, Vec<usize>);

fn split(config: &RunConfig, n: usize) -> Result<Split, Failure> {
    let e = &config.eval;
    Ok(data::split_indices(n, e.train_fraction, e.val_fraction, e.split_seed)?)
}

pub fn synth(config: &RunConfig, force: bool) -> Result<String, Failure> {
    let s = &config.synth;
    let kinds = parse_modalities(&s.modalities)?;
    let as_config = |e: modalmend_core::Error| Failure::Config(e.to_string());
    if s.patients == 0 {
        return Err(Failure::Config("--patients must be positive".into()));
    }
    if let Some(r) = &config.missing {
        if r.len() != kinds.len() {
            return Err(Failure::Config(format!("--missing lists {} rates for {} modalities", r.len(), kinds.len())));
        }
    }
    let spec = SyntheticSpec::random(&kinds, s.latent_dim, s.labels, s.noise, s.seed).map_err(as_config)?;
    let mut dataset = data::generate(&spec, s.patients, s.seed.wrapping_add(1)).map_err(as_config)?;
    if let Some(rates) = &config.missing {
        dataset = data::inject_missingness(&dataset, rates, s.seed.wrapping_add(2)).map_err(as_config)?;
    }
    dataset.seed = s.seed;
    let out = prepare_out(config, force)?;
    let manifest = format::write_dataset(&dataset, &out)?;
    write_config(&out, config)?;
    Ok(format::manifest_json(&manifest))
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    prediction: f64,
    stability: f64,
    lambda: f64,
    total: f64,
    val_loss: Option<f64>,
    val_micro_auc: Option<f64>,
}

fn history_rows(history: &[EpochRecord]) -> Vec<HistoryRow> {
    history
        .iter()
        .map(|r| HistoryRow {
            epoch: r.epoch,
            prediction: r.loss.prediction_loss,
            stability: r.loss.stability_loss,
            lambda: r.loss.lambda,
            total: r.loss.total,
            val_loss: r.val_loss,
            val_micro_auc: r.val_micro_auc,
        })
        .collect()
}

pub fn train(config: &RunConfig, force: bool, progress: bool) -> Result<String, Failure> {
    let dataset = load_data(config)?;
    let (tr, va, _) = split(config, dataset.n_patients())?;
    let out = prepare_out(config, force)?;
    write_config(&out, config)?;
    let epochs = config.train.epochs;
    let mut seen: Vec<EpochRecord> = Vec::new();
    let result = training::train(&dataset, &tr, &va, &config.experiment(), |r| {
        if progress {
            eprintln!(
                "epoch {}/{epochs}: loss {:.6} (prediction {:.6}, stability {:.6}) val_loss {}",
                r.epoch + 1,
                r.loss.total,
                r.loss.prediction_loss,
                r.loss.stability_loss,
                r.val_loss.map_or("-".into(), |v| format!("{v:.6}"))
            );
        }
        seen.push(r.clone());
    });
    write_csv(&out.join(HISTORY_FILE), &history_rows(&seen))?;
    let outcome = result?;
    Checkpoint::new(config, &outcome.model, outcome.best_epoch).save(&out.join(CHECKPOINT_FILE))?;
    let last = outcome.history.last();
    Ok(format!(
        "trained {} for {} epochs on {} patients; best epoch {}; final loss {}\n",
        config.model.variant.name(),
        outcome.history.len(),
        tr.len(),
        outcome.best_epoch.map_or("-".into(), |e| e.to_string()),
        last.map_or("-".into(), |r| r.loss.total.to_string()),
    ))
}

/// Loads the configured checkpoint and checks that `config` agrees with
/// the architecture it was trained with.
pub fn load_checkpoint(config: &RunConfig) -> Result<Checkpoint, Failure> {
    let path = require(&config.checkpoint, "--checkpoint")?;
    let ck = Checkpoint::load(path)?;
    let a = serde_json::to_value(&ck.config.model).expect("serializable");
    let b = serde_json::to_value(&config.model).expect("serializable");
    let diff = differing_keys(&a, &b, "model");
    if !diff.is_empty() {
        return Err(Failure::Config(format!("configuration does not match checkpoint {}: {}", path.display(), diff.join(", "))));
    }
    Ok(ck)
}

fn check_shape(ck: &Checkpoint, dataset: &Dataset) -> Result<(), Failure> {
    if ck.kinds != dataset.kinds || ck.n_labels != dataset.n_labels {
        return Err(Failure::Data(format!(
            "dataset modalities {:?} with {} labels do not match the checkpoint's {:?} with {} labels",
            dataset.kinds, dataset.n_labels, ck.kinds, ck.n_labels
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct MetricsRow {
    fold: String,
    n_patients: usize,
    auroc: f64,
    auprc: f64,
    accuracy: f64,
    micro_auc: f64,
    macro_auc: f64,
    mean_test_loss: f64,
    auroc_std: f64,
    auprc_std: f64,
    accuracy_std: f64,
    micro_auc_std: f64,
    macro_auc_std: f64,
    skipped_labels: String,
}

fn metrics_row(label: String, r: &MetricReport) -> MetricsRow {
    MetricsRow {
        fold: label,
        n_patients: r.n_patients,
        auroc: r.auroc,
        auprc: r.auprc,
        accuracy: r.accuracy,
        micro_auc: r.micro_auc,
        macro_auc: r.macro_auc,
        mean_test_loss: r.mean_test_loss,
        auroc_std: r.std.auroc,
        auprc_std: r.std.auprc,
        accuracy_std: r.std.accuracy,
        micro_auc_std: r.std.micro_auc,
        macro_auc_std: r.std.macro_auc,
        skipped_labels: r.skipped_labels.iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
    }
}

/// Result of `eval`: one report per fold (a single one under bootstrap)
/// and the summary report.
#[derive(Clone, Debug, Serialize)]
pub struct EvalOutput {
    pub protocol: Protocol,
    pub folds: Vec<MetricReport>,
    pub summary: MetricReport,
}

pub fn evaluate(config: &RunConfig) -> Result<EvalOutput, Failure> {
    let dataset = load_data(config)?;
    let exp = config.experiment();
    match config.eval.protocol {
        Protocol::Bootstrap => {
            let ck = load_checkpoint(config)?;
            check_shape(&ck, &dataset)?;
            let model = ck.model()?;
            let (tr, _, te) = split(config, dataset.n_patients())?;
            let bank = training::reference_bank(&tr, config.train.reference_bank);
            let report = training::evaluate(&model, &dataset, &te, &bank, &exp)?;
            Ok(EvalOutput {
                protocol: Protocol::Bootstrap,
                folds: vec![report.clone()],
                summary: report,
            })
        }
        Protocol::KFold => {
            if config.checkpoint.is_some() {
                load_checkpoint(config).and_then(|ck| check_shape(&ck, &dataset))?;
            }
            let folds = metrics::kfold_split(dataset.n_patients(), config.eval.folds, config.eval.split_seed)?;
            let reports: Vec<MetricReport> = (0..folds.len())
                .into_par_iter()
                .map(|k| -> Result<MetricReport, Failure> {
                    let rest: Vec<usize> = folds.iter().enumerate().filter(|&(j, _)| j != k).flat_map(|(_, f)| f.iter().copied()).collect();
                    let n_val = ((rest.len() as f64 * config.eval.val_fraction).round() as usize).min(rest.len() - 1);
                    let (va, tr) = rest.split_at(n_val);
                    let mut fold_exp = exp.clone();
                    fold_exp.train.seed = exp.train.seed.wrapping_add(k as u64);
                    let outcome = training::train(&dataset, tr, va, &fold_exp, |_| {})?;
                    let bank = training::reference_bank(tr, config.train.reference_bank);
                    let mut report = training::evaluate(&outcome.model, &dataset, &folds[k], &bank, &fold_exp)?;
                    report.fold = Some(k);
                    Ok(report)
                })
                .collect::<Result<_, _>>()?;
            let summary = metrics::aggregate_folds(&reports)?;
            Ok(EvalOutput {
                protocol: Protocol::KFold,
                folds: reports,
                summary,
            })
        }
    }
}

pub fn eval(config: &RunConfig, force: bool) -> Result<String, Failure> {
    let output = evaluate(config)?;
    let out = prepare_out(config, force)?;
    write_config(&out, config)?;
    write_json(&out.join(METRICS_JSON), &output)?;
    let mut rows: Vec<MetricsRow> = Vec::new();
    if output.protocol == Protocol::KFold {
        rows.extend(output.folds.iter().map(|r| metrics_row(r.fold.map_or("-".into(), |f| f.to_string()), r)));
        rows.push(metrics_row("mean".into(), &output.summary));
    } else {
        rows.push(metrics_row("test".into(), &output.summary));
    }
    write_csv(&out.join(METRICS_CSV), &rows)?;
    let s = &output.summary;
    Ok(format!(
        "micro-AUC {:.4} ± {:.4}, macro-AUC {:.4}, AUROC {:.4}, AUPRC {:.4}, accuracy {:.4} on {} patients\n",
        s.micro_auc, s.std.micro_auc, s.macro_auc, s.auroc, s.auprc, s.accuracy, s.n_patients
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRun {
    pub rate: f64,
    pub seed: usize,
    pub micro_auc: f64,
    pub macro_auc: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub accuracy: f64,
    pub test_loss: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub rate: f64,
    pub runs: usize,
    pub micro_auc_mean: f64,
    pub micro_auc_std: f64,
    pub macro_auc_mean: f64,
    pub auroc_mean: f64,
    pub auprc_mean: f64,
}

/// Trains and tests one model per (rate, seed) with `rate` added to every
/// modality's missingness.
pub fn sweep_runs(config: &RunConfig, dataset: &Dataset) -> Result<Vec<SweepRun>, Failure> {
    let jobs: Vec<(f64, usize)> = config.sweep.rates.iter().flat_map(|&r| (0..config.sweep.seeds).map(move |s| (r, s))).collect();
    if jobs.is_empty() {
        return Err(Failure::Config("sweep needs at least one rate and one seed".into()));
    }
    jobs.into_par_iter()
        .map(|(rate, s)| -> Result<SweepRun, Failure> {
            let mut exp = config.experiment();
            exp.train.seed = exp.train.seed.wrapping_add(s as u64);
            exp.eval.split_seed = exp.eval.split_seed.wrapping_add(s as u64);
            let rates = vec![rate; dataset.n_modalities()];
            let ds = data::inject_missingness(dataset, &rates, injection_seed(exp.eval.split_seed))?;
            let (tr, va, te) = data::split_indices(ds.n_patients(), exp.eval.train_fraction, exp.eval.val_fraction, exp.eval.split_seed)?;
            let outcome = training::train(&ds, &tr, &va, &exp, |_| {})?;
            let bank = training::reference_bank(&tr, exp.train.reference_bank);
            let preds = training::predict(&outcome.model, &ds, &te, exp.train.batch_size, &bank)?;
            let r = metrics::report(&preds.scores, &preds.labels, preds.n_labels, preds.mean_loss, 0, 0)?;
            Ok(SweepRun {
                rate,
                seed: s,
                micro_auc: r.micro_auc,
                macro_auc: r.macro_auc,
                auroc: r.auroc,
                auprc: r.auprc,
                accuracy: r.accuracy,
                test_loss: r.mean_test_loss,
            })
        })
        .collect()
}

pub fn summarize_sweep(rates: &[f64], runs: &[SweepRun]) -> Vec<SweepRow> {
    rates
        .iter()
        .map(|&rate| {
            let group: Vec<&SweepRun> = runs.iter().filter(|r| r.rate == rate).collect();
            let col = |get: fn(&SweepRun) -> f64| metrics::mean_std(&group.iter().map(|r| get(r)).collect::<Vec<_>>());
            let (micro, micro_sd) = col(|r| r.micro_auc);
            SweepRow {
                rate,
                runs: group.len(),
                micro_auc_mean: micro,
                micro_auc_std: micro_sd,
                macro_auc_mean: col(|r| r.macro_auc).0,
                auroc_mean: col(|r| r.auroc).0,
                auprc_mean: col(|r| r.auprc).0,
            }
        })
        .collect()
}

pub fn sweep(config: &RunConfig, force: bool) -> Result<String, Failure> {
    if let Some(r) = config.sweep.rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Failure::Config(format!("sweep rate {r} outside [0, 1)")));
    }
    let dataset = load_data(config)?;
    let runs = sweep_runs(config, &dataset)?;
    let rows = summarize_sweep(&config.sweep.rates, &runs);
    let out = prepare_out(config, force)?;
    write_config(&out, config)?;
    write_csv(&out.join(SWEEP_RUNS_FILE), &runs)?;
    write_csv(&out.join(SWEEP_FILE), &rows)?;
    let mut text = String::from("rate  micro-AUC (mean ± std)\n");
    for r in &rows {
        text.push_str(&format!("{:.2}  {:.4} ± {:.4}\n", r.rate, r.micro_auc_mean, r.micro_auc_std));
    }
    Ok(text)
}

/// Runs the repeats in fixed chunks across workers and merges them.
pub fn intuition_report(ha: &Tensor, hb: &Tensor, cfg: &intuition::IntuitionConfig) -> Result<IntuitionReport, Failure> {
    let repeats: Vec<usize> = (0..cfg.n_repeats).collect();
    let chunk = repeats.len().div_ceil(INTUITION_CHUNKS).max(1);
    let partials: Vec<Vec<(f64, f64)>> = repeats
        .par_chunks(chunk)
        .map(|c| intuition::run_repeats(ha, hb, cfg, c))
        .collect::<Result<_, _>>()?;
    Ok(intuition::finish(ha, hb, cfg, &partials)?)
}

#[derive(Serialize)]
struct IntuitionRow {
    metric: &'static str,
    norm: &'static str,
    original: f64,
    noise: f64,
    shuffle: f64,
}

#[derive(Serialize)]
struct IntuitionOutput<'a> {
    pair: [usize; 2],
    representation: Representation,
    n_patients: usize,
    report: &'a IntuitionReport,
}

pub fn intuition_cmd(config: &RunConfig, force: bool) -> Result<String, Failure> {
    let dataset = load_data(config)?;
    let s = &config.intuition;
    let [a, b] = s.pair;
    let m = dataset.n_modalities();
    if a >= m || b >= m || a == b {
        return Err(Failure::Config(format!("intuition pair {a},{b} must name two distinct modalities below {m}")));
    }
    let (mut ha, mut hb) = match s.representation {
        Representation::Observed => {
            let patients = intuition::paired_patients(&dataset, a, b);
            (intuition::observed_rows(&dataset, a, &patients), intuition::observed_rows(&dataset, b, &patients))
        }
        Representation::Trained => {
            let (ha, hb, _) = intuition::trained_representations(&dataset, a, b, &config.experiment())?;
            (ha, hb)
        }
    };
    if let Some(cap) = s.max_patients {
        ha = first_rows(&ha, cap);
        hb = first_rows(&hb, cap);
    }
    if ha.shape()[0] < 2 {
        return Err(Failure::Data(format!("only {} patients observe both modalities {a} and {b}", ha.shape()[0])));
    }
    let report = intuition_report(&ha, &hb, &s.experiment())?;
    let out = prepare_out(config, force)?;
    write_config(&out, config)?;
    let rows: Vec<IntuitionRow> = report
        .cells
        .iter()
        .map(|c| IntuitionRow {
            metric: c.metric.name(),
            norm: c.norm.name(),
            original: c.original,
            noise: c.noise_mean,
            shuffle: c.shuffle_mean,
        })
        .collect();
    write_csv(&out.join(INTUITION_CSV), &rows)?;
    write_json(
        &out.join(INTUITION_JSON),
        &IntuitionOutput {
            pair: s.pair,
            representation: s.representation,
            n_patients: ha.shape()[0],
            report: &report,
        },
    )?;
    let mut text = format!("{:<22}{:<11}{:>12}{:>12}{:>12}\n", "metric", "norm", "original", "noise", "shuffle");
    for r in &rows {
        text.push_str(&format!("{:<22}{:<11}{:>12.6}{:>12.6}{:>12.6}\n", r.metric, r.norm, r.original, r.noise, r.shuffle));
    }
    Ok(text)
}

fn first_rows(h: &Tensor, cap: usize) -> Tensor {
    let (n, d) = (h.shape()[0], h.shape()[1]);
    let keep = n.min(cap);
    Tensor::new(vec![keep, d], h.data()[..keep * d].to_vec()).expect("row slice")
}

/// Label of each fusion position: `cls`, or `m{modality}.{offset}` within
/// the modality's block.
pub fn token_labels(input: &FusionInput) -> Vec<String> {
    let mut seen = Vec::new();
    input
        .token_modality
        .iter()
        .map(|t| match *t {
            None => "cls".to_string(),
            Some(m) => {
                if seen.len() <= m {
                    seen.resize(m + 1, 0usize);
                }
                seen[m] += 1;
                format!("m{m}.{}", seen[m] - 1)
            }
        })
        .collect()
}

/// One attention matrix restricted to a patient's real tokens.
pub struct AttentionMatrix {
    pub patient: usize,
    pub layer: usize,
    pub head: usize,
    pub labels: Vec<String>,
    /// Row-major, `labels.len()` squared.
    pub weights: Vec<f64>,
}

pub fn attention_matrices(config: &RunConfig) -> Result<Vec<AttentionMatrix>, Failure> {
    let ck = load_checkpoint(config)?;
    let dataset = load_data(config)?;
    check_shape(&ck, &dataset)?;
    let model = ck.model()?;
    let (tr, _, te) = split(config, dataset.n_patients())?;
    let patients: Vec<usize> = if config.attention.patients.is_empty() {
        te.iter().copied().take(config.attention.limit).collect()
    } else {
        config.attention.patients.clone()
    };
    if let Some(&p) = patients.iter().find(|&&p| p >= dataset.n_patients()) {
        return Err(Failure::Config(format!("patient {p} out of range (dataset has {})", dataset.n_patients())));
    }
    if patients.is_empty() {
        return Err(Failure::Config("no patients selected".into()));
    }
    let mut rows = patients.clone();
    rows.extend(training::reference_bank(&tr, config.train.reference_bank).into_iter().filter(|i| !patients.contains(i)));
    let batch = dataset.batch(&rows)?;
    let fwd = model.forward(&batch, false)?;
    let labels = token_labels(&fwd.fusion_input);
    let mut out = Vec::new();
    for (i, &patient) in patients.iter().enumerate() {
        for (l, heads) in fwd.attention.iter().enumerate() {
            for (h, &w) in heads.iter().enumerate() {
                let (pos, weights) = patient_attention(fwd.f.g.value(w), &fwd.fusion_input, i);
                out.push(AttentionMatrix {
                    patient,
                    layer: l,
                    head: h,
                    labels: pos.iter().map(|&p| labels[p].clone()).collect(),
                    weights,
                });
            }
        }
    }
    Ok(out)
}

pub fn dump_attention(config: &RunConfig, force: bool) -> Result<String, Failure> {
    let matrices = attention_matrices(config)?;
    let out = prepare_out(config, force)?;
    write_config(&out, config)?;
    let dir = out.join(ATTENTION_DIR);
    fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
    for m in &matrices {
        let path = dir.join(format!("patient{}_layer{}_head{}.csv", m.patient, m.layer, m.head));
        let mut w = csv::Writer::from_path(&path).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
        let fail = |e: csv::Error| Failure::Other(format!("{}: {e}", path.display()));
        let mut header = vec!["query".to_string()];
        header.extend(m.labels.iter().cloned());
        w.write_record(&header).map_err(fail)?;
        let t = m.labels.len();
        for (r, label) in m.labels.iter().enumerate() {
            let mut record = vec![label.clone()];
            record.extend(m.weights[r * t..(r + 1) * t].iter().map(f64::to_string));
            w.write_record(&record).map_err(fail)?;
        }
        w.flush().map_err(|e| Failure::io(&path, e))?;
    }
    Ok(format!("wrote {} attention matrices to {}\n", matrices.len(), dir.display()))
}
