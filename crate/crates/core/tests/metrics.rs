use modalmend_core::metrics::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair_count_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut total = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                total += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / total
}

/// Average precision by sweeping every distinct score as a threshold
/// (predict positive when score ≥ t), from the highest down.
fn sweep_auprc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let positives = labels.iter().filter(|&&l| l == 1).count() as f64;
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    for t in thresholds {
        let mut tp = 0.0;
        let mut predicted = 0.0;
        for (s, l) in scores.iter().zip(labels) {
            if *s >= t {
                predicted += 1.0;
                if *l == 1 {
                    tp += 1.0;
                }
            }
        }
        let recall = tp / positives;
        ap += (recall - last_recall) * (tp / predicted);
        last_recall = recall;
    }
    ap
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    loop {
        let n = rng.random_range(2..=12);
        // a coarse grid produces plenty of ties
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..6)) / 5.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (scores, labels);
        }
    }
}

#[test]
fn worked_auroc_example() {
    let v = auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
    assert_eq!(v, 0.75);
    assert_eq!(pair_count_auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]), 0.75);
}

#[test]
fn auroc_edge_cases() {
    assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(auroc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
    assert!(auroc(&[0.1], &[1, 0]).is_err());
}

#[test]
fn auprc_edge_cases() {
    assert_eq!(auprc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
    let n = 7;
    let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
    let mut labels = vec![0u8; n];
    labels[n - 1] = 1;
    assert!((auprc(&scores, &labels).unwrap() - 1.0 / n as f64).abs() < 1e-15);
    assert!(auprc(&[0.1, 0.2], &[0, 0]).is_err());
}

#[test]
fn oracle_agreement_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..500 {
        let (s, l) = random_instance(&mut rng);
        assert!((auroc(&s, &l).unwrap() - pair_count_auroc(&s, &l)).abs() <= 1e-12);
        assert!((auprc(&s, &l).unwrap() - sweep_auprc(&s, &l)).abs() <= 1e-12);
    }
}

#[test]
fn micro_macro_examples() {
    let s = [0.1, 0.4, 0.35, 0.8];
    let l = [0, 0, 1, 1];
    let avg = micro_macro_auc(&s, &l, 1).unwrap();
    assert_eq!((avg.micro, avg.macro_), (0.75, 0.75));

    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let b = 30;
    let col: Vec<(f64, u8)> = (0..b).map(|_| (rng.random_range(0.0..1.0), u8::from(rng.random_bool(0.5)))).collect();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for &(s, y) in &col {
        scores.extend([s, s]);
        labels.extend([y, y]);
    }
    let avg = micro_macro_auc(&scores, &labels, 2).unwrap();
    assert!((avg.micro - avg.macro_).abs() <= 1e-12);

    let scores = [0.2, 0.9, 0.7, 0.1, 0.4, 0.3];
    let labels = [1, 0, 0, 0, 1, 0];
    let avg = micro_macro_auc(&scores, &labels, 2).unwrap();
    assert_eq!(avg.skipped, vec![1]);
    assert_eq!(avg.macro_, auroc(&[0.2, 0.7, 0.4], &[1, 0, 1]).unwrap());
    assert!(micro_macro_auc(&[0.1, 0.2], &[0, 0], 1).is_err());
}

#[test]
fn bootstrap_examples() {
    let scores = [0.1, 0.2, 0.8, 0.9];
    let labels = [0u8, 0, 1, 1];
    let metric = |idx: &[usize]| {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        auroc(&s, &l)
    };
    assert_eq!(bootstrap_std(4, 200, 1, metric).unwrap(), 0.0);

    let values = [1.0, 3.0];
    let mean = |idx: &[usize]| Ok(idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64);
    let a = bootstrap_std(2, 2, 9, mean).unwrap();
    assert_eq!(a, bootstrap_std(2, 2, 9, mean).unwrap());
    // enumerate the two draws the seeded generator produces
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws: Vec<f64> = (0..2)
        .map(|_| {
            let i: usize = rng.random_range(0..2);
            let j: usize = rng.random_range(0..2);
            (values[i] + values[j]) / 2.0
        })
        .collect();
    let m = (draws[0] + draws[1]) / 2.0;
    let expected = (((draws[0] - m).powi(2) + (draws[1] - m).powi(2)) / 2.0).sqrt();
    assert_eq!(a, expected);
}

#[test]
fn kfold_examples() {
    let folds = kfold_split(10, 10, 3).unwrap();
    assert!(folds.iter().all(|f| f.len() == 1));
    let folds = kfold_split(23, 10, 4).unwrap();
    let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..23).collect::<Vec<_>>());
    let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    assert_eq!(folds, kfold_split(23, 10, 4).unwrap());
    assert!(kfold_split(5, 10, 0).is_err());
}

#[test]
fn report_of_a_constant_predictor() {
    let scores = vec![0.5; 40];
    let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
    let r = report(&scores, &labels, 1, 0.69, 100, 0).unwrap();
    assert_eq!(r.auroc, 0.5);
    assert_eq!(r.micro_auc, 0.5);
    let perfect: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    let r = report(&perfect, &labels, 1, 0.0, 100, 0).unwrap();
    assert_eq!((r.micro_auc, r.auprc, r.accuracy), (1.0, 1.0, 1.0));
    assert_eq!(r.std.auroc, 0.0);
}

proptest! {
    #[test]
    fn complement_and_monotone_invariance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=12);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        labels[0] = 0;
        labels[1] = 1;
        let a = auroc(&scores, &labels).unwrap();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((a + auroc(&neg, &labels).unwrap() - 1.0).abs() <= 1e-12);
        let mono: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 1.0).collect();
        prop_assert_eq!(a, auroc(&mono, &labels).unwrap());
    }
}
