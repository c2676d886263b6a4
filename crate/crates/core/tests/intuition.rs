use modalmend_core::intuition::*;
use modalmend_core::testing::random_tensor;
use modalmend_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Largest singular value via cyclic Jacobi on the symmetric `AᵀA`.
fn jacobi_largest_singular(a: &Tensor) -> f64 {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let mut m = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in 0..c {
            m[i][j] = (0..r).map(|k| a.at(k, i) * a.at(k, j)).sum();
        }
    }
    for _ in 0..100 {
        let off: f64 = (0..c).flat_map(|i| (0..c).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..c {
            for q in p + 1..c {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..c {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = cs * mkp - sn * mkq;
                    m[k][q] = sn * mkp + cs * mkq;
                }
                for k in 0..c {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = cs * mpk - sn * mqk;
                    m[q][k] = sn * mpk + cs * mqk;
                }
            }
        }
    }
    (0..c).map(|i| m[i][i]).fold(0.0, f64::max).sqrt()
}

#[test]
fn identical_rows_give_all_ones() {
    let h = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
    for metric in SimilarityMetric::ALL {
        let s = similarity_matrix(&h, metric).unwrap();
        assert!(s.data().iter().all(|&v| (v - 1.0).abs() < 1e-15), "{metric:?}");
    }
}

#[test]
fn orthogonal_rows_under_cosine_give_one_half() {
    let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let s = similarity_matrix(&h, SimilarityMetric::Cosine).unwrap();
    assert_eq!(s.data(), &[1.0, 0.5, 0.5, 1.0]);
}

#[test]
fn cosine_names_the_zero_row() {
    let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
    let err = similarity_matrix(&h, SimilarityMetric::Cosine).unwrap_err();
    assert!(err.to_string().contains("row 1"));
    assert!(similarity_matrix(&Tensor::zeros(&[1, 2]), SimilarityMetric::Rbf).is_err());
}

#[test]
fn rbf_diagonal_and_euclidean_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let h = random_tensor(&mut rng, &[7, 3], 1.0);
    let s = similarity_matrix(&h, SimilarityMetric::Rbf).unwrap();
    for i in 0..7 {
        assert_eq!(s.at(i, i), 1.0);
    }
    let e = similarity_matrix(&h, SimilarityMetric::NormalizedEuclidean).unwrap();
    assert!(e.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(e.data().iter().any(|&v| v == 0.0));
}

#[test]
fn norm_closed_forms() {
    let z = Tensor::zeros(&[4, 4]);
    let i = Tensor::identity(4);
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let a = random_tensor(&mut rng, &[4, 4], 1.0);
    for norm in MatrixNorm::ALL {
        assert_eq!(difference_norm(&a, &a, norm).unwrap(), 0.0);
    }
    assert!((difference_norm(&i, &z, MatrixNorm::Frobenius).unwrap() - 2.0).abs() < 1e-15);
    assert!((difference_norm(&i, &z, MatrixNorm::Spectral).unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(difference_norm(&i, &z, MatrixNorm::MeanAbs).unwrap(), 0.25);
    assert!(difference_norm(&i, &Tensor::zeros(&[3, 3]), MatrixNorm::Frobenius).is_err());
}

#[test]
fn spectral_norm_matches_jacobi_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    for _ in 0..20 {
        let a = random_tensor(&mut rng, &[6, 6], 1.0);
        let got = difference_norm(&a, &Tensor::zeros(&[6, 6]), MatrixNorm::Spectral).unwrap();
        let want = jacobi_largest_singular(&a);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn identical_modalities_without_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let h = random_tensor(&mut rng, &[12, 4], 1.0);
    let cfg = IntuitionConfig { n_repeats: 20, noise_std: 0.0, seed: 5 };
    let r = run_experiment(&h, &h, &cfg).unwrap();
    assert_eq!(r.cells.len(), 9);
    for c in &r.cells {
        assert_eq!(c.original, 0.0);
        assert_eq!(c.noise_mean, 0.0);
        assert!(c.shuffle_mean > 0.0);
    }
}

#[test]
fn noise_free_arm_equals_original_and_identity_shuffle_too() {
    let mut rng = ChaCha8Rng::seed_from_u64(65);
    let ha = random_tensor(&mut rng, &[10, 3], 1.0);
    let hb = random_tensor(&mut rng, &[10, 3], 1.0);
    let r = run_experiment(&ha, &hb, &IntuitionConfig { n_repeats: 5, noise_std: 0.0, seed: 1 }).unwrap();
    for c in &r.cells {
        assert!((c.noise_mean - c.original).abs() < 1e-12);
    }
    let sims: Vec<Tensor> = SimilarityMetric::ALL.iter().map(|&m| similarity_matrix(&ha, m).unwrap()).collect();
    let p = Perturbation { noise: vec![0.0; 30], permutation: (0..10).collect() };
    let diffs = repeat_differences(&sims, &hb, &p).unwrap();
    for (c, (_, shuffle)) in r.cells.iter().zip(diffs) {
        assert_eq!(shuffle, c.original);
    }
}

#[test]
fn report_is_deterministic_and_splittable() {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let ha = random_tensor(&mut rng, &[9, 3], 1.0);
    let hb = random_tensor(&mut rng, &[9, 3], 1.0);
    let cfg = IntuitionConfig { n_repeats: 6, noise_std: 0.1, seed: 3 };
    let a = run_experiment(&ha, &hb, &cfg).unwrap();
    assert_eq!(a, run_experiment(&ha, &hb, &cfg).unwrap());
    let p1 = run_repeats(&ha, &hb, &cfg, &[0, 1, 2]).unwrap();
    let p2 = run_repeats(&ha, &hb, &cfg, &[3, 4, 5]).unwrap();
    let merged = finish(&ha, &hb, &cfg, &[p1, p2]).unwrap();
    for (x, y) in a.cells.iter().zip(&merged.cells) {
        assert!((x.noise_mean - y.noise_mean).abs() < 1e-12 && (x.shuffle_mean - y.shuffle_mean).abs() < 1e-12);
    }
}
