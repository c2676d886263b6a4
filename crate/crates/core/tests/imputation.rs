use modalmend_core::imputation::{impute, mean_neighbor, Gate, Gcn};
use modalmend_core::nn::Fwd;
use modalmend_core::tensor::ParamStore;
use modalmend_core::testing::random_tensor;
use modalmend_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut c = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for p in 0..k {
                c[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    c
}

fn relu(a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    a.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect()
}

fn setup(n: usize, seed: u64) -> (ParamStore, Gcn, Gate) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gcn = Gcn::new(&mut store, "gcn", n, &mut rng);
    let gate = Gate::new(&mut store, "gate", n, &mut rng);
    (store, gcn, gate)
}

fn propagate(store: &ParamStore, gcn: &Gcn, h: &Tensor, present: &[bool], adj: &Tensor) -> Tensor {
    let mut f = Fwd::new(store, false);
    let hv = f.g.constant(h.clone());
    let av = f.g.constant(adj.clone());
    let out = gcn.propagate(&mut f, hv, present, av, false).unwrap();
    f.g.value(out).clone()
}

#[test]
fn zero_adjacency_gives_zero_aggregate() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (store, gcn, _) = setup(4, 1);
    let h = random_tensor(&mut rng, &[3, 4], 1.0);
    let out = propagate(&store, &gcn, &h, &[true; 3], &Tensor::zeros(&[3, 3]));
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn identity_adjacency_uses_self_information_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let (store, gcn, _) = setup(4, 2);
    let h = random_tensor(&mut rng, &[3, 4], 1.0);
    let present = [false, true, false];
    let out = propagate(&store, &gcn, &h, &present, &Tensor::identity(3));
    let w0 = rows(store.get(gcn.w0));
    let w1 = rows(store.get(gcn.w1));
    let own = relu(matmul(&relu(matmul(&[rows(&h)[1].clone()], &w0)), &w1));
    for j in 0..4 {
        assert!((out.at(1, j) - own[0][j]).abs() < 1e-12);
        assert_eq!(out.at(0, j), 0.0);
        assert_eq!(out.at(2, j), 0.0);
    }
}

#[test]
fn propagate_matches_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for seed in 0..20 {
        let (store, gcn, _) = setup(5, seed);
        let h = random_tensor(&mut rng, &[3, 5], 1.0);
        let adj = random_tensor(&mut rng, &[3, 3], 1.0);
        let present: Vec<bool> = (0..3).map(|_| rng.random_bool(0.7)).collect();
        let out = propagate(&store, &gcn, &h, &present, &adj);
        let hz: Vec<Vec<f64>> = rows(&h).into_iter().zip(&present).map(|(r, &p)| if p { r } else { vec![0.0; 5] }).collect();
        let a = rows(&adj);
        let first = relu(matmul(&matmul(&a, &hz), &rows(store.get(gcn.w0))));
        let second = relu(matmul(&matmul(&a, &first), &rows(store.get(gcn.w1))));
        for i in 0..3 {
            for j in 0..5 {
                assert!((out.at(i, j) - second[i][j]).abs() < 1e-12);
            }
        }
    }
}

fn gate_values(store: &ParamStore, gate: &Gate, h: &Tensor, agg: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let mut f = Fwd::new(store, false);
    let hv = f.g.constant(h.clone());
    let av = f.g.constant(agg.clone());
    let (a, b) = gate.gates(&mut f, hv, av).unwrap();
    (f.g.value(a).data().to_vec(), f.g.value(b).data().to_vec())
}

#[test]
fn gate_examples() {
    let (mut store, _, gate) = setup(2, 3);
    *store.get_mut(gate.wo) = Tensor::zeros(&[2, 1]);
    *store.get_mut(gate.ws) = Tensor::zeros(&[2, 1]);
    let h = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
    let (a, b) = gate_values(&store, &gate, &h, &h);
    assert_eq!((a[0], b[0]), (0.5, 0.5));

    // sigmoid(ln 1.5) = 0.6 and sigmoid(ln 0.25) = 0.2
    *store.get_mut(gate.wo) = Tensor::new(vec![2, 1], vec![1.5f64.ln(), 0.0]).unwrap();
    *store.get_mut(gate.ws) = Tensor::new(vec![2, 1], vec![0.25f64.ln(), 0.0]).unwrap();
    let one = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let (a, b) = gate_values(&store, &gate, &one, &one);
    assert!((a[0] - 0.75).abs() < 1e-12 && (b[0] - 0.25).abs() < 1e-12);
}

fn impute_values(h: &Tensor, agg: &Tensor, alpha: &[f64], present: &[bool]) -> Tensor {
    let store = ParamStore::new();
    let mut f = Fwd::new(&store, false);
    let b = alpha.len();
    let hv = f.g.constant(h.clone());
    let av = f.g.constant(agg.clone());
    let al = f.g.constant(Tensor::new(vec![b, 1], alpha.to_vec()).unwrap());
    let be = f.g.one_minus(al);
    let out = impute(&mut f, hv, av, al, be, present).unwrap();
    f.g.value(out).clone()
}

#[test]
fn impute_examples() {
    let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![5.0, -3.0]]).unwrap();
    let agg = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.25, 0.5]]).unwrap();
    let out = impute_values(&h, &agg, &[0.75, 0.9], &[true, false]);
    assert_eq!(&out.data()[..2], &[0.75, 0.25]);
    assert_eq!(&out.data()[2..], &[0.25, 0.5]);
    let out = impute_values(&h, &agg, &[1.0, 1.0], &[true, true]);
    assert_eq!(out, h);
}

#[test]
fn isolated_missing_patient_gets_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let (store, gcn, _) = setup(4, 4);
    let h = random_tensor(&mut rng, &[3, 4], 1.0);
    let mut adj = random_tensor(&mut rng, &[3, 3], 1.0);
    for j in 0..3 {
        adj.data_mut()[j] = if j == 0 { 0.9 } else { 0.0 };
        adj.data_mut()[j * 3] = if j == 0 { 0.9 } else { 0.0 };
    }
    let out = propagate(&store, &gcn, &h, &[false, true, true], &adj);
    assert!(out.data()[..4].iter().all(|&v| v == 0.0));
    assert!(out.is_finite());
}

#[test]
fn mean_neighbor_averages_valid_neighbours() {
    let store = ParamStore::new();
    let mut f = Fwd::new(&store, false);
    let h = f.g.constant(Tensor::from_rows(&[vec![9.0, 9.0], vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap());
    let adj = f.g.constant(Tensor::from_rows(&[vec![1.0, 0.5, 0.25], vec![0.5, 1.0, 0.0], vec![0.25, 0.0, 1.0]]).unwrap());
    let (out, _) = mean_neighbor(&mut f, h, &[false, true, true], adj).unwrap();
    let v = f.g.value(out);
    let w = [0.5 / 0.75, 0.25 / 0.75];
    assert!((v.at(0, 0) - (w[0] * 1.0 + w[1] * 3.0)).abs() < 1e-12);
    assert!((v.at(0, 1) - (w[0] * 2.0 + w[1] * 6.0)).abs() < 1e-12);
    assert_eq!(&v.data()[2..], &[1.0, 2.0, 3.0, 6.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gates_sum_to_one_and_blend_is_convex(seed in any::<u64>(), b in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (store, gcn, gate) = setup(4, seed);
        let h = random_tensor(&mut rng, &[b, 4], 2.0);
        let adj = Tensor::new(vec![b, b], (0..b * b).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let present: Vec<bool> = (0..b).map(|_| rng.random_bool(0.6)).collect();
        let mut f = Fwd::new(&store, false);
        let hv = f.g.constant(h.clone());
        let av = f.g.constant(adj);
        let agg = gcn.propagate(&mut f, hv, &present, av, false).unwrap();
        let (al, be) = gate.gates(&mut f, hv, agg).unwrap();
        let out = impute(&mut f, hv, agg, al, be, &present).unwrap();
        let (a, bb) = (f.g.value(al).data().to_vec(), f.g.value(be).data().to_vec());
        let agg = f.g.value(agg).clone();
        let out = f.g.value(out).clone();
        for i in 0..b {
            prop_assert!((a[i] + bb[i] - 1.0).abs() <= 1e-15);
            prop_assert!(a[i] > 0.0 && a[i] < 1.0);
            for j in 0..4 {
                let (x, y, z) = (h.at(i, j), agg.at(i, j), out.at(i, j));
                if present[i] {
                    let slack = 1e-12 * (1.0 + x.abs() + y.abs());
                    prop_assert!(z >= x.min(y) - slack && z <= x.max(y) + slack);
                } else {
                    prop_assert_eq!(z, y);
                }
            }
        }
    }
}
