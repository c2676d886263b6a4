use modalmend_core::error::Error;
use modalmend_core::tensor::{Graph, Tensor, Var};
use modalmend_core::testing::{check_gradients, primitive_cases, random_tensor, RandomGraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn forward_examples() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(vec![3, 3], (0..9).map(|v| v as f64 * 0.5 - 1.0).collect()).unwrap());
    let i = g.constant(Tensor::identity(3));
    let p = g.matmul(i, a).unwrap();
    assert_eq!(g.value(p), g.value(a));

    let z = g.constant(Tensor::scalar(0.0));
    let s = g.sigmoid(z);
    assert_eq!(g.value(s).item(), 0.5);

    let zeros = g.constant(Tensor::zeros(&[3]));
    let sm = g.softmax(zeros, None).unwrap();
    for v in g.value(sm).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn analytic_derivatives() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(3.0), true);
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 6.0);

    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(0.0), true);
    let y = g.sigmoid(x);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 0.25);
}

#[test]
fn shape_errors_name_the_operation() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(Error::ShapeMismatch { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
    let c = g.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(g.add(a, c), Err(Error::ShapeMismatch { op: "add", .. })));
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::zeros(&[2, 2]), true);
    let b = g.relu(a);
    assert!(matches!(g.backward(b), Err(Error::NonScalarRoot(_))));
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut r = rng(11);
    let cases = primitive_cases(&mut r);
    assert!(cases.len() >= 30);
    for case in &cases {
        let res = case.check(H).unwrap();
        assert!(
            res.max_rel_error <= TOL,
            "{}: relative error {:e}\nanalytic {:?}\nnumeric {:?}",
            case.name,
            res.max_rel_error,
            res.analytic,
            res.numeric
        );
    }
}

#[test]
fn threshold_lambda_gradient_is_the_surrogate() {
    let xs = [0.2, 0.45, 0.55, 0.9];
    let lambda = 0.5;
    let tau = 0.1;
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![4], xs.to_vec()).unwrap());
    let l = g.leaf(Tensor::scalar(lambda), true);
    let y = g.threshold(x, l, tau).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.55, 0.9]);
    let s = g.sum_all(y);
    let grads = g.backward(s).unwrap();
    // d/dλ Σ x·σ((x−λ)/τ), differentiated independently by central differences.
    let surrogate = |lam: f64| -> f64 {
        xs.iter()
            .map(|&x| x / (1.0 + (-(x - lam) / tau).exp()))
            .sum()
    };
    let fd = (surrogate(lambda + 1e-6) - surrogate(lambda - 1e-6)) / 2e-6;
    assert!((grads.get(l).unwrap().item() - fd).abs() < 1e-6);
}

#[test]
fn random_composite_graphs_match_finite_differences() {
    let mut r = rng(2024);
    for case in 0..100 {
        let rg = RandomGraph::generate(&mut r, 10, 8);
        let res = check_gradients(|g, v| rg.build(g, v), &rg.leaves, H).unwrap();
        assert!(res.max_rel_error <= TOL, "case {case}: {:e} for {rg:?}", res.max_rel_error);
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let mut r = rng(5);
    let rg = RandomGraph::generate(&mut r, 10, 8);
    let run = || {
        let mut g = Graph::new();
        let vars: Vec<Var> = rg.leaves.iter().map(|t| g.constant(t.clone())).collect();
        let out = rg.build(&mut g, &vars).unwrap();
        g.value(out).clone()
    };
    let (a, b) = (run(), run());
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn layer_norm_standardises_each_vector() {
    let mut r = rng(9);
    let mut g = Graph::new();
    let x = g.constant(random_tensor(&mut r, &[6, 8], 3.0));
    let y = g.layer_norm(x, 1e-9).unwrap();
    for row in g.value(y).data().chunks(8) {
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
        assert!(mean.abs() <= 1e-9);
        assert!((var - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn masked_softmax_zeroes_masked_entries() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let mask = [true, false, true, false, false, false];
    let y = g.softmax(x, Some(&mask)).unwrap();
    let v = g.value(y).data();
    assert_eq!(v[1], 0.0);
    assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
    assert_eq!(&v[3..], &[0.0, 0.0, 0.0]);
}
