//! Test support: a central finite-difference gradient oracle and a random
//! composite-graph generator. Only forward evaluation is used by the oracle.

use alloc::vec::Vec;
use rand::Rng;
use rand::seq::IndexedRandom;

use crate::error::Result;
use crate::tensor::{Expand, Graph, Tensor, Var};

/// Central differences at `h = 1e-6` carry about `1e-9`–`1e-8` of absolute
/// round-off, so leaf gradients with a smaller norm than this are compared
/// absolutely rather than relatively.
pub const GRAD_NORM_FLOOR: f64 = 1e-2;

/// Outcome of comparing analytic and numeric gradients for every leaf.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Worst `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, GRAD_NORM_FLOOR)`
    /// over leaves.
    pub max_rel_error: f64,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

fn build_root<F>(build: &F, leaves: &[Tensor], trainable: bool) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone(), trainable)).collect();
    let out = build(&mut g, &vars)?;
    // Reduce non-scalar outputs with fixed pseudo-random weights so that
    // gradients do not cancel by symmetry.
    let root = if g.value(out).numel() == 1 {
        out
    } else {
        let n = g.value(out).numel();
        let w: Vec<f64> = (0..n).map(|i| 0.5 + ((i * 7919 + 13) % 101) as f64 / 101.0).collect();
        let wv = g.constant(Tensor::new(g.value(out).shape().to_vec(), w)?);
        let prod = g.mul(out, wv)?;
        g.sum_all(prod)
    };
    Ok((g, vars, root))
}

/// Central differences with step `h` against reverse-mode gradients.
pub fn check_gradients<F>(build: F, leaves: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (g, vars, root) = build_root(&build, leaves, true)?;
    let grads = g.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(leaves)
        .map(|(v, t)| grads.get(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |ls: &[Tensor]| -> Result<f64> {
        let (g, _, root) = build_root(&build, ls, false)?;
        Ok(g.value(root).item())
    };

    let mut numeric = Vec::with_capacity(leaves.len());
    let mut work: Vec<Tensor> = leaves.to_vec();
    for li in 0..leaves.len() {
        let mut num = Tensor::zeros(leaves[li].shape());
        for k in 0..leaves[li].numel() {
            let orig = leaves[li].data()[k];
            work[li].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[li].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[li].data_mut()[k] = orig;
            num.data_mut()[k] = (up - down) / (2.0 * h);
        }
        numeric.push(num);
    }

    let mut max_rel_error: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        let diff = a.data().iter().zip(n.data()).fold(0.0, |s, (x, y)| s + (x - y) * (x - y));
        let scale = a.sum_squares().max(n.sum_squares()).max(GRAD_NORM_FLOOR * GRAD_NORM_FLOOR);
        max_rel_error = max_rel_error.max(crate::math::sqrt(diff / scale));
    }
    Ok(GradCheck {
        max_rel_error,
        analytic,
        numeric,
    })
}

pub fn random_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-scale..scale);
    }
    t
}

#[derive(Clone, Copy, Debug)]
enum Step {
    Sigmoid,
    Tanhish,
    Exp,
    Relu,
    Abs,
    LogPositive,
    SqrtPositive,
    LayerNorm,
    Softmax,
    Transpose,
    SumLast,
    Affine,
    Add,
    Sub,
    Mul,
    DivPositive,
    Matmul,
    Concat,
    Slice,
    PairwiseDist,
    ExpandRows,
    Threshold,
}

const STEPS: [Step; 22] = [
    Step::Sigmoid,
    Step::Tanhish,
    Step::Exp,
    Step::Relu,
    Step::Abs,
    Step::LogPositive,
    Step::SqrtPositive,
    Step::LayerNorm,
    Step::Softmax,
    Step::Transpose,
    Step::SumLast,
    Step::Affine,
    Step::Add,
    Step::Sub,
    Step::Mul,
    Step::DivPositive,
    Step::Matmul,
    Step::Concat,
    Step::Slice,
    Step::PairwiseDist,
    Step::ExpandRows,
    Step::Threshold,
];

/// A randomly generated composite expression over matrix leaves.
#[derive(Clone, Debug)]
pub struct RandomGraph {
    pub leaves: Vec<Tensor>,
    steps: Vec<(Step, usize, usize)>,
}

impl RandomGraph {
    /// At most `max_nodes` operations over 2–3 leaves with dimensions ≤ `max_dim`.
    pub fn generate<R: Rng + ?Sized>(rng: &mut R, max_nodes: usize, max_dim: usize) -> Self {
        let r = rng.random_range(1..=max_dim);
        let c = rng.random_range(1..=max_dim);
        let n_leaves = rng.random_range(2..=3);
        let leaves = (0..n_leaves).map(|_| random_tensor(rng, &[r, c], 1.0)).collect();
        let n_steps = rng.random_range(1..=max_nodes.saturating_sub(n_leaves).max(1));
        let steps = (0..n_steps)
            .map(|_| (*STEPS.choose(rng).expect("nonempty"), rng.random::<u32>() as usize, rng.random::<u32>() as usize))
            .collect();
        RandomGraph { leaves, steps }
    }

    /// Replays the recorded steps onto `g`; operations whose operands do not
    /// fit are skipped deterministically.
    pub fn build(&self, g: &mut Graph, leaves: &[Var]) -> Result<Var> {
        let mut pool: Vec<Var> = leaves.to_vec();
        for &(step, pick_a, pick_b) in &self.steps {
            let a = pool[pool.len() - 1 - pick_a % pool.len().min(3)];
            let b = pool[pick_b % pool.len()];
            let sa = g.shape(a).to_vec();
            let sb = g.shape(b).to_vec();
            let next = match step {
                Step::Sigmoid => Some(g.sigmoid(a)),
                Step::Tanhish => {
                    let s = g.scale(a, 2.0);
                    let s = g.sigmoid(s);
                    Some(g.affine(s, 2.0, -1.0))
                }
                Step::Exp => {
                    let s = g.scale(a, 0.3);
                    Some(g.exp(s))
                }
                Step::Relu => Some(g.relu(a)),
                Step::Abs => Some(g.abs(a)),
                Step::LogPositive => {
                    let s = g.sigmoid(a);
                    Some(g.log(s))
                }
                Step::SqrtPositive => {
                    let sq = g.mul(a, a)?;
                    let s = g.affine(sq, 1.0, 0.5);
                    Some(g.sqrt(s))
                }
                Step::LayerNorm if *sa.last().unwrap_or(&0) >= 3 => Some(g.layer_norm(a, 1e-9)?),
                Step::Softmax => Some(g.softmax(a, None)?),
                Step::Transpose if sa.len() == 2 => Some(g.transpose(a)?),
                Step::SumLast => Some(g.sum_last(a)),
                Step::Affine => Some(g.affine(a, -0.7, 0.2)),
                Step::Add if sa == sb => Some(g.add(a, b)?),
                Step::Sub if sa == sb => Some(g.sub(a, b)?),
                Step::Mul if sa == sb => Some(g.mul(a, b)?),
                Step::DivPositive if sa == sb => {
                    let e = g.exp(b);
                    let d = g.affine(e, 1.0, 1.0);
                    Some(g.div(a, d)?)
                }
                Step::Matmul if sa.len() == 2 && sb.len() == 2 => {
                    if sa[1] == sb[0] {
                        Some(g.matmul(a, b)?)
                    } else {
                        let t = g.transpose(b)?;
                        if sa[1] == g.shape(t)[0] {
                            Some(g.matmul(a, t)?)
                        } else {
                            let at = g.transpose(a)?;
                            Some(g.matmul(a, at)?)
                        }
                    }
                }
                Step::Concat if sa.len() == sb.len() && sa[1..] == sb[1..] => Some(g.concat(&[a, b], 0)?),
                Step::Slice if sa[0] >= 2 => Some(g.slice(a, 0, 1, sa[0] - 1)?),
                Step::PairwiseDist if sa.len() == 2 => {
                    let d = g.pairwise_sq_dist(a)?;
                    Some(g.scale(d, 0.25))
                }
                Step::ExpandRows if sa.len() == 2 && sa[0] == 1 => {
                    let n = sa[1];
                    Some(g.expand(a, Expand::Rows, &[3, n])?)
                }
                Step::Threshold => {
                    let l = g.constant(Tensor::scalar(0.05));
                    Some(g.threshold(a, l, 0.1)?)
                }
                _ => None,
            };
            if let Some(v) = next {
                pool.push(v);
            }
        }
        Ok(*pool.last().expect("nonempty pool"))
    }
}

type BuildFn = alloc::boxed::Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// One differentiable primitive with inputs drawn inside its smooth domain.
pub struct PrimitiveCase {
    pub name: &'static str,
    pub leaves: Vec<Tensor>,
    pub build: BuildFn,
}

impl PrimitiveCase {
    fn new(name: &'static str, leaves: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> Self {
        PrimitiveCase {
            name,
            leaves,
            build: alloc::boxed::Box::new(build),
        }
    }

    pub fn check(&self, h: f64) -> Result<GradCheck> {
        check_gradients(|g, v| (self.build)(g, v), &self.leaves, h)
    }
}

/// Every differentiable operation of [`Graph`], each applied to random
/// inputs. Domains are shifted where needed (`div`, `log`, `sqrt`).
pub fn primitive_cases<R: Rng + ?Sized>(r: &mut R) -> Vec<PrimitiveCase> {
    use alloc::vec;
    let m34 = |r: &mut R| random_tensor(r, &[3, 4], 1.0);
    let shifted = |r: &mut R, by: f64| {
        let mut t = random_tensor(r, &[3, 4], 1.0);
        t.data_mut().iter_mut().for_each(|v| *v += by);
        t
    };
    let mask: Vec<bool> = (0..12).map(|i| i % 3 != 1).collect();
    vec![
        PrimitiveCase::new("add", vec![m34(r), m34(r)], |g, v| g.add(v[0], v[1])),
        PrimitiveCase::new("sub", vec![m34(r), m34(r)], |g, v| g.sub(v[0], v[1])),
        PrimitiveCase::new("mul", vec![m34(r), m34(r)], |g, v| g.mul(v[0], v[1])),
        PrimitiveCase::new("div", vec![m34(r), shifted(r, 1.5)], |g, v| g.div(v[0], v[1])),
        PrimitiveCase::new("affine", vec![m34(r)], |g, v| Ok(g.affine(v[0], -1.3, 0.4))),
        PrimitiveCase::new("matmul", vec![m34(r), random_tensor(r, &[4, 5], 1.0)], |g, v| g.matmul(v[0], v[1])),
        PrimitiveCase::new(
            "bmm",
            vec![random_tensor(r, &[2, 3, 4], 1.0), random_tensor(r, &[2, 4, 2], 1.0)],
            |g, v| g.bmm(v[0], v[1]),
        ),
        PrimitiveCase::new("transpose2", vec![m34(r)], |g, v| g.transpose(v[0])),
        PrimitiveCase::new("transpose3", vec![random_tensor(r, &[2, 3, 4], 1.0)], |g, v| g.transpose(v[0])),
        PrimitiveCase::new("reshape", vec![m34(r)], |g, v| g.reshape(v[0], &[2, 6])),
        PrimitiveCase::new("expand_scalar", vec![random_tensor(r, &[1], 1.0)], |g, v| {
            g.expand(v[0], Expand::Scalar, &[3, 2])
        }),
        PrimitiveCase::new("expand_rows", vec![random_tensor(r, &[4], 1.0)], |g, v| {
            g.expand(v[0], Expand::Rows, &[2, 3, 4])
        }),
        PrimitiveCase::new("expand_cols", vec![random_tensor(r, &[3, 1], 1.0)], |g, v| {
            g.expand(v[0], Expand::Cols, &[3, 4])
        }),
        PrimitiveCase::new("exp", vec![m34(r)], |g, v| Ok(g.exp(v[0]))),
        PrimitiveCase::new("log", vec![shifted(r, 1.2)], |g, v| Ok(g.log(v[0]))),
        PrimitiveCase::new("sqrt", vec![shifted(r, 1.2)], |g, v| Ok(g.sqrt(v[0]))),
        PrimitiveCase::new("relu", vec![m34(r)], |g, v| Ok(g.relu(v[0]))),
        PrimitiveCase::new("sigmoid", vec![m34(r)], |g, v| Ok(g.sigmoid(v[0]))),
        PrimitiveCase::new("abs", vec![m34(r)], |g, v| Ok(g.abs(v[0]))),
        PrimitiveCase::new("clamp", vec![m34(r)], |g, v| Ok(g.clamp(v[0], -0.5, 0.5))),
        PrimitiveCase::new("softmax", vec![m34(r)], |g, v| g.softmax(v[0], None)),
        PrimitiveCase::new("softmax_masked", vec![m34(r)], move |g, v| g.softmax(v[0], Some(&mask))),
        PrimitiveCase::new("layer_norm", vec![m34(r)], |g, v| g.layer_norm(v[0], 1e-9)),
        PrimitiveCase::new("sum_all", vec![m34(r)], |g, v| Ok(g.sum_all(v[0]))),
        PrimitiveCase::new("mean_all", vec![m34(r)], |g, v| Ok(g.mean_all(v[0]))),
        PrimitiveCase::new("sum_last", vec![m34(r)], |g, v| Ok(g.sum_last(v[0]))),
        PrimitiveCase::new(
            "concat_axis1",
            vec![random_tensor(r, &[2, 3, 4], 1.0), random_tensor(r, &[2, 1, 4], 1.0)],
            |g, v| g.concat(&[v[0], v[1]], 1),
        ),
        PrimitiveCase::new("slice", vec![random_tensor(r, &[2, 3, 4], 1.0)], |g, v| g.slice(v[0], 1, 1, 2)),
        PrimitiveCase::new("pairwise_sq_dist", vec![m34(r)], |g, v| g.pairwise_sq_dist(v[0])),
        PrimitiveCase::new("threshold_x", vec![m34(r)], |g, v| {
            let l = g.constant(Tensor::scalar(0.1));
            g.threshold(v[0], l, 0.1)
        }),
        PrimitiveCase::new("im2col", vec![random_tensor(r, &[2, 5, 5, 2], 1.0)], |g, v| g.im2col(v[0], 3, 2, 1)),
    ]
}
