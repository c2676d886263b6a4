use alloc::vec;
use alloc::vec::Vec;

use super::graph::{axis_split, for_each_patch_entry, mm_a_bt, mm_at_b, Expand, Graph, Op};
use super::{ParamId, Tensor, Var};
use crate::error::{Error, Result};
use crate::math;

/// Gradients of a scalar root with respect to every node that requires them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradients for every trainable parameter bound on the graph; parameters
    /// the root does not depend on get zeros.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        self.params
            .iter()
            .map(|&(id, v)| {
                let shape = self.shapes[v.0].clone();
                let data = match &self.grads[v.0] {
                    Some(g) => g.clone(),
                    None => vec![0.0; shape.iter().product()],
                };
                (id, Tensor::new(shape, data).expect("gradient shape"))
            })
            .collect()
    }
}

fn acc(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Graph {
    /// Reverse sweep from a one-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if root.0 >= self.nodes.len() {
            return Err(Error::invalid("backward", "variable does not belong to this graph"));
        }
        let rv = &self.nodes[root.0].value;
        if rv.numel() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let inputs = node.op.inputs();
            if let Some(bad) = inputs.iter().find(|v| v.0 >= id) {
                return Err(Error::GraphCycle { node: id, input: bad.0 });
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let params = self
            .bound_params()
            .iter()
            .copied()
            .filter(|(_, v)| self.nodes[v.0].requires_grad)
            .collect();
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(n);
        for node in &self.nodes {
            shapes.push(node.value.shape().to_vec());
        }
        grads.resize(n, None);
        Ok(Gradients { grads, shapes, params })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let len = |v: Var| self.nodes[v.0].value.numel();

        macro_rules! unary {
            ($a:expr, $i:ident, $x:ident, $e:expr) => {{
                let a = $a;
                if needs(a) {
                    let $x = val(a);
                    let slot = acc(&mut grads[a.0], len(a));
                    for $i in 0..g.len() {
                        slot[$i] += g[$i] * $e;
                    }
                }
            }};
        }

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        let slot = acc(&mut grads[v.0], len(v));
                        for i in 0..g.len() {
                            slot[i] += g[i];
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, s) in [(*a, 1.0), (*b, -1.0)] {
                    if needs(v) {
                        let slot = acc(&mut grads[v.0], len(v));
                        for i in 0..g.len() {
                            slot[i] += s * g[i];
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                if needs(*a) {
                    let slot = acc(&mut grads[a.0], xa.len());
                    for i in 0..g.len() {
                        slot[i] += g[i] * xb[i];
                    }
                }
                if needs(*b) {
                    let slot = acc(&mut grads[b.0], xb.len());
                    for i in 0..g.len() {
                        slot[i] += g[i] * xa[i];
                    }
                }
            }
            Op::Div(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                if needs(*a) {
                    let slot = acc(&mut grads[a.0], xa.len());
                    for i in 0..g.len() {
                        slot[i] += g[i] / xb[i];
                    }
                }
                if needs(*b) {
                    let slot = acc(&mut grads[b.0], xb.len());
                    for i in 0..g.len() {
                        slot[i] -= g[i] * xa[i] / (xb[i] * xb[i]);
                    }
                }
            }
            Op::Affine(a, s) => unary!(*a, i, _x, *s),
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if needs(*a) {
                    let slot = acc(&mut grads[a.0], m * k);
                    mm_a_bt(g, val(*b), m, n, k, slot);
                }
                if needs(*b) {
                    let slot = acc(&mut grads[b.0], k * n);
                    mm_at_b(val(*a), g, m, k, n, slot);
                }
            }
            Op::Bmm(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                if needs(*a) {
                    let slot = acc(&mut grads[a.0], bs * m * k);
                    for i in 0..bs {
                        mm_a_bt(
                            &g[i * m * n..(i + 1) * m * n],
                            &val(*b)[i * k * n..(i + 1) * k * n],
                            m,
                            n,
                            k,
                            &mut slot[i * m * k..(i + 1) * m * k],
                        );
                    }
                }
                if needs(*b) {
                    let slot = acc(&mut grads[b.0], bs * k * n);
                    for i in 0..bs {
                        mm_at_b(
                            &val(*a)[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            m,
                            k,
                            n,
                            &mut slot[i * k * n..(i + 1) * k * n],
                        );
                    }
                }
            }
            Op::Transpose(a) => {
                if needs(*a) {
                    let s = self.shape(*a);
                    let (bs, r, c) = if s.len() == 2 { (1, s[0], s[1]) } else { (s[0], s[1], s[2]) };
                    let slot = acc(&mut grads[a.0], bs * r * c);
                    for b in 0..bs {
                        let off = b * r * c;
                        for i in 0..r {
                            for j in 0..c {
                                slot[off + i * c + j] += g[off + j * r + i];
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) => unary!(*a, i, _x, 1.0),
            Op::Expand(a, how) => {
                if needs(*a) {
                    let last = *node.value.shape().last().unwrap_or(&1);
                    let slot = acc(&mut grads[a.0], len(*a));
                    for i in 0..g.len() {
                        let dst = match how {
                            Expand::Scalar => 0,
                            Expand::Rows => i % last,
                            Expand::Cols => i / last,
                        };
                        slot[dst] += g[i];
                    }
                }
            }
            Op::Exp(a) => unary!(*a, i, _x, y[i]),
            Op::Log(a) => unary!(*a, i, x, 1.0 / x[i]),
            Op::Relu(a) => unary!(*a, i, x, if x[i] > 0.0 { 1.0 } else { 0.0 }),
            Op::Sigmoid(a) => unary!(*a, i, _x, y[i] * (1.0 - y[i])),
            Op::Abs(a) => unary!(
                *a,
                i,
                x,
                if x[i] > 0.0 {
                    1.0
                } else if x[i] < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            ),
            // Subgradient 0 at the origin keeps ‖0‖ finite.
            Op::Sqrt(a) => unary!(*a, i, _x, if y[i] > 0.0 { 0.5 / y[i] } else { 0.0 }),
            Op::Clamp(a, lo, hi) => unary!(*a, i, x, if x[i] > *lo && x[i] < *hi { 1.0 } else { 0.0 }),
            Op::Softmax(a) => {
                if needs(*a) {
                    let n = *node.value.shape().last().unwrap_or(&1);
                    let slot = acc(&mut grads[a.0], y.len());
                    for r in 0..y.len() / n {
                        let row = r * n..(r + 1) * n;
                        let dot = g[row.clone()].iter().zip(&y[row.clone()]).fold(0.0, |s, (a, b)| s + a * b);
                        for j in row {
                            slot[j] += y[j] * (g[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm(a, inv_std) => {
                if needs(*a) {
                    let n = *node.value.shape().last().unwrap_or(&1);
                    let slot = acc(&mut grads[a.0], y.len());
                    for r in 0..y.len() / n {
                        let row = r * n..(r + 1) * n;
                        let mean_g = g[row.clone()].iter().fold(0.0, |s, v| s + v) / n as f64;
                        let mean_gy = g[row.clone()].iter().zip(&y[row.clone()]).fold(0.0, |s, (a, b)| s + a * b) / n as f64;
                        for j in row {
                            slot[j] += inv_std[r] * (g[j] - mean_g - y[j] * mean_gy);
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if needs(*a) {
                    let slot = acc(&mut grads[a.0], len(*a));
                    for v in slot.iter_mut() {
                        *v += g[0];
                    }
                }
            }
            Op::SumLast(a) => {
                if needs(*a) {
                    let n = *self.shape(*a).last().unwrap_or(&1);
                    let slot = acc(&mut grads[a.0], len(*a));
                    for i in 0..slot.len() {
                        slot[i] += g[i / n];
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let shape = node.value.shape();
                let (outer, total, inner) = axis_split(shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[*axis];
                    if needs(p) {
                        let slot = acc(&mut grads[p.0], len(p));
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            let dst = o * w * inner;
                            for k in 0..w * inner {
                                slot[dst + k] += g[src + k];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice(a, axis, start) => {
                if needs(*a) {
                    let (outer, n, inner) = axis_split(self.shape(*a), *axis);
                    let w = node.value.shape()[*axis];
                    let slot = acc(&mut grads[a.0], len(*a));
                    for o in 0..outer {
                        let dst = o * n * inner + start * inner;
                        let src = o * w * inner;
                        for k in 0..w * inner {
                            slot[dst + k] += g[src + k];
                        }
                    }
                }
            }
            Op::PairwiseSqDist(a) => {
                if needs(*a) {
                    let s = self.shape(*a);
                    let (n, d) = (s[0], s[1]);
                    let x = val(*a);
                    let slot = acc(&mut grads[a.0], n * d);
                    for i in 0..n {
                        for j in 0..n {
                            if i == j {
                                continue;
                            }
                            let w = 2.0 * (g[i * n + j] + g[j * n + i]);
                            if w == 0.0 {
                                continue;
                            }
                            for k in 0..d {
                                slot[i * d + k] += w * (x[i * d + k] - x[j * d + k]);
                            }
                        }
                    }
                }
            }
            Op::Threshold(a, lambda, tau) => {
                let x = val(*a);
                let l = val(*lambda)[0];
                if needs(*a) {
                    let slot = acc(&mut grads[a.0], x.len());
                    for i in 0..g.len() {
                        if x[i] > l {
                            slot[i] += g[i];
                        }
                    }
                }
                if needs(*lambda) {
                    let mut dl = 0.0;
                    for i in 0..g.len() {
                        let s = math::sigmoid((x[i] - l) / tau);
                        dl += g[i] * x[i] * (-s * (1.0 - s) / tau);
                    }
                    acc(&mut grads[lambda.0], 1)[0] += dl;
                }
            }
            Op::Im2Col(a, geom) => {
                if needs(*a) {
                    let cols = geom.kernel * geom.kernel * geom.channels;
                    let slot = acc(&mut grads[a.0], len(*a));
                    for_each_patch_entry(geom, |row, col, src| slot[src] += g[row * cols + col]);
                }
            }
        }
    }
}

