use alloc::vec;
use alloc::vec::Vec;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::math;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The only broadcasts the engine supports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expand {
    /// One value repeated over the whole target.
    Scalar,
    /// A vector of the target's last-dimension length, repeated for every row.
    Rows,
    /// One value per row (shape `[.., 1]`), repeated along the last dimension.
    Cols,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64),
    Matmul(Var, Var),
    Bmm(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Expand(Var, Expand),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    LayerNorm(Var, Vec<f64>),
    SumAll(Var),
    SumLast(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    PairwiseSqDist(Var),
    Threshold(Var, Var, f64),
    Im2Col(Var, ConvGeom),
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Matmul(a, b) | Bmm(a, b) | Threshold(a, b, _) => {
                vec![*a, *b]
            }
            Affine(a, _)
            | Transpose(a)
            | Reshape(a)
            | Expand(a, _)
            | Exp(a)
            | Log(a)
            | Relu(a)
            | Sigmoid(a)
            | Abs(a)
            | Sqrt(a)
            | Clamp(a, _, _)
            | Softmax(a)
            | LayerNorm(a, _)
            | SumAll(a)
            | SumLast(a)
            | Slice(a, _, _)
            | PairwiseSqDist(a)
            | Im2Col(a, _) => vec![*a],
            Concat(xs, _) => xs.clone(),
        }
    }
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
    pub param: Option<ParamId>,
}

/// A tape of tensor operations.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    bound: Vec<(ParamId, Var)>,
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

/// `c[m×n] = a[m×k] · b[k×n]`, accumulated left to right over `k`.
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
}

/// `c[m×n] += aᵀ · b` where `a` is `k×m` and `b` is `k×n`.
pub(crate) fn mm_at_b(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, c: &mut [f64]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += api * brow[j];
            }
        }
    }
}

/// `c[m×n] += a · bᵀ` where `a` is `m×k` and `b` is `n×k`.
pub(crate) fn mm_a_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += arow[p] * brow[p];
            }
            c[i * n + j] += s;
        }
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check(&self, op: &'static str, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::invalid(op, "variable does not belong to this graph"))
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Binds a stored parameter onto the tape (once per graph). With
    /// `trainable == false` it enters as a constant.
    pub fn param(&mut self, store: &ParamStore, id: ParamId, trainable: bool) -> Var {
        if let Some(&(_, v)) = self.bound.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone(), trainable);
        self.nodes[v.0].param = Some(id);
        self.bound.push((id, v));
        v
    }

    pub(crate) fn bound_params(&self) -> &[(ParamId, Var)] {
        &self.bound
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check(op, a)?;
        self.check(op, b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::new(ta.shape().to_vec(), data).expect("same shape"))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = &self.nodes[a.0].value;
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("div", a, b, |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b)))
    }

    /// `scale * a + shift` with constant scalars.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let t = self.map(a, |x| scale * x + shift);
        self.push(t, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check("matmul", a)?;
        self.check("matmul", b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        mm(ta.data(), tb.data(), m, k, n, &mut out);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::Matmul(a, b)))
    }

    /// Batched product `[b, m, k] × [b, k, n] → [b, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check("bmm", a)?;
        self.check("bmm", b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(mismatch("bmm", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        for i in 0..bs {
            mm(
                &ta.data()[i * m * k..(i + 1) * m * k],
                &tb.data()[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let t = Tensor::new(vec![bs, m, n], out)?;
        Ok(self.push(t, Op::Bmm(a, b)))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check("transpose", a)?;
        let ta = &self.nodes[a.0].value;
        let s = ta.shape();
        let (bs, r, c) = match s.len() {
            2 => (1, s[0], s[1]),
            3 => (s[0], s[1], s[2]),
            _ => return Err(Error::invalid("transpose", "rank must be 2 or 3")),
        };
        let mut out = vec![0.0; ta.numel()];
        for b in 0..bs {
            let off = b * r * c;
            for i in 0..r {
                for j in 0..c {
                    out[off + j * r + i] = ta.data()[off + i * c + j];
                }
            }
        }
        let mut shape = s.to_vec();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check("reshape", a)?;
        let t = self.nodes[a.0].value.clone().reshaped(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    pub fn expand(&mut self, a: Var, how: Expand, shape: &[usize]) -> Result<Var> {
        self.check("expand", a)?;
        let ta = &self.nodes[a.0].value;
        let total: usize = shape.iter().product();
        let last = *shape.last().unwrap_or(&1);
        let ok = match how {
            Expand::Scalar => ta.numel() == 1,
            Expand::Rows => ta.numel() == last,
            Expand::Cols => last > 0 && ta.numel() * last == total,
        };
        if !ok || shape.is_empty() {
            return Err(mismatch("expand", ta.shape(), shape));
        }
        let src = ta.data();
        let data: Vec<f64> = match how {
            Expand::Scalar => vec![src[0]; total],
            Expand::Rows => (0..total).map(|i| src[i % last]).collect(),
            Expand::Cols => (0..total).map(|i| src[i / last]).collect(),
        };
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(t, Op::Expand(a, how)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.map(a, math::exp);
        self.push(t, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let t = self.map(a, math::ln);
        self.push(t, Op::Log(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(t, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, math::sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.map(a, math::abs);
        self.push(t, Op::Abs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let t = self.map(a, math::sqrt);
        self.push(t, Op::Sqrt(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = self.map(a, |x| x.max(lo).min(hi));
        self.push(t, Op::Clamp(a, lo, hi))
    }

    /// Softmax over the last axis. Entries with `mask == false` get exactly
    /// zero probability; a fully masked row yields zeros.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        self.check("softmax", a)?;
        let ta = &self.nodes[a.0].value;
        if let Some(m) = mask {
            if m.len() != ta.numel() {
                return Err(mismatch("softmax", ta.shape(), &[m.len()]));
            }
        }
        let n = *ta.shape().last().unwrap_or(&1);
        let mut out = vec![0.0; ta.numel()];
        for (r, row) in ta.data().chunks(n).enumerate() {
            let keep = |j: usize| mask.map_or(true, |m| m[r * n + j]);
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if keep(j) && row[j] > max {
                    max = row[j];
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for j in 0..n {
                if keep(j) {
                    let e = math::exp(row[j] - max);
                    out[r * n + j] = e;
                    z += e;
                }
            }
            for j in 0..n {
                out[r * n + j] /= z;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(t, Op::Softmax(a)))
    }

    /// Normalises every last-axis vector to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.check("layer_norm", a)?;
        let ta = &self.nodes[a.0].value;
        let n = *ta.shape().last().unwrap_or(&1);
        let mut out = vec![0.0; ta.numel()];
        let mut inv_std = Vec::with_capacity(ta.numel() / n.max(1));
        for (r, row) in ta.data().chunks(n).enumerate() {
            let mean = row.iter().fold(0.0, |s, v| s + v) / n as f64;
            let var = row.iter().fold(0.0, |s, v| s + (v - mean) * (v - mean)) / n as f64;
            let is = 1.0 / math::sqrt(var + eps);
            for j in 0..n {
                out[r * n + j] = (row[j] - mean) * is;
            }
            inv_std.push(is);
        }
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(t, Op::LayerNorm(a, inv_std)))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().fold(0.0, |acc, v| acc + v);
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.numel().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Sums the last axis, keeping it with length 1.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let n = *ta.shape().last().unwrap_or(&1);
        let data: Vec<f64> = ta.data().chunks(n).map(|r| r.iter().fold(0.0, |s, v| s + v)).collect();
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = 1;
        let t = Tensor::new(shape, data).expect("consistent");
        self.push(t, Op::SumLast(a))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        for &p in parts {
            self.check("concat", p)?;
        }
        let base = self.nodes[first.0].value.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::invalid("concat", "axis out of range"));
        }
        let mut total_axis = 0;
        for &p in parts {
            let s = self.nodes[p.0].value.shape();
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total_axis += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total_axis;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for &p in parts {
                let t = &self.nodes[p.0].value;
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Concat(parts.to_vec(), axis)))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check("slice", a)?;
        let ta = &self.nodes[a.0].value;
        let s = ta.shape();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::invalid(
                "slice",
                alloc::format!("range {start}..{} on axis {axis} of {s:?}", start + len),
            ));
        }
        let (outer, n, inner) = axis_split(s, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&ta.data()[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Slice(a, axis, start)))
    }

    /// `D[i, j] = ‖x_i − x_j‖²` over the rows of a matrix; exactly symmetric
    /// with an exactly zero diagonal.
    pub fn pairwise_sq_dist(&mut self, a: Var) -> Result<Var> {
        self.check("pairwise_sq_dist", a)?;
        let ta = &self.nodes[a.0].value;
        if ta.rank() != 2 {
            return Err(Error::invalid("pairwise_sq_dist", "expects a matrix"));
        }
        let (n, d) = (ta.shape()[0], ta.shape()[1]);
        let x = ta.data();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let mut s = 0.0;
                for k in 0..d {
                    let diff = x[i * d + k] - x[j * d + k];
                    s += diff * diff;
                }
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        let t = Tensor::new(vec![n, n], out)?;
        Ok(self.push(t, Op::PairwiseSqDist(a)))
    }

    /// Keeps entries strictly greater than the scalar `lambda`, zeroing the
    /// rest. The gradient for `lambda` is the straight-through surrogate
    /// `∂/∂λ [x · sigmoid((x − λ) / tau)]`; forward values are exact.
    pub fn threshold(&mut self, a: Var, lambda: Var, tau: f64) -> Result<Var> {
        self.check("threshold", a)?;
        self.check("threshold", lambda)?;
        if self.nodes[lambda.0].value.numel() != 1 {
            return Err(Error::invalid("threshold", "lambda must be a scalar"));
        }
        if !(tau > 0.0) {
            return Err(Error::invalid("threshold", "temperature must be positive"));
        }
        let l = self.nodes[lambda.0].value.item();
        let t = self.map(a, |x| if x > l { x } else { 0.0 });
        Ok(self.push(t, Op::Threshold(a, lambda, tau)))
    }

    /// Unfolds a channels-last image batch `[B, H, W, C]` into convolution
    /// patches `[B·H'·W', k·k·C]` (zero padding).
    pub fn im2col(&mut self, a: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        self.check("im2col", a)?;
        let ta = &self.nodes[a.0].value;
        let s = ta.shape();
        if s.len() != 4 || kernel == 0 || stride == 0 || s[1] + 2 * pad < kernel || s[2] + 2 * pad < kernel {
            return Err(Error::invalid("im2col", alloc::format!("cannot unfold {s:?} with kernel {kernel}")));
        }
        let g = ConvGeom {
            batch: s[0],
            height: s[1],
            width: s[2],
            channels: s[3],
            kernel,
            stride,
            pad,
            out_h: (s[1] + 2 * pad - kernel) / stride + 1,
            out_w: (s[2] + 2 * pad - kernel) / stride + 1,
        };
        let cols = kernel * kernel * g.channels;
        let rows = g.batch * g.out_h * g.out_w;
        let mut out = vec![0.0; rows * cols];
        for_each_patch_entry(&g, |row, col, src| out[row * cols + col] = ta.data()[src]);
        let t = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(t, Op::Im2Col(a, g)))
    }
}

/// Visits every (patch row, patch column, source index) triple that reads a
/// real (non-padding) pixel.
pub(crate) fn for_each_patch_entry(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize)) {
    let cols = g.kernel * g.kernel * g.channels;
    for b in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = (b * g.out_h + oy) * g.out_w + ox;
                for ky in 0..g.kernel {
                    let y = (oy * g.stride + ky) as isize - g.pad as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let x = (ox * g.stride + kx) as isize - g.pad as isize;
                        if x < 0 || x >= g.width as isize {
                            continue;
                        }
                        for c in 0..g.channels {
                            let col = (ky * g.kernel + kx) * g.channels + c;
                            debug_assert!(col < cols);
                            let src = ((b * g.height + y as usize) * g.width + x as usize) * g.channels + c;
                            f(row, col, src);
                        }
                    }
                }
            }
        }
    }
}
