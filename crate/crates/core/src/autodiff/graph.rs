//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value and the ids of
//! its inputs. Because inputs always exist before their consumers, node
//! order is a topological order and [`Graph::backward`] simply walks the
//! tape from the end.

use super::tensor::{axis_split, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softplus(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        padding: usize,
    },
    Upsample(NodeId, usize),
    Softmax(NodeId, usize),
    Concat(Vec<NodeId>, usize),
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Sum(NodeId),
    Mean(NodeId),
    MeanAxis(NodeId, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Softplus(_) => "softplus",
            Op::Relu(_) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Linear { .. } => "linear",
            Op::Conv1d { .. } => "conv1d",
            Op::Upsample(..) => "upsample",
            Op::Softmax(..) => "softmax",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MeanAxis(..) => "mean_axis",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddRow(a, b)
            | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Softplus(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Transpose(a)
            | Op::Upsample(a, _)
            | Op::Softmax(a, _)
            | Op::Slice { x: a, .. }
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanAxis(a, _) => vec![*a],
            Op::Linear { x, w, b } | Op::Conv1d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Concat(xs, _) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recorded computation. Single-threaded; build one per training item.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    corrupt_backward: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`; zeros when the loss does
    /// not depend on it.
    pub fn get(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        match self.grads[id.0].take() {
            Some(t) => t,
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn matrix_dims(t: &Tensor, op: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(format!("{op}: expected a matrix, got shape {s:?}"))),
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Output length of a strided, zero-padded convolution.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::dim("conv1d: stride must be at least 1"));
    }
    let padded = len + 2 * padding;
    if padded < kernel {
        return Err(Error::dim(format!(
            "conv1d: padded length {padded} is shorter than kernel {kernel}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Valid output positions `t` such that `t * stride + k - padding` lands in `[0, len)`.
fn conv_t_range(
    k: usize,
    len: usize,
    out_len: usize,
    stride: usize,
    padding: usize,
) -> (usize, usize) {
    let lo = if padding > k {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if len + padding > k {
        ((len + padding - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
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

    /// Test hook: perturbs every leaf gradient by 1% so gradient checks must fail.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self) {
        self.corrupt_backward = true;
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Records a leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    /// Records a leaf that is treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "{} produced a non-finite value",
                op.name()
            )));
        }
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, op.name())?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op, out)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let out = self.value(a).map(f);
        self.push(op, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Adds a length-`m` vector to every row of an `n × m` matrix.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (n, m) = matrix_dims(self.value(x), "add_row")?;
        let r = self.value(row);
        if r.len() != m {
            return Err(Error::dim(format!(
                "add_row: row of length {} against {m} columns",
                r.len()
            )));
        }
        let mut out = self.value(x).data().to_vec();
        for i in 0..n {
            for (o, v) in out[i * m..(i + 1) * m].iter_mut().zip(r.data()) {
                *o += v;
            }
        }
        let out = Tensor::new(vec![n, m], out)?;
        self.push(Op::AddRow(x, row), out)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric("log of a non-positive value".into()));
        }
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = matrix_dims(self.value(a), "matmul")?;
        let (k2, n) = matrix_dims(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul: inner dimensions {k} and {k2} differ"
            )));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        self.push(Op::MatMul(a, b), out)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = matrix_dims(self.value(a), "transpose")?;
        let out = Tensor::new(vec![c, r], transpose_raw(self.value(a).data(), r, c))?;
        self.push(Op::Transpose(a), out)
    }

    /// Fully connected layer: `x · wᵀ + b` with `x: n × in`, `w: out × in`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (n, fin) = matrix_dims(self.value(x), "linear")?;
        let (fout, fin2) = matrix_dims(self.value(w), "linear")?;
        if fin != fin2 {
            return Err(Error::dim(format!(
                "linear: input width {fin} against weight width {fin2}"
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != fout {
                return Err(Error::dim("linear: bias length differs from output width"));
            }
        }
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; n * fout];
        for i in 0..n {
            let xi = &xd[i * fin..(i + 1) * fin];
            for o in 0..fout {
                let wo = &wd[o * fin..(o + 1) * fin];
                out[i * fout + o] = xi.iter().zip(wo).map(|(a, b)| a * b).sum();
            }
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            for i in 0..n {
                for o in 0..fout {
                    out[i * fout + o] += bd[o];
                }
            }
        }
        let out = Tensor::new(vec![n, fout], out)?;
        self.push(Op::Linear { x, w, b }, out)
    }

    /// Cross-correlation of `x: C_in × L` with `w: C_out × C_in × K`, zero padded.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let (cin, len) = matrix_dims(self.value(x), "conv1d")?;
        let (cout, cin2, k) = match self.value(w).shape() {
            [a, b, c] => (*a, *b, *c),
            s => return Err(Error::dim(format!("conv1d: kernel shape {s:?} is not 3-d"))),
        };
        if cin != cin2 {
            return Err(Error::dim(format!(
                "conv1d: input has {cin} channels, kernel expects {cin2}"
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return Err(Error::dim("conv1d: bias length differs from output channels"));
            }
        }
        let out_len = conv_output_len(len, k, stride, padding)?;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; cout * out_len];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for co in 0..cout {
                out[co * out_len..(co + 1) * out_len].fill(bd[co]);
            }
        }
        for co in 0..cout {
            let orow = &mut out[co * out_len..(co + 1) * out_len];
            for ci in 0..cin {
                let xrow = &xd[ci * len..(ci + 1) * len];
                for kk in 0..k {
                    let wv = wd[(co * cin + ci) * k + kk];
                    let (lo, hi) = conv_t_range(kk, len, out_len, stride, padding);
                    for (t, o) in orow.iter_mut().enumerate().take(hi).skip(lo) {
                        *o += wv * xrow[t * stride + kk - padding];
                    }
                }
            }
        }
        let out = Tensor::new(vec![cout, out_len], out)?;
        self.push(
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            },
            out,
        )
    }

    /// Nearest-neighbour upsampling along the length axis of a `C × L` tensor.
    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let (c, len) = matrix_dims(self.value(x), "upsample")?;
        if factor == 0 {
            return Err(Error::dim("upsample: factor must be positive"));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(c * len * factor);
        for row in xd.chunks(len) {
            for &v in row {
                out.extend(std::iter::repeat(v).take(factor));
            }
        }
        let out = Tensor::new(vec![c, len * factor], out)?;
        self.push(Op::Upsample(x, factor), out)
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let t = self.value(x);
        let (outer, n, inner) = t.axis_split(axis)?;
        let mut out = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[idx(j)] /= total;
                }
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        self.push(Op::Softmax(x, axis), out)
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = xs
            .first()
            .ok_or_else(|| Error::dim("concat: no inputs"))?;
        let base = self.value(*first).shape().to_vec();
        axis_split(&base, axis)?;
        let mut total = 0;
        for &x in xs {
            let s = self.value(x).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!(
                    "concat: shape {s:?} incompatible with {base:?} on axis {axis}"
                )));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let t = self.value(x);
                let n = t.shape()[axis];
                out.extend_from_slice(&t.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(shape, out)?;
        self.push(Op::Concat(xs.to_vec(), axis), out)
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(x);
        let (outer, n, inner) = t.axis_split(axis)?;
        if len == 0 || start + len > n {
            return Err(Error::dim(format!(
                "slice: [{start}, {}) outside axis of length {n}",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(shape, out)?;
        self.push(Op::Slice { x, axis, start }, out)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Op::Mean(x), Tensor::scalar(s))
    }

    /// Mean along `axis`, keeping it as a length-1 dimension.
    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let t = self.value(x);
        let (outer, n, inner) = t.axis_split(axis)?;
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += t.data()[(o * n + j) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        let out = Tensor::new(shape, out)?;
        self.push(Op::MeanAxis(x, axis), out)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.map(|mut data| {
                    if self.corrupt_backward && matches!(n.op, Op::Leaf) {
                        data.iter_mut().for_each(|v| *v *= 1.01);
                    }
                    Tensor::new(n.value.shape().to_vec(), data)
                })
                .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, contribution: Vec<f64>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => g.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
            slot => *slot = Some(contribution),
        }
    }

    fn propagate(&self, idx: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let val = |id: NodeId| self.nodes[id.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.to_vec());
                self.accumulate(grads, *b, dy.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, dy.to_vec());
                self.accumulate(grads, *b, dy.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.accumulate(grads, *a, dy.iter().zip(vb).map(|(g, x)| g * x).collect());
                self.accumulate(grads, *b, dy.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::Div(a, b) => {
                let vb = val(*b);
                self.accumulate(grads, *a, dy.iter().zip(vb).map(|(g, x)| g / x).collect());
                let db = dy
                    .iter()
                    .zip(y)
                    .zip(vb)
                    .map(|((g, q), d)| -g * q / d)
                    .collect();
                self.accumulate(grads, *b, db);
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, dy.to_vec());
                let m = val(*row).len();
                let mut dr = vec![0.0; m];
                for chunk in dy.chunks(m) {
                    dr.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                }
                self.accumulate(grads, *row, dr);
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, dy.iter().map(|g| g * c).collect()),
            Op::AddScalar(a) => self.accumulate(grads, *a, dy.to_vec()),
            Op::Exp(a) => {
                self.accumulate(grads, *a, dy.iter().zip(y).map(|(g, e)| g * e).collect())
            }
            Op::Log(a) => {
                let va = val(*a);
                self.accumulate(grads, *a, dy.iter().zip(va).map(|(g, x)| g / x).collect())
            }
            Op::Softplus(a) => {
                let va = val(*a);
                let d = dy.iter().zip(va).map(|(g, &x)| g * sigmoid(x)).collect();
                self.accumulate(grads, *a, d)
            }
            Op::Relu(a) => {
                let va = val(*a);
                let d = dy
                    .iter()
                    .zip(va)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, d)
            }
            Op::LeakyRelu(a, slope) => {
                let va = val(*a);
                let d = dy
                    .iter()
                    .zip(va)
                    .map(|(g, &x)| if x > 0.0 { *g } else { g * slope })
                    .collect();
                self.accumulate(grads, *a, d)
            }
            Op::MatMul(a, b) => {
                let (m, k) = matrix_dims(&self.nodes[a.0].value, "matmul")?;
                let n = self.nodes[b.0].value.shape()[1];
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                let bt = transpose_raw(val(*b), k, n);
                self.accumulate(grads, *a, matmul_raw(dy, &bt, m, n, k));
                let at = transpose_raw(val(*a), m, k);
                self.accumulate(grads, *b, matmul_raw(&at, dy, k, m, n));
            }
            Op::Transpose(a) => {
                let (r, c) = matrix_dims(&node.value, "transpose")?;
                self.accumulate(grads, *a, transpose_raw(dy, r, c));
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = matrix_dims(&self.nodes[x.0].value, "linear")?;
                let fout = self.nodes[w.0].value.shape()[0];
                self.accumulate(grads, *x, matmul_raw(dy, val(*w), n, fout, fin));
                let dyt = transpose_raw(dy, n, fout);
                self.accumulate(grads, *w, matmul_raw(&dyt, val(*x), fout, n, fin));
                if let Some(b) = b {
                    let mut db = vec![0.0; fout];
                    for row in dy.chunks(fout) {
                        db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (cin, len) = matrix_dims(&self.nodes[x.0].value, "conv1d")?;
                let wshape = self.nodes[w.0].value.shape();
                let (cout, k) = (wshape[0], wshape[2]);
                let out_len = node.value.shape()[1];
                let (xd, wd) = (val(*x), val(*w));
                let need_x = self.nodes[x.0].requires_grad;
                let need_w = self.nodes[w.0].requires_grad;
                let mut dx = vec![0.0; if need_x { cin * len } else { 0 }];
                let mut dw = vec![0.0; if need_w { cout * cin * k } else { 0 }];
                for co in 0..cout {
                    let grow = &dy[co * out_len..(co + 1) * out_len];
                    for ci in 0..cin {
                        let xrow = &xd[ci * len..(ci + 1) * len];
                        for kk in 0..k {
                            let widx = (co * cin + ci) * k + kk;
                            let (lo, hi) = conv_t_range(kk, len, out_len, *stride, *padding);
                            if need_w {
                                let mut acc = 0.0;
                                for t in lo..hi {
                                    acc += grow[t] * xrow[t * stride + kk - padding];
                                }
                                dw[widx] += acc;
                            }
                            if need_x {
                                let wv = wd[widx];
                                let dxrow = &mut dx[ci * len..(ci + 1) * len];
                                for t in lo..hi {
                                    dxrow[t * stride + kk - padding] += wv * grow[t];
                                }
                            }
                        }
                    }
                }
                if need_x {
                    self.accumulate(grads, *x, dx);
                }
                if need_w {
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    let db = dy.chunks(out_len).map(|r| r.iter().sum()).collect();
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Upsample(x, factor) => {
                let dx = dy.chunks(*factor).map(|c| c.iter().sum()).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Softmax(x, axis) => {
                let (outer, n, inner) = node.value.axis_split(*axis)?;
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let dot: f64 = (0..n).map(|j| dy[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            dx[idx(j)] = y[idx(j)] * (dy[idx(j)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Concat(xs, axis) => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis];
                let mut offset = 0;
                for &x in xs {
                    let n = self.nodes[x.0].value.shape()[*axis];
                    let mut dx = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        dx.extend_from_slice(&dy[base..base + n * inner]);
                    }
                    self.accumulate(grads, x, dx);
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = self.nodes[x.0].value.axis_split(*axis)?;
                let len = node.value.shape()[*axis];
                let mut dx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    dx[base..base + len * inner]
                        .copy_from_slice(&dy[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.len();
                self.accumulate(grads, *x, vec![dy[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len();
                self.accumulate(grads, *x, vec![dy[0] / n as f64; n]);
            }
            Op::MeanAxis(x, axis) => {
                let (outer, n, inner) = self.nodes[x.0].value.axis_split(*axis)?;
                let mut dx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            dx[(o * n + j) * inner + i] = dy[o * inner + i] / n as f64;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
        }
        Ok(())
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            for (cv, bv) in crow.iter_mut().zip(&b[t * n..(t + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::new();
        let a = g.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = g.constant(m(&[&[5.0, 6.0], &[7.0, 8.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);

        let eye = g.constant(m(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let c = g.matmul(eye, b).unwrap();
        assert_eq!(g.value(c), g.value(b));

        let z = g.constant(Tensor::zeros(&[2, 3]));
        let any = g.constant(Tensor::full(&[3, 4], 3.7));
        let c = g.matmul(z, any).unwrap();
        assert_eq!(g.value(c), &Tensor::zeros(&[2, 4]));

        assert!(matches!(g.matmul(a, any), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv1d_examples() {
        let mut g = Graph::new();
        let x = g.constant(m(&[&[1.0, 2.0, 3.0, 4.0]]));
        let k = g.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap());
        let y = g.conv1d(x, k, None, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 5.0, 7.0]);

        let id = g.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let y = g.conv1d(x, id, None, 1, 0).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let z = g.constant(Tensor::zeros(&[2, 9]));
        let k = g.constant(Tensor::full(&[3, 2, 3], 0.4));
        let y = g.conv1d(z, k, None, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[3, 5]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let long = g.constant(Tensor::ones(&[1, 3]));
        let k5 = g.constant(Tensor::ones(&[1, 1, 5]));
        assert!(matches!(
            g.conv1d(long, k5, None, 1, 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn conv1d_matches_direct_sum_with_stride_and_padding() {
        let xs: Vec<f64> = (0..11).map(|i| (i as f64 * 0.7).sin()).collect();
        let ws = [0.3, -1.2, 0.5, 2.0, -0.1];
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&xs));
        let w = g.constant(Tensor::new(vec![1, 1, 5], ws.to_vec()).unwrap());
        let y = g.conv1d(x, w, None, 2, 2).unwrap();
        let out_len = (11 + 4 - 5) / 2 + 1;
        let expected: Vec<f64> = (0..out_len)
            .map(|t| {
                (0..5)
                    .map(|k| {
                        let i = (t * 2 + k) as isize - 2;
                        if i < 0 || i >= 11 {
                            0.0
                        } else {
                            ws[k] * xs[i as usize]
                        }
                    })
                    .sum()
            })
            .collect();
        for (a, b) in g.value(y).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let one = g.constant(Tensor::row(&[3.2]));
        let s = g.softmax(one, 1).unwrap();
        assert_eq!(g.value(s).data(), &[1.0]);

        let zz = g.constant(Tensor::row(&[0.0, 0.0]));
        let s = g.softmax(zz, 1).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);

        let x = g.constant(Tensor::row(&[1.0, 2.0, 3.0]));
        let s = g.softmax(x, 1).unwrap();
        let total: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (v, k) in g.value(s).data().iter().zip([1.0f64, 2.0, 3.0]) {
            assert!((v - k.exp() / total).abs() < 1e-12);
        }

        let big = g.constant(Tensor::row(&[1000.0, 1000.0]));
        let s = g.softmax(big, 1).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(&[1.0, 2.0]));
        let s = g.sum(x).unwrap();
        assert_eq!(g.backward(s).unwrap().get(x).data(), &[1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.param(Tensor::row(&[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        assert_eq!(g.backward(s).unwrap().get(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_zero_fills_unreached() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(&[1.0, 2.0]));
        let unused = g.param(Tensor::row(&[5.0, 6.0, 7.0]));
        let y = g.scale(x, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(unused).data(), &[0.0, 0.0, 0.0]);
        assert_eq!(grads.get(x).data(), &[2.0, 2.0]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[800.0]));
        assert!(matches!(g.exp(x), Err(Error::Numeric(_))));
        let z = g.constant(Tensor::row(&[0.0]));
        assert!(matches!(g.log(z), Err(Error::Numeric(_))));
    }

    #[test]
    fn upsample_and_slice_concat_roundtrip() {
        let mut g = Graph::new();
        let x = g.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let u = g.upsample(x, 2).unwrap();
        assert_eq!(g.value(u).data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let a = g.slice(u, 1, 0, 3).unwrap();
        let b = g.slice(u, 1, 3, 1).unwrap();
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c), g.value(u));
    }
}
