use std::fmt;

use super::kernels::{self, BnGeom, ConvGeom};
use super::{axis_blocks, gemm, Tensor};
use crate::error::{dim_err, Result, RtfnError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Relu,
    Sigmoid,
    Tanh,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// Convolution padding. `Same` pads `(k-1)/2` zeros on the left and the
/// remainder on the right.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug)]
enum Broadcast {
    None,
    /// Right operand repeats over the leading blocks of the left one.
    Right,
    Left,
}

enum Op {
    Leaf,
    Unary(Var, UnaryOp),
    Binary(Var, Var, BinaryOp, Broadcast),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Softmax(Var),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    IndexAxis {
        x: Var,
        axis: usize,
        index: usize,
    },
    Stack(Vec<Var>, usize),
    Conv1d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        geom: BnGeom,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Unary(..) => "unary",
            Op::Binary(..) => "binary",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Softmax(_) => "softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::IndexAxis { .. } => "index_axis",
            Op::Stack(..) => "stack",
            Op::Conv1d { .. } => "conv1d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Unary(x, _)
            | Op::Scale(x, _)
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::Softmax(x)
            | Op::Sum(x, _)
            | Op::Mean(x, _)
            | Op::Slice { x, .. }
            | Op::IndexAxis { x, .. } => vec![*x],
            Op::Binary(a, b, ..) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Concat(v, _) | Op::Stack(v, _) => v.clone(),
            Op::Conv1d { x, w, .. } => vec![*x, *w],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording tape for one forward/backward session.
///
/// Nodes are appended in evaluation order, so every parent precedes its
/// consumers and reverse insertion order is a valid topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the graph's trainable leaves.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like it when `v` does not reach the loss.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.nodes.len()).finish()
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

fn strip_leading_ones(s: &[usize]) -> &[usize] {
    let k = s.iter().take_while(|&&e| e == 1).count();
    &s[k..]
}

fn broadcast_kind(a: &[usize], b: &[usize]) -> Option<Broadcast> {
    if a == b {
        return Some(Broadcast::None);
    }
    let (sa, sb) = (strip_leading_ones(a), strip_leading_ones(b));
    if a.len() >= b.len() && a.ends_with(sb) {
        Some(Broadcast::Right)
    } else if b.len() > a.len() && b.ends_with(sa) {
        Some(Broadcast::Left)
    } else {
        None
    }
}

fn check_axis(shape: &[usize], axis: usize, what: &str) -> Result<()> {
    if axis >= shape.len() {
        return dim_err(format!(
            "{what}: axis {axis} out of range for shape {shape:?}"
        ));
    }
    Ok(())
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let parents = op.parents();
        if cfg!(debug_assertions) {
            let finite_in = parents.iter().all(|p| self.nodes[p.0].value.all_finite());
            debug_assert!(
                !finite_in || value.all_finite(),
                "{} produced non-finite output from finite inputs",
                op.name()
            );
        }
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    // ---- elementwise ----

    pub fn unary(&mut self, x: Var, op: UnaryOp) -> Var {
        let xv = self.value(x);
        let f: fn(f64) -> f64 = match op {
            UnaryOp::Relu => |v| v.max(0.0),
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Tanh => f64::tanh,
            UnaryOp::Square => |v| v * v,
        };
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push(out, Op::Unary(x, op))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryOp::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, UnaryOp::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, UnaryOp::Tanh)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, UnaryOp::Square)
    }

    /// Pointwise binary op. Shapes must match, or one operand's shape (leading
    /// unit axes ignored) must be a suffix of the other's, in which case it is
    /// repeated over the leading (batch) blocks.
    pub fn binary(&mut self, a: Var, b: Var, op: BinaryOp) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let Some(bc) = broadcast_kind(av.shape(), bv.shape()) else {
            return dim_err(format!(
                "{op:?}: shapes {:?} and {:?} are not broadcastable",
                av.shape(),
                bv.shape()
            ));
        };
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
        };
        let (shape, data) = match bc {
            Broadcast::None => (
                av.shape().to_vec(),
                av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::Right => {
                let n = bv.len();
                (
                    av.shape().to_vec(),
                    av.data()
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| f(x, bv.data()[i % n]))
                        .collect(),
                )
            }
            Broadcast::Left => {
                let n = av.len();
                (
                    bv.shape().to_vec(),
                    bv.data()
                        .iter()
                        .enumerate()
                        .map(|(i, &y)| f(av.data()[i % n], y))
                        .collect(),
                )
            }
        };
        Ok(self.push(Tensor::from_parts(shape, data), Op::Binary(a, b, op, bc)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Mul)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::from_parts(
            xv.shape().to_vec(),
            xv.data().iter().map(|v| v * s).collect(),
        );
        self.push(out, Op::Scale(x, s))
    }

    // ---- linear algebra ----

    /// Matrix product over the last two axes.
    ///
    /// Supported ranks: 2·2, 3·3 (batched), 2·3 (left operand shared across
    /// the batch) and 3·2 (right operand shared).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let mm = MatMulDims::new(sa, sb)?;
        let mut out = vec![0.0; mm.batch * mm.m * mm.n];
        mm.forward(av.data(), bv.data(), &mut out);
        let shape = if sa.len() == 2 && sb.len() == 2 {
            vec![mm.m, mm.n]
        } else {
            vec![mm.batch, mm.m, mm.n]
        };
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul(a, b)))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() < 2 {
            return dim_err(format!("transpose needs rank >= 2, got {s:?}"));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = xv.len() / (r * c);
        let mut out = vec![0.0; xv.len()];
        transpose_into(xv.data(), batch, r, c, &mut out);
        let mut shape = s.to_vec();
        let k = shape.len();
        shape.swap(k - 2, k - 1);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = *xv.shape().last().unwrap_or(&1);
        let mut out = vec![0.0; xv.len()];
        kernels::softmax_rows(xv.data(), n, &mut out);
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(out, Op::Softmax(x))
    }

    // ---- reductions and shape plumbing ----

    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let out = self.reduce_value(x, axis, "sum", 1.0)?;
        Ok(self.push(out, Op::Sum(x, axis)))
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let xv = self.value(x);
        let n = match axis {
            Some(a) => {
                check_axis(xv.shape(), a, "mean")?;
                xv.shape()[a]
            }
            None => xv.len(),
        };
        let out = self.reduce_value(x, axis, "mean", 1.0 / n as f64)?;
        Ok(self.push(out, Op::Mean(x, axis)))
    }

    fn reduce_value(&self, x: Var, axis: Option<usize>, what: &str, k: f64) -> Result<Tensor> {
        let xv = self.value(x);
        match axis {
            None => Ok(Tensor::scalar(xv.data().iter().sum::<f64>() * k)),
            Some(a) => {
                check_axis(xv.shape(), a, what)?;
                let (outer, n, inner) = axis_blocks(xv.shape(), a);
                let mut out = vec![0.0; outer * inner];
                let d = xv.data();
                for o in 0..outer {
                    for j in 0..n {
                        let src = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
                        for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *acc += v;
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v *= k);
                let mut shape = xv.shape().to_vec();
                shape.remove(a);
                Ok(Tensor::from_parts(shape, out))
            }
        }
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return dim_err("concat of zero tensors");
        };
        let base = self.value(first).shape().to_vec();
        check_axis(&base, axis, "concat")?;
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return dim_err(format!(
                    "concat on axis {axis}: {s:?} incompatible with {base:?}"
                ));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_blocks(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let pv = self.value(p);
                let w = pv.shape()[axis] * inner;
                out.extend_from_slice(&pv.data()[o * w..(o + 1) * w]);
            }
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat(parts.to_vec(), axis)))
    }

    /// Contiguous range `[start, start+len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        check_axis(xv.shape(), axis, "slice")?;
        if len == 0 || start + len > xv.shape()[axis] {
            return dim_err(format!(
                "slice [{start}, {}) out of range for axis {axis} of {:?}",
                start + len,
                xv.shape()
            ));
        }
        let (outer, n, inner) = axis_blocks(xv.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&xv.data()[base..base + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        Ok(self.push(Tensor::from_parts(shape, out), Op::Slice { x, axis, start }))
    }

    /// Selects one position along `axis`, dropping that axis.
    pub fn index_axis(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let xv = self.value(x);
        check_axis(xv.shape(), axis, "index_axis")?;
        if index >= xv.shape()[axis] {
            return dim_err(format!(
                "index {index} out of range for axis {axis} of {:?}",
                xv.shape()
            ));
        }
        let (outer, n, inner) = axis_blocks(xv.shape(), axis);
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * n + index) * inner;
            out.extend_from_slice(&xv.data()[base..base + inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        Ok(self.push(Tensor::from_parts(shape, out), Op::IndexAxis { x, axis, index }))
    }

    /// Stacks equal-shaped tensors along a new axis.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return dim_err("stack of zero tensors");
        };
        let base = self.value(first).shape().to_vec();
        if axis > base.len() || base.len() + 1 > super::MAX_RANK {
            return dim_err(format!("cannot stack {base:?} on axis {axis}"));
        }
        for &p in parts {
            same_shape(self.value(first), self.value(p), "stack")?;
        }
        let mut shape = base.clone();
        shape.insert(axis, parts.len());
        let (outer, _, inner) = axis_blocks(&shape, axis);
        let mut out = Vec::with_capacity(outer * parts.len() * inner);
        for o in 0..outer {
            for &p in parts {
                out.extend_from_slice(&self.value(p).data()[o * inner..(o + 1) * inner]);
            }
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::Stack(parts.to_vec(), axis)))
    }

    // ---- network primitives ----

    /// 1-D cross-correlation of `x: b×c_in×t` with `w: c_out×c_in×k`.
    pub fn conv1d(&mut self, x: Var, w: Var, padding: Padding) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (sx, sw) = (xv.shape(), wv.shape());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return dim_err(format!(
                "conv1d: input {sx:?} and kernels {sw:?} are incompatible"
            ));
        }
        let (k, t) = (sw[2], sx[2]);
        let (pad_left, pad_right) = match padding {
            Padding::Same => ((k - 1) / 2, k - 1 - (k - 1) / 2),
            Padding::Valid => (0, 0),
        };
        if k > t + pad_left + pad_right {
            return dim_err(format!(
                "conv1d: kernel length {k} exceeds padded input length {} (input {sx:?}, kernels {sw:?})",
                t + pad_left + pad_right
            ));
        }
        let geom = ConvGeom {
            batch: sx[0],
            c_in: sx[1],
            c_out: sw[0],
            len_in: t,
            kernel: k,
            pad_left,
            len_out: t + pad_left + pad_right - k + 1,
        };
        let mut out = vec![0.0; geom.batch * geom.c_out * geom.len_out];
        kernels::conv1d_forward(&geom, xv.data(), wv.data(), &mut out);
        let out = Tensor::from_parts(vec![geom.batch, geom.c_out, geom.len_out], out);
        Ok(self.push(out, Op::Conv1d { x, w, geom }))
    }

    /// Per-channel normalisation of `x: b×c[×t]` followed by `gamma·x̂ + beta`.
    ///
    /// With `stats = None` the batch mean and biased variance are used (and
    /// returned); otherwise the provided `(mean, var)` are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() < 2 {
            return dim_err(format!("batch_norm needs rank >= 2, got {s:?}"));
        }
        let geom = BnGeom {
            batch: s[0],
            channels: s[1],
            inner: s.get(2).copied().unwrap_or(1),
        };
        let c = geom.channels;
        for (v, what) in [(gamma, "gamma"), (beta, "beta")] {
            if self.value(v).len() != c {
                return dim_err(format!(
                    "batch_norm {what} has {} entries, input has {c} channels",
                    self.value(v).len()
                ));
            }
        }
        let batch_stats = stats.is_none();
        let (mean, var) = match stats {
            Some((m, v)) if m.len() == c && v.len() == c => (m.to_vec(), v.to_vec()),
            Some(_) => return dim_err("batch_norm running statistics have wrong length"),
            None => kernels::channel_stats(&geom, xv.data()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xv.len()];
        let mut y = vec![0.0; xv.len()];
        kernels::bn_apply(
            &geom,
            xv.data(),
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
            &mut xhat,
            &mut y,
        );
        let out = Tensor::from_parts(s.to_vec(), y);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                geom,
                xhat,
                inv_std,
                batch_stats,
            },
        );
        Ok((v, mean, var))
    }

    /// Mean over rows of `−log softmax(logits)[label]`; `logits` is `b×C`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let s = lv.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return dim_err(format!(
                "cross entropy: logits {s:?} vs {} labels",
                labels.len()
            ));
        }
        let c = s[1];
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(RtfnError::data(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut probs = vec![0.0; lv.len()];
        kernels::softmax_rows(lv.data(), c, &mut probs);
        let mut loss = 0.0;
        for (row, &l) in lv.data().chunks_exact(c).zip(labels) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[l];
        }
        loss /= labels.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    // ---- reverse pass ----

    /// Back-propagates from the scalar `loss`. Gradients are accumulated
    /// additively over fan-out and kept only for variable leaves.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(RtfnError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Unary(x, op) => {
                let xv = self.value(*x).data();
                let yv = y.data();
                let dst = slot(grads, *x, self.value(*x));
                for i in 0..dst.len() {
                    let d = match op {
                        UnaryOp::Relu => {
                            if xv[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryOp::Sigmoid => yv[i] * (1.0 - yv[i]),
                        UnaryOp::Tanh => 1.0 - yv[i] * yv[i],
                        UnaryOp::Square => 2.0 * xv[i],
                    };
                    dst[i] += d * gd[i];
                }
            }
            Op::Binary(a, b, op, bc) => self.backprop_binary(*a, *b, *op, *bc, gd, grads),
            Op::Scale(x, s) => {
                let dst = slot(grads, *x, self.value(*x));
                for (d, v) in dst.iter_mut().zip(gd) {
                    *d += s * v;
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mm = MatMulDims::new(av.shape(), bv.shape()).expect("validated on forward");
                if self.wants(*a) {
                    mm.backward_a(bv.data(), gd, slot(grads, *a, av));
                }
                if self.wants(*b) {
                    mm.backward_b(av.data(), gd, slot(grads, *b, bv));
                }
            }
            Op::Transpose(x) => {
                let s = y.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let mut tmp = vec![0.0; gd.len()];
                transpose_into(gd, gd.len() / (r * c), r, c, &mut tmp);
                add_into(slot(grads, *x, self.value(*x)), &tmp);
            }
            Op::Reshape(x) => add_into(slot(grads, *x, self.value(*x)), gd),
            Op::Softmax(x) => {
                let n = *y.shape().last().unwrap_or(&1);
                kernels::softmax_rows_backward(y.data(), gd, n, slot(grads, *x, self.value(*x)));
            }
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let xv = self.value(*x);
                let k = match (&node.op, axis) {
                    (Op::Mean(..), Some(a)) => 1.0 / xv.shape()[*a] as f64,
                    (Op::Mean(..), None) => 1.0 / xv.len() as f64,
                    _ => 1.0,
                };
                let dst = slot(grads, *x, xv);
                match axis {
                    None => dst.iter_mut().for_each(|d| *d += k * gd[0]),
                    Some(a) => {
                        let (outer, n, inner) = axis_blocks(xv.shape(), *a);
                        for o in 0..outer {
                            let src = &gd[o * inner..(o + 1) * inner];
                            for j in 0..n {
                                let base = (o * n + j) * inner;
                                for (d, v) in dst[base..base + inner].iter_mut().zip(src) {
                                    *d += k * v;
                                }
                            }
                        }
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = axis_blocks(y.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.shape()[*axis] * inner;
                    if self.wants(p) {
                        let dst = slot(grads, p, pv);
                        for o in 0..outer {
                            let src = &gd[o * total * inner + offset..][..w];
                            add_into(&mut dst[o * w..(o + 1) * w], src);
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { x, axis, start } => {
                let xv = self.value(*x);
                let (outer, n, inner) = axis_blocks(xv.shape(), *axis);
                let len = y.shape()[*axis];
                let dst = slot(grads, *x, xv);
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    add_into(
                        &mut dst[base..base + len * inner],
                        &gd[o * len * inner..(o + 1) * len * inner],
                    );
                }
            }
            Op::IndexAxis { x, axis, index } => {
                let xv = self.value(*x);
                let (outer, n, inner) = axis_blocks(xv.shape(), *axis);
                let dst = slot(grads, *x, xv);
                for o in 0..outer {
                    let base = (o * n + index) * inner;
                    add_into(&mut dst[base..base + inner], &gd[o * inner..(o + 1) * inner]);
                }
            }
            Op::Stack(parts, axis) => {
                let (outer, k, inner) = axis_blocks(y.shape(), *axis);
                for (j, &p) in parts.iter().enumerate() {
                    if !self.wants(p) {
                        continue;
                    }
                    let dst = slot(grads, p, self.value(p));
                    for o in 0..outer {
                        let base = (o * k + j) * inner;
                        add_into(&mut dst[o * inner..(o + 1) * inner], &gd[base..base + inner]);
                    }
                }
            }
            Op::Conv1d { x, w, geom } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (want_x, want_w) = (self.wants(*x), self.wants(*w));
                let mut dx = want_x.then(|| take_or_zeros(grads, *x, xv));
                let mut dw = want_w.then(|| take_or_zeros(grads, *w, wv));
                kernels::conv1d_backward(
                    geom,
                    xv.data(),
                    wv.data(),
                    gd,
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                );
                if let Some(t) = dx {
                    grads[x.0] = Some(t);
                }
                if let Some(t) = dw {
                    grads[w.0] = Some(t);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                geom,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let mut dx = self.wants(*x).then(|| take_or_zeros(grads, *x, self.value(*x)));
                let mut dg = self
                    .wants(*gamma)
                    .then(|| take_or_zeros(grads, *gamma, self.value(*gamma)));
                let mut db = self
                    .wants(*beta)
                    .then(|| take_or_zeros(grads, *beta, self.value(*beta)));
                kernels::bn_backward(
                    geom,
                    xhat,
                    inv_std,
                    self.value(*gamma).data(),
                    gd,
                    *batch_stats,
                    dx.as_mut().map(|t| t.data_mut()),
                    dg.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                for (v, t) in [(*x, dx), (*gamma, dg), (*beta, db)] {
                    if let Some(t) = t {
                        grads[v.0] = Some(t);
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.value(*logits).shape()[1];
                let k = gd[0] / labels.len() as f64;
                let dst = slot(grads, *logits, self.value(*logits));
                for (r, &l) in labels.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == l { 1.0 } else { 0.0 };
                        dst[r * c + j] += k * (probs[r * c + j] - onehot);
                    }
                }
            }
        }
    }

    fn backprop_binary(
        &self,
        a: Var,
        b: Var,
        op: BinaryOp,
        bc: Broadcast,
        gd: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let (av, bv) = (self.value(a), self.value(b));
        let (na, nb) = (av.len(), bv.len());
        // index of the a/b element that produced output element i
        let ia = |i: usize| match bc {
            Broadcast::Left => i % na,
            _ => i,
        };
        let ib = |i: usize| match bc {
            Broadcast::Right => i % nb,
            _ => i,
        };
        if self.wants(a) {
            let mut dst = take_or_zeros(grads, a, av);
            let d = dst.data_mut();
            for (i, &g) in gd.iter().enumerate() {
                d[ia(i)] += match op {
                    BinaryOp::Add | BinaryOp::Sub => g,
                    BinaryOp::Mul => g * bv.data()[ib(i)],
                };
            }
            grads[a.0] = Some(dst);
        }
        if self.wants(b) {
            let mut dst = take_or_zeros(grads, b, bv);
            let d = dst.data_mut();
            for (i, &g) in gd.iter().enumerate() {
                d[ib(i)] += match op {
                    BinaryOp::Add => g,
                    BinaryOp::Sub => -g,
                    BinaryOp::Mul => g * av.data()[ia(i)],
                };
            }
            grads[b.0] = Some(dst);
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn take_or_zeros(grads: &mut [Option<Tensor>], v: Var, like: &Tensor) -> Tensor {
    grads[v.0]
        .take()
        .unwrap_or_else(|| Tensor::zeros(like.shape()))
}

fn slot<'g>(grads: &'g mut [Option<Tensor>], v: Var, like: &Tensor) -> &'g mut [f64] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(like.shape()))
        .data_mut()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn transpose_into(src: &[f64], batch: usize, r: usize, c: usize, dst: &mut [f64]) {
    for b in 0..batch {
        let (s, d) = (&src[b * r * c..(b + 1) * r * c], &mut dst[b * r * c..(b + 1) * r * c]);
        for i in 0..r {
            for j in 0..c {
                d[j * r + i] = s[i * c + j];
            }
        }
    }
}

/// Shape bookkeeping for the four supported matmul rank combinations.
struct MatMulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a_batched: bool,
    b_batched: bool,
}

impl MatMulDims {
    fn new(sa: &[usize], sb: &[usize]) -> Result<Self> {
        let err = || {
            dim_err(format!(
                "matmul: shapes {sa:?} and {sb:?} are incompatible"
            ))
        };
        let (a_batched, b_batched) = match (sa.len(), sb.len()) {
            (2, 2) => (false, false),
            (3, 3) => (true, true),
            (2, 3) => (false, true),
            (3, 2) => (true, false),
            _ => return err(),
        };
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 || (a_batched && b_batched && sa[0] != sb[0]) {
            return err();
        }
        let batch = if a_batched {
            sa[0]
        } else if b_batched {
            sb[0]
        } else {
            1
        };
        Ok(MatMulDims {
            batch,
            m,
            k,
            n,
            a_batched,
            b_batched,
        })
    }

    fn a_off(&self, i: usize) -> usize {
        if self.a_batched {
            i * self.m * self.k
        } else {
            0
        }
    }

    fn b_off(&self, i: usize) -> usize {
        if self.b_batched {
            i * self.k * self.n
        } else {
            0
        }
    }

    fn forward(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.a_batched && !self.b_batched {
            // rows of every batch item are contiguous: one big product
            gemm(self.batch * m, k, n, 1.0, a, (k, 1), b, (n, 1), 0.0, out, (n, 1));
            return;
        }
        for i in 0..self.batch {
            gemm(
                m,
                k,
                n,
                1.0,
                &a[self.a_off(i)..],
                (k, 1),
                &b[self.b_off(i)..],
                (n, 1),
                0.0,
                &mut out[i * m * n..],
                (n, 1),
            );
        }
    }

    /// dA += dC · Bᵀ
    fn backward_a(&self, b: &[f64], dc: &[f64], da: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.a_batched && !self.b_batched {
            gemm(self.batch * m, n, k, 1.0, dc, (n, 1), b, (1, n), 1.0, da, (k, 1));
            return;
        }
        for i in 0..self.batch {
            let off = self.a_off(i);
            gemm(
                m,
                n,
                k,
                1.0,
                &dc[i * m * n..],
                (n, 1),
                &b[self.b_off(i)..],
                (1, n),
                1.0,
                &mut da[off..],
                (k, 1),
            );
        }
    }

    /// dB += Aᵀ · dC
    fn backward_b(&self, a: &[f64], dc: &[f64], db: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.a_batched && !self.b_batched {
            gemm(k, self.batch * m, n, 1.0, a, (1, k), dc, (n, 1), 1.0, db, (n, 1));
            return;
        }
        for i in 0..self.batch {
            let off = self.b_off(i);
            gemm(
                k,
                m,
                n,
                1.0,
                &a[self.a_off(i)..],
                (1, k),
                &dc[i * m * n..],
                (n, 1),
                1.0,
                &mut db[off..],
                (n, 1),
            );
        }
    }
}
