use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::tensor::{broadcast_shape, expandable, split_axis, tile_to, Tensor};
use crate::error::{Error, Result};

/// Recorded operation kind plus whatever the backward pass needs beyond the
/// input and output values.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    Shift,
    MatMul,
    Affine,
    Transpose,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Pow(f64),
    Sqrt,
    Abs,
    Sign,
    Clamp(f64, f64),
    Sum,
    Mean,
    SumLast,
    ExpandLast(usize),
    Expand,
    SumTo,
    Reshape,
    Slice { axis: usize, start: usize },
    Concat { axis: usize },
    Gather(Rc<[usize]>),
    ScatterAdd(Rc<[usize]>),
    Conv1d { stride: usize, dilation: usize, pad_left: usize },
    MaxPool1d { argmax: Rc<[usize]> },
    Ema(f64),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Scale(_) => "scale",
            Op::Shift => "shift",
            Op::MatMul => "matmul",
            Op::Affine => "affine",
            Op::Transpose => "transpose",
            Op::Relu => "relu",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Pow(_) => "pow",
            Op::Sqrt => "sqrt",
            Op::Abs => "abs",
            Op::Sign => "sign",
            Op::Clamp(..) => "clamp",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumLast => "sum_last",
            Op::ExpandLast(_) => "expand_last",
            Op::Expand => "expand",
            Op::SumTo => "sum_to",
            Op::Reshape => "reshape",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Gather(_) => "gather",
            Op::ScatterAdd(_) => "scatter_add",
            Op::Conv1d { .. } => "conv1d",
            Op::MaxPool1d { .. } => "maxpool1d",
            Op::Ema(_) => "ema",
        }
    }
}

pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<usize>,
    pub value: Tensor,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

/// A tape of recorded operations. Node ids are assigned in creation order,
/// which is a valid topological order.
///
/// A graph is single-threaded; independent graphs may live on separate
/// threads.
pub struct Graph {
    pub(crate) nodes: RefCell<Vec<Node>>,
    pub(crate) backward_done: Cell<bool>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.len()).finish()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    pub(crate) graph: &'g Graph,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nodes = self.graph.nodes.borrow();
        let node = &nodes[self.id];
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("op", &node.op.name())
            .field("shape", &node.value.shape())
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), backward_done: Cell::new(false) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that accumulates a gradient on backward.
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.push(Op::Leaf, vec![], t, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(Op::Leaf, vec![], t, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    pub(crate) fn push(&self, op: Op, inputs: Vec<usize>, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { op, inputs, value, requires_grad, grad: None });
        Var { graph: self, id }
    }

    fn record(&self, op: Op, inputs: &[Var<'_>], value: Tensor) -> Var<'_> {
        let nodes = self.nodes.borrow();
        let rg = inputs.iter().any(|v| nodes[v.id].requires_grad);
        drop(nodes);
        self.push(op, inputs.iter().map(|v| v.id).collect(), value, rg)
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat<'g>(&'g self, parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        if parts.is_empty() {
            return Err(Error::dim("concat", "no inputs"));
        }
        let nodes = self.nodes.borrow();
        let first = nodes[parts[0].id].value.shape().to_vec();
        if axis >= first.len() {
            return Err(Error::dim("concat", format!("axis {} out of range for {:?}", axis, first)));
        }
        let mut total = 0;
        for p in parts {
            let s = nodes[p.id].value.shape();
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", format!("{:?} vs {:?} on axis {}", first, s, axis)));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let v = &nodes[p.id].value;
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        drop(nodes);
        Ok(self.record(Op::Concat { axis }, parts, Tensor::new(shape, data)?))
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'g, Tensor> {
        Ref::map(self.graph.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn data(&self) -> Vec<f64> {
        self.value().data().to_vec()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value().numel()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient of a parameter leaf after `backward`.
    pub fn grad(&self) -> Option<Tensor> {
        let nodes = self.graph.nodes.borrow();
        let node = &nodes[self.id];
        node.grad.as_ref().map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g> {
        let value = {
            let v = self.value();
            Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect()).expect("same shape")
        };
        self.graph.record(op, &[self], value)
    }

    fn binary(self, other: Var<'g>, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            let b = other.value();
            let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
                Error::dim(op.name(), format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()))
            })?;
            let n: usize = shape.iter().product();
            let (ad, bd) = (a.data(), b.data());
            let (na, nb) = (ad.len(), bd.len());
            let data = (0..n).map(|i| f(ad[i % na], bd[i % nb])).collect();
            Tensor::new(shape, data)?
        };
        Ok(self.graph.record(op, &[self, other], value))
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(self, other: Var<'g>) -> Result<Var<'g>> {
        if let Some(i) = other.value().data().iter().position(|&d| d == 0.0) {
            return Err(Error::domain("div", format!("division by zero at element {}", i)));
        }
        self.binary(other, Op::Div, |a, b| a / b)
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.unary(Op::Scale(c), |x| x * c)
    }

    pub fn shift(self, c: f64) -> Var<'g> {
        self.unary(Op::Shift, |x| x + c)
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(Op::Relu, |x| x.max(0.0))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g> {
        self.unary(Op::LeakyRelu(slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(Op::Sigmoid, sigmoid)
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn ln(self) -> Result<Var<'g>> {
        if let Some(i) = self.value().data().iter().position(|&x| x <= 0.0) {
            return Err(Error::domain("log", format!("non-positive input at element {}", i)));
        }
        Ok(self.unary(Op::Log, f64::ln))
    }

    pub fn powf(self, p: f64) -> Var<'g> {
        self.unary(Op::Pow(p), |x| x.powf(p))
    }

    pub fn sqrt(self) -> Result<Var<'g>> {
        if let Some(i) = self.value().data().iter().position(|&x| x < 0.0) {
            return Err(Error::domain("sqrt", format!("negative input at element {}", i)));
        }
        Ok(self.unary(Op::Sqrt, f64::sqrt))
    }

    pub fn abs(self) -> Var<'g> {
        self.unary(Op::Abs, f64::abs)
    }

    /// Elementwise sign; contributes zero gradient.
    pub fn sign(self) -> Var<'g> {
        self.unary(Op::Sign, sign)
    }

    /// Gradient passes where `lo <= x <= hi`, zero outside.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g> {
        self.unary(Op::Clamp(lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(self) -> Var<'g> {
        let s: f64 = self.value().data().iter().sum();
        self.graph.record(Op::Sum, &[self], Tensor::scalar(s))
    }

    pub fn mean(self) -> Var<'g> {
        let (s, n) = {
            let v = self.value();
            (v.data().iter().sum::<f64>(), v.numel())
        };
        self.graph.record(Op::Mean, &[self], Tensor::scalar(s / n as f64))
    }

    /// Reduce the last axis by summation.
    pub fn sum_last(self) -> Result<Var<'g>> {
        let value = {
            let v = self.value();
            let shape = v.shape();
            let Some((&last, lead)) = shape.split_last() else {
                return Err(Error::dim("sum_last", "scalar input"));
            };
            let data = if last == 0 {
                vec![0.0; lead.iter().product()]
            } else {
                v.data().chunks(last).map(|c| c.iter().sum()).collect()
            };
            Tensor::new(lead.to_vec(), data)?
        };
        Ok(self.graph.record(Op::SumLast, &[self], value))
    }

    pub fn mean_last(self) -> Result<Var<'g>> {
        let n = *self.shape().last().ok_or_else(|| Error::dim("mean_last", "scalar input"))?;
        Ok(self.sum_last()?.scale(1.0 / n as f64))
    }

    /// Append a trailing axis of extent `n`, repeating each element.
    pub fn expand_last(self, n: usize) -> Var<'g> {
        let value = {
            let v = self.value();
            let mut shape = v.shape().to_vec();
            shape.push(n);
            let data = v.data().iter().flat_map(|&x| std::iter::repeat_n(x, n)).collect();
            Tensor::new(shape, data).expect("expand_last shape")
        };
        self.graph.record(Op::ExpandLast(n), &[self], value)
    }

    /// Broadcast a scalar or trailing-suffix tensor to `shape`.
    pub fn expand(self, shape: &[usize]) -> Result<Var<'g>> {
        let value = {
            let v = self.value();
            if !expandable(v.shape(), shape) {
                return Err(Error::dim("expand", format!("{:?} -> {:?}", v.shape(), shape)));
            }
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), tile_to(v.data(), n))?
        };
        Ok(self.graph.record(Op::Expand, &[self], value))
    }

    /// Sum a tensor down to a scalar or trailing-suffix `shape` (adjoint of expand).
    pub fn sum_to(self, shape: &[usize]) -> Result<Var<'g>> {
        let value = {
            let v = self.value();
            if !expandable(shape, v.shape()) {
                return Err(Error::dim("sum_to", format!("{:?} -> {:?}", v.shape(), shape)));
            }
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), super::tensor::reduce_to(v.data(), n))?
        };
        Ok(self.graph.record(Op::SumTo, &[self], value))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let value = self.to_tensor().reshaped(shape.to_vec())?;
        Ok(self.graph.record(Op::Reshape, &[self], value))
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            let b = other.value();
            let (m, k, n) = matmul_dims("matmul", a.shape(), b.shape())?;
            let mut out = vec![0.0; m * n];
            kernels::gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
            Tensor::new(vec![m, n], out)?
        };
        Ok(self.graph.record(Op::MatMul, &[self, other], value))
    }

    /// `self @ weight + bias` with `self: [m,k]`, `weight: [k,n]`, `bias: [n]`.
    pub fn affine(self, weight: Var<'g>, bias: Var<'g>) -> Result<Var<'g>> {
        let value = {
            let x = self.value();
            let w = weight.value();
            let b = bias.value();
            let (m, k, n) = matmul_dims("affine", x.shape(), w.shape())?;
            if b.shape() != [n] {
                return Err(Error::dim("affine", format!("bias {:?} for output width {}", b.shape(), n)));
            }
            let mut out = tile_to(b.data(), m * n);
            kernels::gemm(m, k, n, x.data(), false, w.data(), false, 1.0, &mut out);
            Tensor::new(vec![m, n], out)?
        };
        Ok(self.graph.record(Op::Affine, &[self, weight, bias], value))
    }

    /// Transpose of a 2-D tensor.
    pub fn t(self) -> Result<Var<'g>> {
        let value = {
            let v = self.value();
            let &[r, c] = v.shape() else {
                return Err(Error::dim("transpose", format!("expected 2-D, got {:?}", v.shape())));
            };
            Tensor::new(vec![c, r], kernels::transpose(v.data(), r, c))?
        };
        Ok(self.graph.record(Op::Transpose, &[self], value))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'g>> {
        let value = {
            let v = self.value();
            let shape = v.shape();
            if axis >= shape.len() || start + len > shape[axis] {
                return Err(Error::dim(
                    "slice",
                    format!("[{}, {}) on axis {} of {:?}", start, start + len, axis, shape),
                ));
            }
            let (outer, ext, inner) = split_axis(shape, axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * ext * inner + start * inner;
                data.extend_from_slice(&v.data()[base..base + len * inner]);
            }
            let mut out_shape = shape.to_vec();
            out_shape[axis] = len;
            Tensor::new(out_shape, data)?
        };
        Ok(self.graph.record(Op::Slice { axis, start }, &[self], value))
    }

    /// `out[i] = self.flat[idx[i]]`, shaped `shape`.
    pub fn gather(self, idx: Rc<[usize]>, shape: &[usize]) -> Result<Var<'g>> {
        let value = {
            let v = self.value();
            if shape.iter().product::<usize>() != idx.len() {
                return Err(Error::dim("gather", format!("{} indices for shape {:?}", idx.len(), shape)));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= v.numel()) {
                return Err(Error::dim("gather", format!("index {} out of {} elements", bad, v.numel())));
            }
            let d = v.data();
            Tensor::new(shape.to_vec(), idx.iter().map(|&i| d[i]).collect())?
        };
        Ok(self.graph.record(Op::Gather(idx), &[self], value))
    }

    /// `out[idx[i]] += self.flat[i]` into a zero tensor of `shape`.
    pub fn scatter_add(self, idx: Rc<[usize]>, shape: &[usize]) -> Result<Var<'g>> {
        let value = {
            let v = self.value();
            let n: usize = shape.iter().product();
            if idx.len() != v.numel() {
                return Err(Error::dim("scatter_add", format!("{} indices for {} values", idx.len(), v.numel())));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                return Err(Error::dim("scatter_add", format!("index {} out of {} elements", bad, n)));
            }
            let mut out = vec![0.0; n];
            for (&i, &x) in idx.iter().zip(v.data()) {
                out[i] += x;
            }
            Tensor::new(shape.to_vec(), out)?
        };
        Ok(self.graph.record(Op::ScatterAdd(idx), &[self], value))
    }

    /// 1-D convolution. `self: [batch, c_in, len]`, `weight: [c_out, c_in, k]`,
    /// optional `bias: [c_out]`. `pad_left` zeros are prepended; causal
    /// convolution uses `pad_left = dilation*(k-1)`.
    pub fn conv1d(
        self,
        weight: Var<'g>,
        bias: Option<Var<'g>>,
        stride: usize,
        dilation: usize,
        pad_left: usize,
    ) -> Result<Var<'g>> {
        let value = {
            let x = self.value();
            let w = weight.value();
            let geo = conv_geom(x.shape(), w.shape(), stride, dilation, pad_left)?;
            let b = bias.map(|b| b.value());
            if let Some(b) = &b {
                if b.shape() != [geo.c_out] {
                    return Err(Error::dim("conv1d", format!("bias {:?} for {} channels", b.shape(), geo.c_out)));
                }
            }
            let out = kernels::conv1d_forward(&geo, x.data(), w.data(), b.as_ref().map(|b| b.data()));
            Tensor::new(vec![geo.batch, geo.c_out, geo.out_len()], out)?
        };
        let op = Op::Conv1d { stride, dilation, pad_left };
        Ok(match bias {
            Some(b) => self.graph.record(op, &[self, weight, b], value),
            None => self.graph.record(op, &[self, weight], value),
        })
    }

    /// Max pool along the last axis; ties go to the lowest index.
    pub fn maxpool1d(self, kernel: usize, stride: usize) -> Result<Var<'g>> {
        if kernel == 0 || stride == 0 {
            return Err(Error::dim("maxpool1d", "kernel and stride must be positive"));
        }
        let (value, argmax) = {
            let v = self.value();
            let shape = v.shape();
            let Some((&len, lead)) = shape.split_last() else {
                return Err(Error::dim("maxpool1d", "scalar input"));
            };
            if len < kernel {
                return Err(Error::dim("maxpool1d", format!("length {} shorter than kernel {}", len, kernel)));
            }
            let rows = lead.iter().product();
            let (out, arg) = kernels::maxpool_forward(v.data(), rows, len, kernel, stride);
            let mut s = lead.to_vec();
            s.push((len - kernel) / stride + 1);
            (Tensor::new(s, out)?, arg)
        };
        Ok(self.graph.record(Op::MaxPool1d { argmax: argmax.into() }, &[self], value))
    }

    /// Exponential moving average along the last axis:
    /// `e_0 = x_0`, `e_t = beta*x_t + (1-beta)*e_{t-1}`, evaluated as
    /// `e_{t-1} + beta*(x_t - e_{t-1})` so constant inputs stay exact.
    pub fn ema(self, beta: f64) -> Result<Var<'g>> {
        let value = {
            let v = self.value();
            let Some(&len) = v.shape().last() else {
                return Err(Error::dim("ema", "scalar input"));
            };
            let mut out = v.data().to_vec();
            if len > 0 {
                for row in out.chunks_mut(len) {
                    for t in 1..len {
                        row[t] = row[t - 1] + beta * (row[t] - row[t - 1]);
                    }
                }
            }
            Tensor::new(v.shape().to_vec(), out)?
        };
        Ok(self.graph.record(Op::Ema(beta), &[self], value))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn matmul_dims(op: &'static str, a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        (&[m, k], &[k2, n]) if k == k2 => Ok((m, k, n)),
        _ => Err(Error::dim(op, format!("{:?} @ {:?}", a, b))),
    }
}

pub(crate) fn conv_geom(x: &[usize], w: &[usize], stride: usize, dilation: usize, pad_left: usize) -> Result<ConvGeom> {
    match (x, w) {
        (&[batch, c_in, len], &[c_out, c_in2, kernel]) if c_in == c_in2 && kernel > 0 && stride > 0 && dilation > 0 => {
            let geo = ConvGeom { batch, c_in, len, c_out, kernel, stride, dilation, pad_left };
            if geo.out_len() == 0 {
                return Err(Error::dim("conv1d", format!("input {:?} too short for kernel {:?}", x, w)));
            }
            Ok(geo)
        }
        _ => Err(Error::dim(
            "conv1d",
            format!("input {:?}, weight {:?}, stride {}, dilation {}", x, w, stride, dilation),
        )),
    }
}
