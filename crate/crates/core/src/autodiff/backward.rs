use super::graph::{conv_geom, sign, Graph, Node, Op, Var};
use super::kernels;
use super::tensor::{reduce_to, split_axis, tile_to, Tensor};
use crate::error::{Error, Result};

impl Graph {
    /// Reverse pass from a scalar `root`; every parameter leaf on the path
    /// receives `d root / d leaf`. A graph supports one backward pass.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        if !std::ptr::eq(root.graph, self) {
            return Err(Error::Contract("backward root belongs to another graph".into()));
        }
        if root.numel() != 1 {
            return Err(Error::Contract(format!("backward root must be scalar, got shape {:?}", root.shape())));
        }
        if self.backward_done.get() {
            return Err(Error::Unsupported(
                "backward already ran on this graph; re-run the forward pass first".into(),
            ));
        }
        let mut leaf_grads: Vec<(usize, Vec<f64>)> = Vec::new();
        {
            let nodes = self.nodes.borrow();
            let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
            adj[root.id] = Some(vec![1.0]);
            for id in (0..=root.id).rev() {
                let Some(g) = adj[id].take() else { continue };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                if matches!(node.op, Op::Leaf) {
                    leaf_grads.push((id, g));
                    continue;
                }
                for (input, gi) in vjp(node, &nodes, &g) {
                    if !nodes[input].requires_grad {
                        continue;
                    }
                    match &mut adj[input] {
                        Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(gi),
                    }
                }
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            match &mut nodes[id].grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        for node in nodes.iter_mut() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.numel()]);
            }
        }
        self.backward_done.set(true);
        Ok(())
    }
}

/// Vector-Jacobian products for every input of `node` given the output
/// adjoint `g`.
fn vjp(node: &Node, nodes: &[Node], g: &[f64]) -> Vec<(usize, Vec<f64>)> {
    let inp = |i: usize| &nodes[node.inputs[i]].value;
    let id = |i: usize| node.inputs[i];
    let y = node.value.data();
    match &node.op {
        Op::Leaf => vec![],
        Op::Add => vec![(id(0), reduce_to(g, inp(0).numel())), (id(1), reduce_to(g, inp(1).numel()))],
        Op::Sub => {
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            vec![(id(0), reduce_to(g, inp(0).numel())), (id(1), reduce_to(&neg, inp(1).numel()))]
        }
        Op::Mul => {
            let (a, b) = (inp(0).data(), inp(1).data());
            let ga: Vec<f64> = g.iter().enumerate().map(|(i, v)| v * b[i % b.len()]).collect();
            let gb: Vec<f64> = g.iter().enumerate().map(|(i, v)| v * a[i % a.len()]).collect();
            vec![(id(0), reduce_to(&ga, a.len())), (id(1), reduce_to(&gb, b.len()))]
        }
        Op::Div => {
            let (a, b) = (inp(0).data(), inp(1).data());
            let ga: Vec<f64> = g.iter().enumerate().map(|(i, v)| v / b[i % b.len()]).collect();
            let gb: Vec<f64> = g
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let bi = b[i % b.len()];
                    -v * a[i % a.len()] / (bi * bi)
                })
                .collect();
            vec![(id(0), reduce_to(&ga, a.len())), (id(1), reduce_to(&gb, b.len()))]
        }
        Op::Scale(c) => vec![(id(0), g.iter().map(|v| v * c).collect())],
        Op::Shift | Op::Reshape => vec![(id(0), g.to_vec())],
        Op::MatMul => {
            let (a, b) = (inp(0), inp(1));
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut ga = vec![0.0; m * k];
            kernels::gemm(m, n, k, g, false, b.data(), true, 0.0, &mut ga);
            let mut gb = vec![0.0; k * n];
            kernels::gemm(k, m, n, a.data(), true, g, false, 0.0, &mut gb);
            vec![(id(0), ga), (id(1), gb)]
        }
        Op::Affine => {
            let (x, w) = (inp(0), inp(1));
            let (m, k, n) = (x.shape()[0], x.shape()[1], w.shape()[1]);
            let mut gx = vec![0.0; m * k];
            kernels::gemm(m, n, k, g, false, w.data(), true, 0.0, &mut gx);
            let mut gw = vec![0.0; k * n];
            kernels::gemm(k, m, n, x.data(), true, g, false, 0.0, &mut gw);
            vec![(id(0), gx), (id(1), gw), (id(2), reduce_to(g, n))]
        }
        Op::Transpose => {
            let s = inp(0).shape();
            vec![(id(0), kernels::transpose(g, s[1], s[0]))]
        }
        Op::Relu => {
            let x = inp(0).data();
            vec![(id(0), g.iter().zip(x).map(|(v, &x)| if x > 0.0 { *v } else { 0.0 }).collect())]
        }
        Op::LeakyRelu(s) => {
            let x = inp(0).data();
            vec![(id(0), g.iter().zip(x).map(|(v, &x)| if x > 0.0 { *v } else { s * v }).collect())]
        }
        Op::Tanh => vec![(id(0), g.iter().zip(y).map(|(v, y)| v * (1.0 - y * y)).collect())],
        Op::Sigmoid => vec![(id(0), g.iter().zip(y).map(|(v, y)| v * y * (1.0 - y)).collect())],
        Op::Exp => vec![(id(0), g.iter().zip(y).map(|(v, y)| v * y).collect())],
        Op::Log => vec![(id(0), g.iter().zip(inp(0).data()).map(|(v, x)| v / x).collect())],
        Op::Pow(p) => {
            let x = inp(0).data();
            vec![(id(0), g.iter().zip(x).map(|(v, x)| v * p * x.powf(p - 1.0)).collect())]
        }
        Op::Sqrt => vec![(
            id(0),
            g.iter().zip(y).map(|(v, y)| if *y == 0.0 { 0.0 } else { v * 0.5 / y }).collect(),
        )],
        Op::Abs => vec![(id(0), g.iter().zip(inp(0).data()).map(|(v, &x)| v * sign(x)).collect())],
        Op::Sign => vec![],
        Op::Clamp(lo, hi) => {
            let x = inp(0).data();
            vec![(
                id(0),
                g.iter().zip(x).map(|(v, x)| if x >= lo && x <= hi { *v } else { 0.0 }).collect(),
            )]
        }
        Op::Sum => vec![(id(0), vec![g[0]; inp(0).numel()])],
        Op::Mean => {
            let n = inp(0).numel();
            vec![(id(0), vec![g[0] / n as f64; n])]
        }
        Op::SumLast => {
            let n = *inp(0).shape().last().expect("sum_last input rank");
            vec![(id(0), g.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect())]
        }
        Op::ExpandLast(n) => vec![(id(0), g.chunks(*n).map(|c| c.iter().sum()).collect())],
        Op::Expand => vec![(id(0), reduce_to(g, inp(0).numel()))],
        Op::SumTo => vec![(id(0), tile_to(g, inp(0).numel()))],
        Op::Slice { axis, start } => {
            let shape = inp(0).shape();
            let (outer, ext, inner) = split_axis(shape, *axis);
            let len = node.value.shape()[*axis];
            let mut gx = vec![0.0; inp(0).numel()];
            for o in 0..outer {
                let base = o * ext * inner + start * inner;
                let src = &g[o * len * inner..(o + 1) * len * inner];
                gx[base..base + len * inner].copy_from_slice(src);
            }
            vec![(id(0), gx)]
        }
        Op::Concat { axis } => {
            let (outer, total, inner) = split_axis(node.value.shape(), *axis);
            let mut offset = 0;
            let mut out = Vec::with_capacity(node.inputs.len());
            for (i, &input) in node.inputs.iter().enumerate() {
                let len = inp(i).shape()[*axis];
                let mut gi = Vec::with_capacity(inp(i).numel());
                for o in 0..outer {
                    let base = o * total * inner + offset * inner;
                    gi.extend_from_slice(&g[base..base + len * inner]);
                }
                offset += len;
                out.push((input, gi));
            }
            out
        }
        Op::Gather(idx) => {
            let mut gx = vec![0.0; inp(0).numel()];
            for (&i, v) in idx.iter().zip(g) {
                gx[i] += v;
            }
            vec![(id(0), gx)]
        }
        Op::ScatterAdd(idx) => vec![(id(0), idx.iter().map(|&i| g[i]).collect())],
        Op::Conv1d { stride, dilation, pad_left } => {
            let (x, w) = (inp(0), inp(1));
            let geo = conv_geom(x.shape(), w.shape(), *stride, *dilation, *pad_left).expect("validated on forward");
            let (gx, gw, gb) = kernels::conv1d_backward(&geo, x.data(), w.data(), g);
            let mut out = vec![(id(0), gx), (id(1), gw)];
            if node.inputs.len() == 3 {
                out.push((id(2), gb));
            }
            out
        }
        Op::MaxPool1d { argmax } => {
            let mut gx = vec![0.0; inp(0).numel()];
            for (&i, v) in argmax.iter().zip(g) {
                gx[i] += v;
            }
            vec![(id(0), gx)]
        }
        Op::Ema(beta) => {
            let len = *inp(0).shape().last().expect("ema rank");
            let mut gx = vec![0.0; g.len()];
            if len > 0 {
                for (grow, xrow) in g.chunks(len).zip(gx.chunks_mut(len)) {
                    let mut carry = 0.0;
                    for t in (0..len).rev() {
                        carry = grow[t] + (1.0 - beta) * carry;
                        xrow[t] = if t == 0 { carry } else { beta * carry };
                    }
                }
            }
            vec![(id(0), gx)]
        }
    }
}

impl Graph {
    /// Gradient of scalar `root` with respect to each of `wrt`, recorded as new
    /// graph nodes so it can itself be differentiated.
    ///
    /// Only the second-order-capable op subset may lie between `wrt` and
    /// `root`: add, sub, mul, scale, shift, matmul, affine, transpose, relu,
    /// leaky_relu, tanh, sigmoid, exp, div, sum, mean, sum_last, expand_last,
    /// expand, sum_to, reshape, slice, concat, sqrt and pow.
    pub fn grad<'g>(&'g self, root: Var<'g>, wrt: &[Var<'g>]) -> Result<Vec<Var<'g>>> {
        if root.numel() != 1 {
            return Err(Error::Contract(format!("grad root must be scalar, got shape {:?}", root.shape())));
        }
        let n = root.id + 1;
        let mut depends = vec![false; n];
        {
            let nodes = self.nodes.borrow();
            for w in wrt {
                if w.id < n {
                    depends[w.id] = true;
                }
            }
            for id in 0..n {
                if !depends[id] && nodes[id].inputs.iter().any(|&i| depends[i]) {
                    depends[id] = true;
                }
            }
        }
        let mut adj: Vec<Option<Var<'g>>> = vec![None; n];
        adj[root.id] = Some(self.constant(Tensor::filled(&root.shape(), 1.0)));
        for id in (0..n).rev() {
            if !depends[id] {
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            if wrt.iter().any(|w| w.id == id) {
                adj[id] = Some(g);
                if matches!(self.nodes.borrow()[id].op, Op::Leaf) {
                    continue;
                }
            }
            let (op, inputs) = {
                let nodes = self.nodes.borrow();
                (nodes[id].op.clone(), nodes[id].inputs.clone())
            };
            if matches!(op, Op::Leaf) {
                continue;
            }
            let this = Var { graph: self, id };
            for (input, gi) in self.symbolic_vjp(&op, this, &inputs, g, &depends)? {
                let acc = match adj[input].take() {
                    Some(prev) => prev.add(gi)?,
                    None => gi,
                };
                adj[input] = Some(acc);
            }
        }
        wrt.iter()
            .map(|w| match w.id < n {
                true => Ok(adj[w.id].unwrap_or_else(|| self.constant(Tensor::zeros(&w.shape())))),
                false => Ok(self.constant(Tensor::zeros(&w.shape()))),
            })
            .collect()
    }

    /// Evaluates `then(∇_wrt root)` and back-propagates it into every
    /// parameter leaf; returns the value of the functional.
    pub fn grad_of_grad<'g, F>(&'g self, root: Var<'g>, wrt: Var<'g>, then: F) -> Result<Var<'g>>
    where
        F: FnOnce(Var<'g>) -> Result<Var<'g>>,
    {
        let g = self.grad(root, &[wrt])?.remove(0);
        let penalty = then(g)?;
        self.backward(penalty)?;
        Ok(penalty)
    }

    fn symbolic_vjp<'g>(
        &'g self,
        op: &Op,
        this: Var<'g>,
        inputs: &[usize],
        g: Var<'g>,
        depends: &[bool],
    ) -> Result<Vec<(usize, Var<'g>)>> {
        let var = |i: usize| Var { graph: self, id: inputs[i] };
        let needs = |i: usize| depends[inputs[i]];
        let fit = |v: Var<'g>, target: &Var<'g>| -> Result<Var<'g>> {
            let ts = target.shape();
            if v.shape() == ts {
                Ok(v)
            } else {
                v.sum_to(&ts)
            }
        };
        let mut out = Vec::new();
        match op {
            Op::Add | Op::Sub => {
                if needs(0) {
                    out.push((inputs[0], fit(g, &var(0))?));
                }
                if needs(1) {
                    let gb = if matches!(op, Op::Sub) { g.neg() } else { g };
                    out.push((inputs[1], fit(gb, &var(1))?));
                }
            }
            Op::Mul => {
                if needs(0) {
                    out.push((inputs[0], fit(g.mul(var(1))?, &var(0))?));
                }
                if needs(1) {
                    out.push((inputs[1], fit(g.mul(var(0))?, &var(1))?));
                }
            }
            Op::Div => {
                if needs(0) {
                    out.push((inputs[0], fit(g.div(var(1))?, &var(0))?));
                }
                if needs(1) {
                    let gb = g.mul(this)?.div(var(1))?.neg();
                    out.push((inputs[1], fit(gb, &var(1))?));
                }
            }
            Op::Exp => out.push((inputs[0], g.mul(this)?)),
            Op::Scale(c) => out.push((inputs[0], g.scale(*c))),
            Op::Shift => out.push((inputs[0], g)),
            Op::Reshape => out.push((inputs[0], g.reshape(&var(0).shape())?)),
            Op::Transpose => out.push((inputs[0], g.t()?)),
            Op::MatMul => {
                if needs(0) {
                    out.push((inputs[0], g.matmul(var(1).t()?)?));
                }
                if needs(1) {
                    out.push((inputs[1], var(0).t()?.matmul(g)?));
                }
            }
            Op::Affine => {
                if needs(0) {
                    out.push((inputs[0], g.matmul(var(1).t()?)?));
                }
                if needs(1) {
                    out.push((inputs[1], var(0).t()?.matmul(g)?));
                }
                if needs(2) {
                    out.push((inputs[2], g.sum_to(&var(2).shape())?));
                }
            }
            Op::Relu | Op::LeakyRelu(_) => {
                let slope = if let Op::LeakyRelu(s) = op { *s } else { 0.0 };
                let x = var(0).to_tensor();
                let mask: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { 1.0 } else { slope }).collect();
                let mask = self.constant(Tensor::new(x.shape().to_vec(), mask)?);
                out.push((inputs[0], g.mul(mask)?));
            }
            Op::Tanh => {
                let d = this.mul(this)?.neg().shift(1.0);
                out.push((inputs[0], g.mul(d)?));
            }
            Op::Sigmoid => {
                let d = this.mul(this.neg().shift(1.0))?;
                out.push((inputs[0], g.mul(d)?));
            }
            Op::Pow(p) => {
                let d = var(0).powf(p - 1.0).scale(*p);
                out.push((inputs[0], g.mul(d)?));
            }
            Op::Sqrt => {
                // zero-valued outputs get zero gradient, matching the first-order rule
                let y = this.to_tensor();
                let zero: Vec<f64> = y.data().iter().map(|&v| if v == 0.0 { 1.0 } else { 0.0 }).collect();
                let keep: Vec<f64> = zero.iter().map(|z| 1.0 - z).collect();
                let zero = self.constant(Tensor::new(y.shape().to_vec(), zero)?);
                let keep = self.constant(Tensor::new(y.shape().to_vec(), keep)?);
                let inv = this.add(zero)?.powf(-1.0).mul(keep)?.scale(0.5);
                out.push((inputs[0], g.mul(inv)?));
            }
            Op::Sum => out.push((inputs[0], g.expand(&var(0).shape())?)),
            Op::Mean => {
                let shape = var(0).shape();
                let n: usize = shape.iter().product();
                out.push((inputs[0], g.scale(1.0 / n as f64).expand(&shape)?));
            }
            Op::SumLast => {
                let n = *var(0).shape().last().expect("rank");
                out.push((inputs[0], g.expand_last(n)));
            }
            Op::ExpandLast(_) => out.push((inputs[0], g.sum_last()?)),
            Op::Expand => out.push((inputs[0], g.sum_to(&var(0).shape())?)),
            Op::SumTo => out.push((inputs[0], g.expand(&var(0).shape())?)),
            Op::Slice { axis, start } => {
                let full = var(0).shape();
                let len = this.shape()[*axis];
                let mut parts = Vec::new();
                if *start > 0 {
                    let mut s = full.clone();
                    s[*axis] = *start;
                    parts.push(self.constant(Tensor::zeros(&s)));
                }
                parts.push(g);
                let tail = full[*axis] - start - len;
                if tail > 0 {
                    let mut s = full.clone();
                    s[*axis] = tail;
                    parts.push(self.constant(Tensor::zeros(&s)));
                }
                let gx = if parts.len() == 1 { g } else { self.concat(&parts, *axis)? };
                out.push((inputs[0], gx));
            }
            Op::Concat { axis } => {
                let mut offset = 0;
                for (i, &input) in inputs.iter().enumerate() {
                    let len = var(i).shape()[*axis];
                    if needs(i) {
                        out.push((input, g.slice(*axis, offset, len)?));
                    }
                    offset += len;
                }
            }
            other => return Err(Error::UnsupportedSecondOrder { op: other.name() }),
        }
        Ok(out)
    }
}
