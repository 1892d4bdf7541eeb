//! Parameter storage, layer helpers and optimizers shared by the forecaster,
//! the discriminator and the GAN.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Uniform};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Named tensors in a fixed order. Layers refer to entries by index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Pairs of (name, tensor) suitable for a checkpoint.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }

    /// Replace all tensors, checking names and shapes against the current set.
    pub fn load_named(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::Contract(format!(
                "expected {} tensors, found {}",
                self.len(),
                named.len()
            )));
        }
        for (i, (name, t)) in named.iter().enumerate() {
            if *name != self.names[i] || t.shape() != self.tensors[i].shape() {
                return Err(Error::Contract(format!(
                    "tensor {} mismatch: expected {} {:?}, found {} {:?}",
                    i,
                    self.names[i],
                    self.tensors[i].shape(),
                    name,
                    t.shape()
                )));
            }
        }
        self.tensors = named.iter().map(|(_, t)| t.clone()).collect();
        Ok(())
    }

    /// Bind every tensor as a trainable leaf.
    pub fn bind<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    /// Bind every tensor as a constant (frozen model).
    pub fn bind_frozen<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        self.tensors.iter().map(|t| g.constant(t.clone())).collect()
    }

    /// Gradients of bound parameters after `backward`.
    pub fn grads(vars: &[Var<'_>]) -> Result<Vec<Tensor>> {
        vars.iter()
            .map(|v| v.grad().ok_or_else(|| Error::Contract("parameter has no gradient".into())))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init.
pub fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches")
}

/// Fully connected layer stored as `w: [in, out]`, `b: [out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = ps.push(format!("{name}.w"), fan_in_uniform(&[d_in, d_out], d_in, rng));
        let b = ps.push(format!("{name}.b"), fan_in_uniform(&[d_out], d_in, rng));
        Self { w, b, d_in, d_out }
    }

    /// `x: [n, d_in]` to `[n, d_out]`.
    pub fn forward<'g>(&self, vars: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        x.affine(vars[self.w], vars[self.b])
    }
}

/// 1-D convolution `w: [out, in, k]`, `b: [out]`, always causally padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CausalConv {
    pub w: usize,
    pub b: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl CausalConv {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan = c_in * kernel;
        let w = ps.push(format!("{name}.w"), fan_in_uniform(&[c_out, c_in, kernel], fan, rng));
        let b = ps.push(format!("{name}.b"), fan_in_uniform(&[c_out], fan, rng));
        Self { w, b, kernel, dilation }
    }

    /// `x: [B, c_in, L]` to `[B, c_out, L]`.
    pub fn forward<'g>(&self, vars: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        x.conv1d(vars[self.w], Some(vars[self.b]), 1, self.dilation, self.dilation * (self.kernel - 1))
    }
}

/// Inverted dropout: zero with probability `p`, scale survivors by 1/(1-p).
pub fn dropout<'g>(x: Var<'g>, p: f64, rng: &mut ChaCha8Rng) -> Result<Var<'g>> {
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = Bernoulli::new(1.0 - p).map_err(|e| Error::Contract(format!("dropout rate {p}: {e}")))?;
    let scale = 1.0 / (1.0 - p);
    let shape = x.shape();
    let mask: Vec<f64> = (0..x.numel()).map(|_| if keep.sample(rng) { scale } else { 0.0 }).collect();
    x.mul(x.graph().constant(Tensor::new(shape, mask)?))
}

/// Parameter update rule.
pub trait Optimizer {
    fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()>;
}

fn check_grads(params: &ParamSet, grads: &[Tensor]) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Contract(format!("{} grads for {} params", grads.len(), params.len())));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.tensor(i).shape() {
            return Err(Error::dim(
                "optimizer",
                format!("grad {:?} vs param {:?} for {}", g.shape(), params.tensor(i).shape(), params.names()[i]),
            ));
        }
    }
    Ok(())
}

/// Plain gradient descent with decoupled weight decay:
/// `p <- p - lr*g - lr*wd*p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub weight_decay: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        check_grads(params, grads)?;
        let decay = 1.0 - self.lr * self.weight_decay;
        for (i, g) in grads.iter().enumerate() {
            for (p, g) in params.tensor_mut(i).data_mut().iter_mut().zip(g.data()) {
                *p = *p * decay - self.lr * g;
            }
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay (AdamW when `weight_decay > 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, weight_decay, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Step count and first/second moment buffers.
    pub fn state(&self) -> (u64, &[Vec<f64>], &[Vec<f64>]) {
        (self.t, &self.m, &self.v)
    }

    pub fn set_state(&mut self, t: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        check_grads(params, grads)?;
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in params.tensor_mut(i).data_mut().iter_mut().enumerate() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p = *p * decay - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Seeded shuffle of `0..n` (Fisher-Yates).
pub fn permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn sgd_applies_decoupled_decay() {
        let mut ps = ParamSet::new();
        ps.push("p", Tensor::vector(vec![1.0, -2.0]));
        let mut opt = Sgd { lr: 0.1, weight_decay: 0.5 };
        opt.step(&mut ps, &[Tensor::vector(vec![1.0, 1.0])]).unwrap();
        // p*(1-0.05) - 0.1*g
        assert_eq!(ps.tensor(0).data(), &[0.95 - 0.1, -1.9 - 0.1]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut ps = ParamSet::new();
        ps.push("p", Tensor::vector(vec![0.0, 0.0]));
        let mut opt = Adam::new(0.01, 0.9, 0.999, 0.0);
        opt.step(&mut ps, &[Tensor::vector(vec![3.0, -0.5])]).unwrap();
        let d = ps.tensor(0).data();
        assert!((d[0] + 0.01).abs() < 1e-9 && (d[1] - 0.01).abs() < 1e-9, "{d:?}");
    }

    #[test]
    fn load_named_rejects_shape_change() {
        let mut ps = ParamSet::new();
        ps.push("a", Tensor::zeros(&[2]));
        let bad = vec![("a".to_string(), Tensor::zeros(&[3]))];
        assert!(ps.load_named(&bad).is_err());
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = permutation(50, &mut rng);
        p.sort();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn dropout_keeps_expectation_scale() {
        let g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = g.constant(Tensor::filled(&[10_000], 1.0));
        let y = dropout(x, 0.2, &mut rng).unwrap().data();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
        assert!(y.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
    }
}
