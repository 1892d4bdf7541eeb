#![allow(dead_code)]

use std::rc::Rc;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slopestrike::agan::{gradient_penalty, Critic, GanConfig};
use slopestrike::autodiff::{Graph, Tensor, Var};
use slopestrike::dataio::PriceSeries;
use slopestrike::experiments::{attack_universe, desk_universe, toy_config, train_toy, DeskSpec};
use slopestrike::forecaster::Nhits;
use slopestrike::nn::ParamSet;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor so that tiny gradients are judged absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Leaves of a random graph: `x [4,6]`, `w [6,6]`, `b [6]`, `k [4,4,2]`.
pub fn random_leaves(seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    vec![
        random_tensor(&[4, 6], 0.5, 1.5, &mut rng),
        random_tensor(&[6, 6], -0.6, 0.6, &mut rng),
        random_tensor(&[6], -0.5, 0.5, &mut rng),
        random_tensor(&[4, 4, 2], -0.5, 0.5, &mut rng),
    ]
}

/// A random chain of 3-7 operations over the leaves, reduced to a scalar by a
/// random weighting. The structure depends only on `seed`, so rebuilding with
/// perturbed leaf values evaluates the same function.
pub fn random_graph<'g>(g: &'g Graph, leaves: &[Var<'g>], seed: u64) -> Var<'g> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, w, b, k) = (leaves[0], leaves[1], leaves[2], leaves[3]);
    let mut h = x;
    let n_ops = rng.random_range(3..=7);
    for _ in 0..n_ops {
        let cols = h.shape()[1];
        h = match rng.random_range(0..18) {
            0 => h.tanh(),
            1 => h.sigmoid(),
            2 => h.scale(0.3).exp(),
            3 => h.sigmoid().shift(0.5).ln().unwrap(),
            4 => h.mul(h).unwrap().shift(1.0).sqrt().unwrap(),
            5 => h.tanh().powf(3.0),
            6 => h.leaky_relu(0.1),
            7 => h.mul(h.tanh()).unwrap(),
            8 => h.div(h.sigmoid().shift(1.0)).unwrap(),
            9 => h.sub(h.scale(0.5).exp()).unwrap(),
            10 if cols == 6 => h.affine(w, b).unwrap(),
            10 | 11 if cols == 6 => h.matmul(w).unwrap(),
            12 => {
                let dil = rng.random_range(1..=2);
                h.reshape(&[1, 4, cols]).unwrap().conv1d(k, None, 1, dil, dil).unwrap().reshape(&[4, cols]).unwrap()
            }
            13 if cols >= 2 => h.maxpool1d(2, 2).unwrap(),
            14 if cols > 2 => h.slice(1, 1, cols - 1).unwrap(),
            15 if cols <= 12 => g.concat(&[h, h.tanh()], 1).unwrap(),
            16 => h.ema(rng.random_range(0.1..0.9)).unwrap(),
            17 => {
                let n = 4 * cols;
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                h.gather(Rc::from(idx), &[4, cols]).unwrap()
            }
            _ => h.sum_last().unwrap().expand_last(cols).scale(0.2).tanh(),
        };
    }
    let shape = h.shape();
    let weights = random_tensor(&shape, -1.0, 1.0, &mut rng);
    h.mul(g.constant(weights)).unwrap().sum()
}

fn eval_random(leaves: &[Tensor], seed: u64) -> f64 {
    let g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.constant(t.clone())).collect();
    random_graph(&g, &vars, seed).item()
}

/// Analytic gradients of the random graph for `seed`, one vector per leaf.
pub fn random_graph_grads(leaves: &[Tensor], seed: u64) -> Vec<Vec<f64>> {
    let g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let root = random_graph(&g, &vars, seed);
    g.backward(root).unwrap();
    vars.iter()
        .map(|v| v.grad().map(Tensor::into_data).unwrap_or_else(|| vec![0.0; v.numel()]))
        .collect()
}

/// Max relative error between analytic and central-difference gradients.
pub fn random_graph_fd_error(seed: u64) -> f64 {
    let leaves = random_leaves(seed);
    let analytic = random_graph_grads(&leaves, seed);
    let mut worst: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        for j in 0..leaf.numel() {
            let mut plus = leaves.clone();
            plus[li].data_mut()[j] += FD_STEP;
            let mut minus = leaves.clone();
            minus[li].data_mut()[j] -= FD_STEP;
            let fd = (eval_random(&plus, seed) - eval_random(&minus, seed)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[li][j], fd));
        }
    }
    worst
}

fn small_critic(seed: u64) -> (Critic, ParamSet, Tensor) {
    let cfg = GanConfig { interval_length: 5, critic_hidden: vec![8, 4], ..GanConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let critic = Critic::new(&mut ps, &cfg, &mut rng);
    let x = random_tensor(&[3, 10], -1.0, 1.0, &mut rng);
    (critic, ps, x)
}

fn penalty_value(critic: &Critic, ps: &ParamSet, x: &Tensor) -> f64 {
    let g = Graph::new();
    let vars = ps.bind_frozen(&g);
    let xv = g.param(x.clone());
    gradient_penalty(|v| critic.forward(&vars, v), xv).unwrap().item()
}

/// Max relative error of the gradient-penalty gradient with respect to the
/// MLP critic parameters, against central differences.
pub fn gp_fd_error(seed: u64) -> f64 {
    let (critic, ps, x) = small_critic(seed);
    let g = Graph::new();
    let vars = ps.bind(&g);
    let xv = g.param(x.clone());
    let gp = gradient_penalty(|v| critic.forward(&vars, v), xv).unwrap();
    g.backward(gp).unwrap();
    let analytic = ParamSet::grads(&vars).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..ps.len() {
        for j in 0..ps.tensor(i).numel() {
            let mut plus = ps.clone();
            plus.tensor_mut(i).data_mut()[j] += FD_STEP;
            let mut minus = ps.clone();
            minus.tensor_mut(i).data_mut()[j] -= FD_STEP;
            let fd = (penalty_value(&critic, &plus, &x) - penalty_value(&critic, &minus, &x)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i].data()[j], fd));
        }
    }
    worst
}

pub fn desk() -> &'static Vec<PriceSeries> {
    static DESK: OnceLock<Vec<PriceSeries>> = OnceLock::new();
    DESK.get_or_init(|| desk_universe(&DeskSpec::default()).unwrap())
}

/// The toy forecaster trained once per test binary.
pub fn toy_model() -> &'static Nhits {
    static MODEL: OnceLock<Nhits> = OnceLock::new();
    MODEL.get_or_init(|| train_toy(desk(), toy_config(0)).unwrap())
}

pub fn attack_series(n: usize) -> Vec<PriceSeries> {
    attack_universe(n).unwrap()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
