use std::rc::Rc;

use super::*;
use crate::error::Error;

fn vec_param<'g>(g: &'g Graph, v: &[f64]) -> Var<'g> {
    g.param(Tensor::vector(v.to_vec()))
}

/// Direct convolution oracle for a single channel with causal padding.
fn direct_causal_conv(x: &[f64], k: &[f64], dilation: usize) -> Vec<f64> {
    let pad = dilation * (k.len() - 1);
    (0..x.len())
        .map(|t| {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let pos = t + j * dilation;
                if pos >= pad {
                    acc += kv * x[pos - pad];
                }
            }
            acc
        })
        .collect()
}

#[test]
fn add_elementwise() {
    let g = Graph::new();
    let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
    let b = g.constant(Tensor::vector(vec![3.0, 4.0]));
    assert_eq!(a.add(b).unwrap().data(), vec![4.0, 6.0]);
}

#[test]
fn maxpool_pairs() {
    let g = Graph::new();
    let x = g.constant(Tensor::vector(vec![1.0, 3.0, 2.0, 5.0]));
    assert_eq!(x.maxpool1d(2, 2).unwrap().data(), vec![3.0, 5.0]);
}

#[test]
fn conv1d_impulse_matches_direct_sum() {
    let g = Graph::new();
    let x = [1.0, 0.0, 0.0, 0.0];
    let k = [1.0, 2.0];
    let xv = g.constant(Tensor::new(vec![1, 1, 4], x.to_vec()).unwrap());
    let kv = g.constant(Tensor::new(vec![1, 1, 2], k.to_vec()).unwrap());
    let y = xv.conv1d(kv, None, 1, 2, 2).unwrap().data();
    let expect = direct_causal_conv(&x, &k, 2);
    assert_eq!(y, expect);
    // the impulse first reaches the output through the last tap
    assert_eq!(y[0], 2.0);
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let g = Graph::new();
    let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
    let b = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let err = a.add(b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Dimension { op: "add", .. }));
    assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
}

#[test]
fn log_of_non_positive_is_domain_error() {
    let g = Graph::new();
    let a = g.constant(Tensor::vector(vec![1.0, 0.0]));
    assert!(matches!(a.ln(), Err(Error::Domain { op: "log", .. })));
    let b = g.constant(Tensor::vector(vec![1.0, 0.0]));
    assert!(matches!(a.div(b), Err(Error::Domain { op: "div", .. })));
}

#[test]
fn sum_of_squares_gradient() {
    let g = Graph::new();
    let x = vec_param(&g, &[1.0, 2.0, 3.0]);
    let root = x.mul(x).unwrap().sum();
    g.backward(root).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn exp_gradient_closed_form() {
    let g = Graph::new();
    let m = g.param(Tensor::scalar(0.5));
    let root = m.scale(-2.0).exp();
    g.backward(root).unwrap();
    let d = m.grad().unwrap().item();
    assert!((d - (-2.0 * (-1.0f64).exp())).abs() < 1e-15);
    assert!((d + 0.7357589).abs() < 1e-7);
}

#[test]
fn backward_twice_is_an_error() {
    let g = Graph::new();
    let x = vec_param(&g, &[1.0]);
    let root = x.sum();
    g.backward(root).unwrap();
    assert!(matches!(g.backward(root), Err(Error::Unsupported(_))));
}

#[test]
fn non_scalar_root_is_contract_error() {
    let g = Graph::new();
    let x = vec_param(&g, &[1.0, 2.0]);
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn constants_never_get_grads() {
    let g = Graph::new();
    let c = g.constant(Tensor::vector(vec![1.0, 2.0]));
    let x = vec_param(&g, &[3.0, 4.0]);
    g.backward(c.mul(x).unwrap().sum()).unwrap();
    assert!(c.grad().is_none());
    assert_eq!(x.grad().unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn maxpool_routes_to_first_argmax() {
    let g = Graph::new();
    let x = vec_param(&g, &[2.0, 2.0, 1.0, 7.0]);
    let y = x.maxpool1d(2, 2).unwrap();
    let w = g.constant(Tensor::vector(vec![3.0, 5.0]));
    g.backward(y.mul(w).unwrap().sum()).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[3.0, 0.0, 0.0, 5.0]);
}

#[test]
fn sign_and_clamp_contribute_zero_gradient() {
    let g = Graph::new();
    let x = vec_param(&g, &[-2.0, 0.5, 3.0]);
    // sign path and an out-of-range clamp path
    let s = x.sign().scale(10.0);
    let c = x.clamp(-1.0, 1.0);
    let root = s.add(c).unwrap().sum();
    g.backward(root).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[0.0, 1.0, 0.0]);

    let g2 = Graph::new();
    let x2 = vec_param(&g2, &[1.0, -1.0]);
    // boundary counts as inside
    g2.backward(x2.clamp(-1.0, 1.0).sum()).unwrap();
    assert_eq!(x2.grad().unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn gather_and_scatter_are_adjoint() {
    let g = Graph::new();
    let x = vec_param(&g, &[1.0, 2.0, 3.0]);
    let idx: Rc<[usize]> = vec![0, 2, 2, 1].into();
    let y = x.gather(idx.clone(), &[4]).unwrap();
    assert_eq!(y.data(), vec![1.0, 3.0, 3.0, 2.0]);
    let w = g.constant(Tensor::vector(vec![1.0, 10.0, 100.0, 1000.0]));
    g.backward(y.mul(w).unwrap().sum()).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[1.0, 1000.0, 110.0]);

    let g2 = Graph::new();
    let v = vec_param(&g2, &[1.0, 2.0, 3.0, 4.0]);
    let s = v.scatter_add(idx, &[3]).unwrap();
    assert_eq!(s.data(), vec![1.0, 4.0, 5.0]);
}

#[test]
fn ema_matches_recurrence() {
    let g = Graph::new();
    let x = g.constant(Tensor::vector(vec![1.0, 4.0, 2.0]));
    let e = x.ema(1.0 / 3.0).unwrap().data();
    let e1 = (1.0 / 3.0) * 4.0 + (2.0 / 3.0) * 1.0;
    let e2 = (1.0 / 3.0) * 2.0 + (2.0 / 3.0) * e1;
    assert_eq!(e[0], 1.0);
    assert!((e[1] - e1).abs() < 1e-15 && (e[2] - e2).abs() < 1e-15, "{e:?}");
}

#[test]
fn slice_concat_roundtrip_values() {
    let g = Graph::new();
    let x = g.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let a = x.slice(1, 0, 1).unwrap();
    let b = x.slice(1, 1, 2).unwrap();
    assert_eq!(b.data(), vec![2.0, 3.0, 5.0, 6.0]);
    let y = g.concat(&[a, b], 1).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn broadcast_bias_gradient_sums_rows() {
    let g = Graph::new();
    let x = g.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = vec_param(&g, &[0.5, -0.5]);
    g.backward(x.add(b).unwrap().sum()).unwrap();
    assert_eq!(b.grad().unwrap().data(), &[2.0, 2.0]);
}

#[test]
fn linear_critic_penalty_closed_form() {
    // D(x) = w * x with scalar w: grad_x D = w, penalty (w-1)^2, d/dw = 2(w-1)
    let g = Graph::new();
    let w = g.param(Tensor::scalar(3.0));
    let x = g.param(Tensor::scalar(0.7));
    let d = x.mul(w).unwrap();
    let penalty = g
        .grad_of_grad(d, x, |gx| Ok(gx.shift(-1.0).powf(2.0)))
        .unwrap();
    assert_eq!(penalty.item(), 4.0);
    assert_eq!(w.grad().unwrap().item(), 4.0);
}

#[test]
fn penalty_vanishes_at_unit_gradient_norm() {
    let g = Graph::new();
    let w = g.param(Tensor::scalar(1.0));
    let x = g.param(Tensor::scalar(-0.3));
    let d = x.mul(w).unwrap();
    let penalty = g.grad_of_grad(d, x, |gx| Ok(gx.shift(-1.0).powf(2.0))).unwrap();
    assert_eq!(penalty.item(), 0.0);
    assert_eq!(w.grad().unwrap().item(), 0.0);
}

#[test]
fn tanh_critic_penalty_matches_finite_differences() {
    let penalty_at = |wv: f64| -> (f64, f64) {
        let g = Graph::new();
        let w = g.param(Tensor::scalar(wv));
        let x = g.param(Tensor::scalar(0.5));
        let d = x.mul(w).unwrap().tanh();
        let p = g.grad_of_grad(d, x, |gx| Ok(gx.shift(-1.0).powf(2.0))).unwrap();
        (p.item(), w.grad().unwrap().item())
    };
    let (_, analytic) = penalty_at(1.0);
    let h = 1e-5;
    let fd = (penalty_at(1.0 + h).0 - penalty_at(1.0 - h).0) / (2.0 * h);
    assert!(((analytic - fd) / fd).abs() < 1e-4, "{analytic} vs {fd}");
}

#[test]
fn second_order_rejects_unsupported_ops() {
    let g = Graph::new();
    let x = vec_param(&g, &[1.0, 2.0]);
    let y = x.ln().unwrap().sum();
    let err = g.grad(y, &[x]).unwrap_err();
    assert!(matches!(err, Error::UnsupportedSecondOrder { op: "log" }));
}

#[test]
fn sqrt_at_zero_has_zero_gradient() {
    let g = Graph::new();
    let x = vec_param(&g, &[0.0, 4.0]);
    g.backward(x.sqrt().unwrap().sum()).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[0.0, 0.25]);
}
