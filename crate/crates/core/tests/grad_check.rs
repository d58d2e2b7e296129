mod common;

use alphaforge::grad::{clip_grad_norm, global_norm, sigmoid, Graph, BCE_EPS};
use alphaforge::rng;
use approx::assert_abs_diff_eq;
use common::{fd_check, grad_cases, random_tensor};
use ndarray::{ArrayD, IxDyn};

#[test]
fn every_operator_matches_central_differences() {
    let (mut probed, mut kinks) = (0, 0);
    for seed in 0..10 {
        let mut r = rng::seeded(1000 + seed);
        for (name, inputs, build) in grad_cases(seed) {
            let rep = fd_check(&inputs, build.as_ref(), 16, &mut r);
            assert!(rep.worst < 1e-4, "{name} seed {seed}: relative error {:e}", rep.worst);
            probed += rep.probed;
            kinks += rep.kinks;
        }
    }
    assert!(kinks * 100 < probed, "{kinks} of {probed} probes straddled a kink");
}

#[test]
fn closed_form_gradients() {
    let mut g = Graph::new();
    let p = g.leaf(ArrayD::from_shape_vec(IxDyn(&[2, 1]), vec![0.5, -1.0]).unwrap());
    let l = g.mse(p, &[0.0, 1.0]).unwrap();
    // mean of (0.25, 4)
    assert_abs_diff_eq!(g.scalar(l), 2.125, epsilon = 1e-15);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(p).unwrap().as_slice().unwrap(), &[0.5, -2.0]);

    let mut g = Graph::new();
    let z = g.leaf(ArrayD::zeros(IxDyn(&[1])));
    let s = g.sigmoid(z);
    let t = g.sum(s);
    let grads = g.backward(t).unwrap();
    assert_eq!(grads.get(z).unwrap()[[0]], 0.25);
    assert_eq!(sigmoid(0.0), 0.5);
}

#[test]
fn bce_is_clamped_at_the_edges() {
    let mut g = Graph::new();
    let p = g.leaf(ArrayD::from_shape_vec(IxDyn(&[2, 1]), vec![0.0, 1.0]).unwrap());
    let l = g.bce(p, &[1.0, 0.0]).unwrap();
    assert_abs_diff_eq!(g.scalar(l), -(BCE_EPS.ln()), epsilon = 1e-9);
    let grads = g.backward(l).unwrap();
    assert!(grads.get(p).unwrap().iter().all(|v| v.is_finite()));
}

#[test]
fn clipping_caps_the_global_norm() {
    let mut grads = vec![
        ArrayD::from_shape_vec(IxDyn(&[2]), vec![3.0, 0.0]).unwrap(),
        ArrayD::from_shape_vec(IxDyn(&[1]), vec![4.0]).unwrap(),
    ];
    let before = clip_grad_norm(&mut grads, 0.5);
    assert_eq!(before, 5.0);
    assert_abs_diff_eq!(global_norm(&grads), 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(grads[0][[0]], 0.3, epsilon = 1e-15);
    assert_abs_diff_eq!(grads[1][[0]], 0.4, epsilon = 1e-15);

    let mut small = vec![ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.1, 0.2]).unwrap()];
    let copy = small.clone();
    clip_grad_norm(&mut small, 0.5);
    assert_eq!(small, copy);
}

/// Chain of up to four operators on a `[3, 4]` input, picked by `ops`.
fn composed(ops: &[u8], other: ArrayD<f64>, w: ArrayD<f64>) -> impl Fn(&mut Graph, &[alphaforge::grad::Var]) -> alphaforge::grad::Var {
    let ops = ops.to_vec();
    move |g, v| {
        let mut cur = v[0];
        for &op in &ops {
            cur = match op % 5 {
                0 => g.relu(cur),
                1 => g.sigmoid(cur),
                2 => g.scale(cur, 1.3),
                3 => {
                    let o = g.leaf(other.clone());
                    g.mul(cur, o).unwrap()
                }
                _ => g.add(cur, v[0]).unwrap(),
            };
        }
        let wv = g.leaf(w.clone());
        let m = g.mul(cur, wv).unwrap();
        g.sum(m)
    }
}

#[test]
fn random_compositions_match_central_differences() {
    let mut r = rng::seeded(404);
    let (mut probed, mut kinks) = (0, 0);
    for case in 0..300 {
        let depth = 1 + case % 4;
        let ops: Vec<u8> = (0..depth).map(|_| (rng::uniform(&mut r) * 5.0) as u8).collect();
        let x = random_tensor(&mut r, &[3, 4], 1.0);
        let other = random_tensor(&mut r, &[3, 4], 1.0);
        let w = random_tensor(&mut r, &[3, 4], 1.0);
        let build = composed(&ops, other, w);
        let rep = fd_check(&[x], &build, 12, &mut r);
        assert!(rep.worst < 1e-4, "ops {ops:?}: relative error {:e}", rep.worst);
        probed += rep.probed;
        kinks += rep.kinks;
    }
    assert!(kinks * 100 < probed, "{kinks} of {probed}");
}
