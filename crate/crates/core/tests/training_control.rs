mod common;

use alphaforge::grad::{clip_grad_norm, global_norm, Adam, AdamConfig, EarlyStopping, PlateauScheduler};
use alphaforge::models::{run_epochs, TrainConfig};
use approx::assert_abs_diff_eq;
use ndarray::{ArrayD, IxDyn};
use proptest::prelude::*;

fn scripted(vals: Vec<f64>, cfg: &TrainConfig) -> alphaforge::models::TrainOutcome<usize> {
    let epoch = std::cell::Cell::new(0);
    run_epochs(
        cfg,
        |e, _| {
            epoch.set(e);
            Ok((1.0, vals[e.min(vals.len() - 1)]))
        },
        || epoch.get(),
    )
    .unwrap()
}

#[test]
fn stops_fifteen_epochs_after_the_best() {
    let cfg = TrainConfig { max_epochs: 200, ..Default::default() };
    for best_at in [0usize, 1, 7, 40] {
        let mut vals: Vec<f64> = (0..=best_at).map(|e| 1.0 - 0.01 * e as f64).collect();
        vals.extend((0..100).map(|e| 2.0 + e as f64));
        let out = scripted(vals, &cfg);
        assert_eq!(out.best_epoch, best_at);
        assert_eq!(out.best, best_at);
        assert_eq!(out.history.len(), best_at + 15 + 1);
        assert_eq!(out.history.last().unwrap().epoch, best_at + 15);
    }
}

#[test]
fn max_epochs_caps_a_steadily_improving_run() {
    let cfg = TrainConfig { max_epochs: 30, ..Default::default() };
    let out = scripted((0..30).map(|e| 1.0 / (1.0 + e as f64)).collect(), &cfg);
    assert_eq!(out.history.len(), 30);
    assert_eq!(out.best_epoch, 29);
}

#[test]
fn plateau_cuts_the_rate_after_five_flat_epochs() {
    let mut s = PlateauScheduler::new(5e-4, 0.7, 5, 0.0);
    assert_eq!(s.step(1.0), 5e-4);
    for _ in 0..4 {
        assert_eq!(s.step(1.0), 5e-4);
    }
    assert_abs_diff_eq!(s.step(1.0), 3.5e-4, epsilon = 1e-18);

    // the same schedule seen through the epoch loop
    let cfg = TrainConfig { max_epochs: 8, ..Default::default() };
    let out = scripted(vec![1.0; 8], &cfg);
    let lrs: Vec<f64> = out.history.iter().map(|h| h.lr).collect();
    assert!(lrs[..6].iter().all(|&l| l == 5e-4), "{lrs:?}");
    assert_abs_diff_eq!(lrs[6], 3.5e-4, epsilon = 1e-18);
}

#[test]
fn improvement_smaller_than_delta_counts_as_flat() {
    let mut s = PlateauScheduler::new(1.0, 0.5, 2, 0.1);
    s.step(1.0);
    s.step(0.95);
    assert_eq!(s.step(0.92), 0.5);
}

#[test]
fn zero_gradient_on_zero_weight_is_a_no_op() {
    let mut p = vec![ArrayD::zeros(IxDyn(&[3]))];
    let g = vec![ArrayD::zeros(IxDyn(&[3]))];
    let mut adam = Adam::new(AdamConfig::default(), &p);
    adam.step(&mut p, &g, &["w".into()]).unwrap();
    assert!(p[0].iter().all(|&v| v == 0.0));
}

#[test]
fn non_finite_gradient_names_the_parameter() {
    let mut p = vec![ArrayD::zeros(IxDyn(&[2])), ArrayD::zeros(IxDyn(&[1]))];
    let g = vec![ArrayD::zeros(IxDyn(&[2])), ArrayD::from_elem(IxDyn(&[1]), f64::NAN)];
    let mut adam = Adam::new(AdamConfig::default(), &p);
    let err = adam.step(&mut p, &g, &["w1".into(), "b_reg".into()]).unwrap_err();
    assert!(err.to_string().contains("b_reg"), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn decay_is_added_to_the_gradient_by_default() {
    // first step with g = 0: Adam moves by lr · sign(λw)
    let mut p = vec![ArrayD::from_elem(IxDyn(&[1]), 2.0)];
    let g = vec![ArrayD::zeros(IxDyn(&[1]))];
    let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &p);
    adam.step(&mut p, &g, &["w".into()]).unwrap();
    assert_abs_diff_eq!(p[0][[0]], 1.9, epsilon = 1e-6);
}

#[test]
fn real_training_respects_patience() {
    let run = common::small_trained(4);
    let epochs: usize = run.checkpoint.meta_value("epochs_run").unwrap().parse().unwrap();
    let best: usize = run.checkpoint.meta_value("best_epoch").unwrap().parse().unwrap();
    assert!(epochs == run.cfg.train.max_epochs || epochs == best + 16);
}

proptest! {
    #[test]
    fn clipping_never_grows_the_norm(v in prop::collection::vec(-50.0f64..50.0, 1..30), max in 0.01f64..10.0) {
        let mut g = vec![ArrayD::from_shape_vec(IxDyn(&[v.len()]), v).unwrap()];
        let before = global_norm(&g);
        clip_grad_norm(&mut g, max);
        let after = global_norm(&g);
        prop_assert!(after <= before + 1e-12);
        prop_assert!(after <= max + 1e-12);
    }

    #[test]
    fn learning_rate_never_rises(metrics in prop::collection::vec(0.0f64..2.0, 1..80)) {
        let mut s = PlateauScheduler::new(5e-4, 0.7, 5, 1e-4);
        let mut prev = s.lr;
        for m in metrics {
            let lr = s.step(m);
            prop_assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn early_stop_tracks_the_first_minimum(metrics in prop::collection::vec(0.0f64..2.0, 1..60)) {
        let mut e = EarlyStopping::new(15);
        for (i, &m) in metrics.iter().enumerate() {
            e.observe(i, m);
        }
        let (b, v) = e.best().unwrap();
        let min = metrics.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(v, min);
        prop_assert_eq!(b, metrics.iter().position(|&m| m == min).unwrap());
    }
}
