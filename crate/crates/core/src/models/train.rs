use std::cell::RefCell;

use ndarray::{ArrayView2, Axis};

use super::net::{cnn_forward, cnn_graph, dual_task_graph, mlp_forward};
use super::{svr, Checkpoint, ModelKind, ParamSet, TrainConfig};
use crate::dataset::TrainingDataset;
use crate::grad::{clip_grad_norm, Adam, AdamConfig, EarlyStopping, Graph, PlateauScheduler, Var};
use crate::{rng, Error, Result};

/// `L_reg + weight · L_cls`.
pub fn combined_loss(reg: f64, cls: f64, weight: f64) -> f64 {
    reg + weight * cls
}

pub fn rmse(pred: &[f64], y: &[f64]) -> f64 {
    (pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<S> {
    /// Snapshot taken at the best validation epoch.
    pub best: S,
    pub best_epoch: usize,
    pub best_val: f64,
    pub history: Vec<EpochRecord>,
}

/// Epoch loop shared by the gradient-trained models.
///
/// `epoch_fn(epoch, lr)` trains one epoch and returns `(train_loss,
/// validation metric)`; `snapshot` captures the model whenever the metric
/// improves. Stops `early_stop_patience` epochs after the best one.
pub fn run_epochs<S>(
    cfg: &TrainConfig,
    mut epoch_fn: impl FnMut(usize, f64) -> Result<(f64, f64)>,
    mut snapshot: impl FnMut() -> S,
) -> Result<TrainOutcome<S>> {
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.scheduler_factor, cfg.scheduler_patience, cfg.scheduler_delta);
    let mut stop = EarlyStopping::new(cfg.early_stop_patience);
    let mut best = None;
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let lr = sched.lr;
        let (train_loss, val) = epoch_fn(epoch, lr)?;
        history.push(EpochRecord { epoch, train_loss, val_rmse: val, lr });
        log::debug!("epoch {epoch}: train loss {train_loss:.6}, val rmse {val:.6}, lr {lr:.3e}");
        if stop.observe(epoch, val) {
            best = Some(snapshot());
        }
        sched.step(val);
        if stop.should_stop(epoch) {
            break;
        }
    }
    let (best_epoch, best_val) = stop.best().ok_or_else(|| Error::Numerical("validation metric never finite".into()))?;
    Ok(TrainOutcome { best: best.expect("set with best epoch"), best_epoch, best_val, history })
}

fn check_splits(ds: &TrainingDataset) -> Result<()> {
    if ds.n_train == 0 || ds.n_validation() == 0 {
        return Err(Error::Data("training needs non-empty train and validation splits".into()));
    }
    Ok(())
}

fn finish(mut ckpt: Checkpoint, params: ParamSet, outcome: &TrainOutcome<ParamSet>) -> Checkpoint {
    ckpt.params = params;
    ckpt.meta.push(("best_epoch".into(), outcome.best_epoch.to_string()));
    ckpt.meta.push(("best_val_rmse".into(), outcome.best_val.to_string()));
    ckpt.meta.push(("epochs_run".into(), outcome.history.len().to_string()));
    ckpt
}

/// Gradient training shared by the MLP and CNN. `loss` records one batch
/// and returns the scalar loss node; `val_pred` predicts the validation
/// regression output.
fn fit(
    ds: &TrainingDataset,
    cfg: &TrainConfig,
    kind: ModelKind,
    mut loss: impl FnMut(&mut Graph, &[Var], Var, &[f64], &[f64]) -> Result<Var>,
    val_pred: impl Fn(&ParamSet, ArrayView2<f64>) -> Result<Vec<f64>>,
) -> Result<(Checkpoint, Vec<super::EpochRecord>)> {
    check_splits(ds)?;
    let ckpt = Checkpoint::initial(kind, &ds.factor_names, cfg);
    let params = RefCell::new(ckpt.params.clone());
    let adam_cfg = AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, decoupled: cfg.decoupled_decay, ..Default::default() };
    let mut adam = Adam::new(adam_cfg, &params.borrow().values);
    let train = ds.train();
    let val = ds.validation();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = rng::derive(cfg.seed, 2);
    let batch = cfg.batch_size.max(1);

    let outcome = run_epochs(
        cfg,
        |epoch, lr| {
            adam.lr = lr;
            rng::shuffle(&mut shuffle_rng, &mut order);
            let mut p = params.borrow_mut();
            let mut total = 0.0;
            let mut batches = 0usize;
            for (bi, idx) in order.chunks(batch).enumerate() {
                let xb = train.x.select(Axis(0), idx);
                let yb: Vec<f64> = idx.iter().map(|&i| train.y[i]).collect();
                let lb: Vec<f64> = idx.iter().map(|&i| train.label_up[i]).collect();
                let mut g = Graph::new();
                let vars: Vec<Var> = p.values.iter().map(|v| g.leaf(v.clone())).collect();
                let xv = g.leaf(xb.into_dyn());
                let l = loss(&mut g, &vars, xv, &yb, &lb)?;
                let lv = g.scalar(l);
                if !lv.is_finite() {
                    return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}, batch {bi}")));
                }
                total += lv;
                batches += 1;
                let mut grads = g.backward(l)?;
                let mut gs: Vec<_> = vars.iter().zip(&p.values).map(|(v, like)| grads.take_or_zeros(*v, like)).collect();
                clip_grad_norm(&mut gs, cfg.clip_norm);
                let names = p.names.clone();
                adam.step(&mut p.values, &gs, &names)?;
            }
            let pred = val_pred(&p, val.x)?;
            Ok((total / batches.max(1) as f64, rmse(&pred, val.y)))
        },
        || params.borrow().clone(),
    )?;
    let best = outcome.best.clone();
    let history = outcome.history.clone();
    Ok((finish(ckpt, best, &outcome), history))
}

pub fn train_dual_mlp(ds: &TrainingDataset, cfg: &TrainConfig) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    let mut drop_rng = rng::derive(cfg.seed, 3);
    fit(
        ds,
        cfg,
        ModelKind::Mlp,
        |g, vars, x, y, labels| {
            let (reg, prob) = dual_task_graph(g, vars, x, cfg.dropout, &mut drop_rng)?;
            let l_reg = g.mse(reg, y)?;
            let l_cls = g.bce(prob, labels)?;
            let weighted = g.scale(l_cls, cfg.cls_weight);
            g.add(l_reg, weighted)
        },
        |p, x| Ok(mlp_forward(p, x)?.reg),
    )
}

pub fn train_cnn(ds: &TrainingDataset, cfg: &TrainConfig) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    fit(
        ds,
        cfg,
        ModelKind::Cnn,
        |g, vars, x, y, _| {
            let out = cnn_graph(g, vars, x)?;
            g.mse(out, y)
        },
        cnn_forward,
    )
}

/// Trains `kind` on `ds`.
pub fn train(kind: ModelKind, ds: &TrainingDataset, cfg: &TrainConfig) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    match kind {
        ModelKind::Mlp => train_dual_mlp(ds, cfg),
        ModelKind::Cnn => train_cnn(ds, cfg),
        ModelKind::Svr => svr::train_svr_checkpoint(ds, cfg).map(|c| (c, Vec::new())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn combined_weighting() {
        assert_abs_diff_eq!(combined_loss(0.2, 0.4, 0.5), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn rigged_curve_returns_best_snapshot_and_stops_at_best_plus_15() {
        let curve: Vec<f64> = [1.0, 0.8, 0.6, 0.5, 0.55].into_iter().chain(std::iter::repeat_n(0.7, 40)).collect();
        let cfg = TrainConfig::default();
        let current = std::cell::Cell::new(0usize);
        let out = run_epochs(
            &cfg,
            |e, _| {
                current.set(e);
                Ok((0.0, curve[e]))
            },
            || current.get(),
        )
        .unwrap();
        assert_eq!(out.best, 3);
        assert_eq!(out.best_epoch, 3);
        assert_eq!(out.history.len(), 3 + 15 + 1);
        assert_eq!(out.history.last().unwrap().epoch, 18);
        // one reduction after five stagnant epochs, another five later
        let lrs: Vec<f64> = out.history.iter().map(|h| h.lr).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert_abs_diff_eq!(lrs[9], 3.5e-4, epsilon = 1e-18);
        assert_eq!(lrs[8], 5e-4);
    }

    #[test]
    fn max_epochs_caps_the_loop() {
        let cfg = TrainConfig { max_epochs: 7, ..Default::default() };
        let out = run_epochs(&cfg, |e, _| Ok((0.0, 1.0 / (e + 1) as f64)), || ()).unwrap();
        assert_eq!(out.history.len(), 7);
        assert_eq!(out.best_epoch, 6);
    }
}
