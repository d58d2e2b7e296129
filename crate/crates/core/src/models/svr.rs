use ndarray::{Array1, ArrayD, ArrayView2, IxDyn};

use super::{Checkpoint, ModelKind, TrainConfig};
use crate::dataset::TrainingDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SvrSolution {
    pub w: Vec<f64>,
    pub b: f64,
    pub objective: f64,
}

/// `½‖w‖² + C·Σ max(0, |yᵢ − w·xᵢ − b| − ε)`.
pub fn svr_objective(w: &[f64], b: f64, x: ArrayView2<f64>, y: &[f64], c: f64, eps: f64) -> f64 {
    let wv = Array1::from(w.to_vec());
    let pred = x.dot(&wv);
    let hinge: f64 = pred.iter().zip(y).map(|(p, t)| ((t - p - b).abs() - eps).max(0.0)).sum();
    0.5 * wv.dot(&wv) + c * hinge
}

/// Full-batch subgradient descent on the objective divided by `C·n`, with
/// step `step / √(k+1)` for `iters` iterations. Returns the iterate with
/// the lowest objective seen.
pub fn train_svr(x: ArrayView2<f64>, y: &[f64], c: f64, eps: f64, iters: usize, step: f64) -> Result<SvrSolution> {
    let (n, f) = x.dim();
    if n == 0 || n != y.len() {
        return Err(Error::Shape { op: "svr", left: vec![n, f], right: vec![y.len()] });
    }
    if !(c > 0.0) || !(eps >= 0.0) {
        return Err(Error::Config(format!("svr needs C > 0 and epsilon >= 0, got {c} and {eps}")));
    }
    let scale = 1.0 / (c * n as f64);
    let mut w = Array1::<f64>::zeros(f);
    let mut b = 0.0;
    let mut best = SvrSolution { w: w.to_vec(), b, objective: f64::INFINITY };
    let mut coef = Array1::<f64>::zeros(n);
    for k in 0..=iters {
        let pred = x.dot(&w);
        let mut hinge = 0.0;
        let mut gb = 0.0;
        for i in 0..n {
            let r = y[i] - pred[i] - b;
            let excess = r.abs() - eps;
            if excess > 0.0 {
                hinge += excess;
                coef[i] = r.signum();
                gb -= r.signum();
            } else {
                coef[i] = 0.0;
            }
        }
        let objective = 0.5 * w.dot(&w) + c * hinge;
        if !objective.is_finite() {
            return Err(Error::Numerical(format!("svr objective diverged at iteration {k}")));
        }
        if objective < best.objective {
            best = SvrSolution { w: w.to_vec(), b, objective };
        }
        if k == iters {
            break;
        }
        let gw = &w * scale - &(x.t().dot(&coef) / n as f64);
        let eta = step / ((k + 1) as f64).sqrt();
        w.scaled_add(-eta, &gw);
        b -= eta * gb / n as f64;
    }
    Ok(best)
}

pub(crate) fn train_svr_checkpoint(ds: &TrainingDataset, cfg: &TrainConfig) -> Result<Checkpoint> {
    if ds.n_train == 0 {
        return Err(Error::Data("svr needs a non-empty train split".into()));
    }
    let train = ds.train();
    let scale = if cfg.svr_scale_targets {
        let m = train.y.iter().sum::<f64>() / train.len() as f64;
        let sd = (train.y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / train.len() as f64).sqrt();
        if sd > 1e-12 {
            sd
        } else {
            1.0
        }
    } else {
        1.0
    };
    let y: Vec<f64> = train.y.iter().map(|v| v / scale).collect();
    let sol = train_svr(train.x, &y, cfg.svr_c, cfg.svr_epsilon, cfg.svr_iters, cfg.svr_step)?;
    let mut ckpt = Checkpoint::initial(ModelKind::Svr, &ds.factor_names, cfg);
    ckpt.params.values[0] = ArrayD::from_shape_vec(IxDyn(&[sol.w.len()]), sol.w.iter().map(|v| v * scale).collect()).expect("length");
    ckpt.params.values[1] = ArrayD::from_elem(IxDyn(&[1]), sol.b * scale);
    ckpt.meta.push(("svr_target_scale".into(), scale.to_string()));
    ckpt.meta.push(("svr_objective".into(), sol.objective.to_string()));
    Ok(ckpt)
}
