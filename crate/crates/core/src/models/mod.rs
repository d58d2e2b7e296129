//! Dual-task MLP, 1-D CNN and linear SVR: training, checkpoints, scoring.

mod checkpoint;
mod net;
mod svr;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{cnn_forward, cnn_graph, dual_task_graph, mlp_forward, Heads};
pub use svr::{svr_objective, train_svr, SvrSolution};
pub use train::{combined_loss, rmse, run_epochs, train, train_cnn, train_dual_mlp, EpochRecord, TrainOutcome};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

use crate::dataset::{DataView, TrainingDataset};
use crate::evalkit::SignalFrame;
use crate::grad::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Mlp,
    Cnn,
    Svr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Mlp, ModelKind::Cnn, ModelKind::Svr];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Cnn => "cnn",
            ModelKind::Svr => "svr",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}` (expected mlp, cnn or svr)")))
    }
}

/// Which output of the dual-task MLP becomes the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignalSource {
    /// Regression head.
    #[default]
    Reg,
    /// Classification probability.
    Cls,
    /// `0.5 * reg + 0.5 * (p - 0.5)`.
    Mean,
}

impl SignalSource {
    pub fn name(self) -> &'static str {
        match self {
            SignalSource::Reg => "reg",
            SignalSource::Cls => "cls",
            SignalSource::Mean => "mean",
        }
    }
}

impl FromStr for SignalSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reg" => Ok(SignalSource::Reg),
            "cls" => Ok(SignalSource::Cls),
            "mean" => Ok(SignalSource::Mean),
            _ => Err(Error::Config(format!("unknown signal `{s}` (expected reg, cls or mean)"))),
        }
    }
}

/// Weight initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    #[default]
    Xavier,
    /// All parameters zero.
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub decoupled_decay: bool,
    pub clip_norm: f64,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub scheduler_delta: f64,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout: f64,
    /// Weight of the classification loss in the dual-task objective.
    pub cls_weight: f64,
    pub seed: u64,
    pub init: Init,
    pub signal: SignalSource,
    pub svr_c: f64,
    pub svr_epsilon: f64,
    pub svr_iters: usize,
    pub svr_step: f64,
    /// Fit the SVR on targets divided by their training std.
    pub svr_scale_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            weight_decay: 1e-3,
            decoupled_decay: false,
            clip_norm: 0.5,
            scheduler_factor: 0.7,
            scheduler_patience: 5,
            scheduler_delta: 1e-5,
            early_stop_patience: 15,
            batch_size: 256,
            max_epochs: 500,
            dropout: 0.1,
            cls_weight: 0.5,
            seed: 42,
            init: Init::Xavier,
            signal: SignalSource::Reg,
            svr_c: 1.0,
            svr_epsilon: 0.1,
            svr_iters: 500,
            svr_step: 0.5,
            svr_scale_targets: true,
        }
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub values: Vec<Tensor>,
}

impl ParamSet {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

impl Checkpoint {
    /// Raw heads for a batch of rows already in checkpoint factor order.
    pub fn heads(&self, x: ArrayView2<f64>) -> Result<Heads> {
        if x.ncols() != self.factor_names.len() {
            return Err(Error::Shape { op: "predict", left: vec![x.nrows(), x.ncols()], right: vec![self.factor_names.len()] });
        }
        match self.kind {
            ModelKind::Mlp => mlp_forward(&self.params, x),
            ModelKind::Cnn => cnn_forward(&self.params, x).map(|reg| Heads { reg, prob: None }),
            ModelKind::Svr => {
                let w = self.params.get("w").expect("svr weights");
                let b = self.params.get("b").expect("svr bias")[[0]];
                let w = w.as_slice().expect("contiguous");
                let reg = x.rows().into_iter().map(|r| r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b).collect();
                Ok(Heads { reg, prob: None })
            }
        }
    }

    /// Scores for rows in checkpoint factor order.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let h = self.heads(x)?;
        Ok(match (self.signal, h.prob) {
            (SignalSource::Reg, _) | (_, None) => h.reg,
            (SignalSource::Cls, Some(p)) => p,
            (SignalSource::Mean, Some(p)) => h.reg.iter().zip(&p).map(|(r, p)| 0.5 * r + 0.5 * (p - 0.5)).collect(),
        })
    }

    /// Regression-head output, the attribution target.
    pub fn predict_reg(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.heads(x)?.reg)
    }

    /// Reorders columns named `names` into checkpoint order. Refuses when
    /// the name sets differ.
    pub fn align(&self, x: ArrayView2<f64>, names: &[String]) -> Result<Array2<f64>> {
        let missing: Vec<&str> = self.factor_names.iter().filter(|n| !names.contains(n)).map(String::as_str).collect();
        let extra: Vec<&str> = names.iter().filter(|n| !self.factor_names.contains(n)).map(String::as_str).collect();
        if !missing.is_empty() || !extra.is_empty() || names.len() != self.factor_names.len() {
            return Err(Error::Data(format!(
                "factor names do not match the checkpoint (missing: [{}], unexpected: [{}])",
                missing.join(", "),
                extra.join(", ")
            )));
        }
        let cols: Vec<usize> = self.factor_names.iter().map(|n| names.iter().position(|m| m == n).expect("checked")).collect();
        Ok(Array2::from_shape_fn((x.nrows(), cols.len()), |(i, j)| x[[i, cols[j]]]))
    }

    /// Scores every sample of `view`, matching features by name.
    pub fn score(&self, dataset: &TrainingDataset, view: &DataView<'_>) -> Result<SignalFrame> {
        let x = self.align(view.x, &dataset.factor_names)?;
        let scores = self.predict(x.view())?;
        Ok(SignalFrame::new(
            (0..view.len())
                .map(|i| (dataset.dates[view.date_idx[i]], dataset.symbols[view.sym_idx[i]].clone(), scores[i]))
                .collect(),
        ))
    }
}
