use ndarray::Zip;

use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply decay directly to the weights instead of adding `λ·w` to the
    /// gradient.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-3, decoupled: false }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub lr: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.raw_dim())).collect();
        Adam { lr: config.lr, config, m: zeros(), v: zeros(), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `names` label parameters in the non-finite diagnostic.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], names: &[String]) -> Result<()> {
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params[i].shape() {
                return Err(Error::Shape { op: "adam", left: params[i].shape().to_vec(), right: g.shape().to_vec() });
            }
            if g.iter().any(|x| !x.is_finite()) {
                let name = names.get(i).map_or("?", String::as_str);
                return Err(Error::Numerical(format!("non-finite gradient for parameter `{name}`")));
            }
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let lr = self.lr;
        for (i, p) in params.iter_mut().enumerate() {
            let wd = c.weight_decay;
            Zip::from(p).and(&grads[i]).and(&mut self.m[i]).and(&mut self.v[i]).for_each(|p, &g, m, v| {
                let g = if c.decoupled { g } else { g + wd * *p };
                if c.decoupled {
                    *p -= lr * wd * *p;
                }
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            });
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales all gradients together so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * k);
        }
    }
    norm
}

/// Multiplies the learning rate by `factor` once `patience` epochs pass
/// without the metric dropping below `best - delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub delta: f64,
    pub lr: f64,
    best: f64,
    num_bad: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, delta: f64) -> Self {
        PlateauScheduler { factor, patience, delta, lr, best: f64::INFINITY, num_bad: 0 }
    }

    /// Records an epoch's validation metric and returns the learning rate to
    /// use next.
    pub fn step(&mut self, metric: f64) -> f64 {
        if metric < self.best - self.delta {
            self.best = metric;
            self.num_bad = 0;
        } else {
            self.num_bad += 1;
            if self.num_bad >= self.patience {
                self.lr *= self.factor;
                self.num_bad = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: Option<usize>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: None }
    }

    /// Returns true when `metric` is a new best.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if metric < self.best {
            self.best = metric;
            self.best_epoch = Some(epoch);
            true
        } else {
            false
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        match self.best_epoch {
            Some(b) => epoch >= b + self.patience,
            None => epoch + 1 >= self.patience,
        }
    }
}
