//! Permutation-sampling Shapley attribution and the factor heatmap grid.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};

use crate::dataset::{DataView, TrainingDataset};
use crate::models::Checkpoint;
use crate::panel::csv_to_io;
use crate::{rng, Error, Result};

/// Permutations evaluated per scorer call.
const PERMS_PER_BATCH: usize = 64;

/// Shapley values of `x` against baseline `b` from `n_perms` random
/// orderings. `scorer` maps a batch of rows to one output per row.
///
/// Each ordering walks from `b` to `x` one coordinate at a time, so the
/// marginals of a single ordering always sum to `f(x) − f(b)`.
pub fn shapley_mc(
    mut scorer: impl FnMut(ArrayView2<f64>) -> Result<Vec<f64>>,
    x: &[f64],
    b: &[f64],
    n_perms: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let f = x.len();
    if b.len() != f {
        return Err(Error::Shape { op: "shapley", left: vec![f], right: vec![b.len()] });
    }
    if n_perms == 0 {
        return Err(Error::Config("shapley needs at least one permutation".into()));
    }
    let mut rng = rng::seeded(seed);
    let mut phi = vec![0.0; f];
    let mut done = 0;
    while done < n_perms {
        let chunk = PERMS_PER_BATCH.min(n_perms - done);
        let mut perms = Vec::with_capacity(chunk);
        let mut rows = Array2::<f64>::zeros((chunk * (f + 1), f));
        for p in 0..chunk {
            let mut perm: Vec<usize> = (0..f).collect();
            rng::shuffle(&mut rng, &mut perm);
            let base = p * (f + 1);
            let mut cur = b.to_vec();
            rows.row_mut(base).assign(&ndarray::aview1(&cur));
            for (step, &i) in perm.iter().enumerate() {
                cur[i] = x[i];
                rows.row_mut(base + step + 1).assign(&ndarray::aview1(&cur));
            }
            perms.push(perm);
        }
        let out = scorer(rows.view())?;
        if out.len() != rows.nrows() {
            return Err(Error::Shape { op: "shapley scorer", left: vec![rows.nrows()], right: vec![out.len()] });
        }
        if let Some(bad) = out.iter().position(|v| !v.is_finite()) {
            let hybrid: Vec<String> = rows.row(bad).iter().map(|v| format!("{v:.6}")).collect();
            return Err(Error::Numerical(format!("model output is not finite on hybrid input [{}]", hybrid.join(", "))));
        }
        for (p, perm) in perms.iter().enumerate() {
            let base = p * (f + 1);
            for (step, &i) in perm.iter().enumerate() {
                phi[i] += out[base + step + 1] - out[base + step];
            }
        }
        done += chunk;
    }
    for v in &mut phi {
        *v /= n_perms as f64;
    }
    Ok(phi)
}

/// Heatmap layout: a fixed `rows x cols` grid, or five columns with as
/// many rows as needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridSpec {
    #[default]
    Auto,
    Fixed { rows: usize, cols: usize },
}

pub const AUTO_GRID_COLS: usize = 5;

impl GridSpec {
    pub fn shape(self, n_factors: usize) -> Result<(usize, usize)> {
        match self {
            GridSpec::Auto => Ok((n_factors.div_ceil(AUTO_GRID_COLS).max(1), AUTO_GRID_COLS)),
            GridSpec::Fixed { rows, cols } => {
                if n_factors > rows * cols {
                    let need = n_factors.div_ceil(cols);
                    return Err(Error::Config(format!(
                        "{n_factors} factors do not fit a {rows}x{cols} grid; use --grid {need}x{cols}"
                    )));
                }
                Ok((rows, cols))
            }
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridSpec::Auto => f.write_str("auto"),
            GridSpec::Fixed { rows, cols } => write!(f, "{rows}x{cols}"),
        }
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(GridSpec::Auto);
        }
        let bad = || Error::Config(format!("grid must be `auto` or ROWSxCOLS, got `{s}`"));
        let (r, c) = s.split_once('x').ok_or_else(bad)?;
        let rows: usize = r.trim().parse().map_err(|_| bad())?;
        let cols: usize = c.trim().parse().map_err(|_| bad())?;
        if rows == 0 || cols == 0 {
            return Err(bad());
        }
        Ok(GridSpec::Fixed { rows, cols })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
    /// Index into the factor list; `None` for trailing empty cells.
    pub factor: Option<usize>,
}

/// Row-major placement of factors in file order.
pub fn heatmap_grid(n_factors: usize, spec: GridSpec) -> Result<Vec<GridCell>> {
    let (rows, cols) = spec.shape(n_factors)?;
    Ok((0..rows * cols)
        .map(|k| GridCell { row: k / cols, col: k % cols, factor: (k < n_factors).then_some(k) })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionResult {
    pub factor_names: Vec<String>,
    pub baseline: Vec<f64>,
    pub baseline_value: f64,
    /// Samples × factors.
    pub phi: Array2<f64>,
    /// Model output per attributed sample.
    pub outputs: Vec<f64>,
    pub signed_mean: Vec<f64>,
    pub mean_abs: Vec<f64>,
}

impl AttributionResult {
    /// Largest `|Σφ − (f(x) − f(b))|` over samples.
    pub fn max_efficiency_gap(&self) -> f64 {
        self.phi
            .axis_iter(Axis(0))
            .zip(&self.outputs)
            .map(|(row, fx)| (row.sum() - (fx - self.baseline_value)).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `row,col,factor,signed_mean,mean_abs`, empty fields for
    /// unused cells.
    pub fn write_grid_csv(&self, path: impl AsRef<Path>, spec: GridSpec) -> Result<()> {
        let path = path.as_ref();
        let cells = heatmap_grid(self.factor_names.len(), spec)?;
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_to_io(path, e))?;
        w.write_record(["row", "col", "factor", "signed_mean", "mean_abs"])?;
        for c in cells {
            let (name, s, a) = match c.factor {
                Some(k) => (self.factor_names[k].clone(), self.signed_mean[k].to_string(), self.mean_abs[k].to_string()),
                None => (String::new(), String::new(), String::new()),
            };
            w.write_record([c.row.to_string(), c.col.to_string(), name, s, a])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionConfig {
    pub n_perms: usize,
    /// Rows attributed, spread evenly over the view.
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig { n_perms: 2048, n_samples: 32, seed: 42 }
    }
}

/// Evenly spaced row indices, `n` of them at most.
pub fn sample_rows(len: usize, n: usize) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    (0..n).map(|i| i * len / n).collect()
}

/// Attributes the regression head of `ckpt` on rows of `view`. The
/// baseline is the per-factor mean of `baseline_view`.
pub fn attribute(
    ckpt: &Checkpoint,
    dataset: &TrainingDataset,
    view: &DataView<'_>,
    baseline_view: &DataView<'_>,
    cfg: &AttributionConfig,
) -> Result<AttributionResult> {
    if baseline_view.is_empty() || view.is_empty() {
        return Err(Error::Data("attribution needs non-empty sample and baseline sets".into()));
    }
    let xb = ckpt.align(baseline_view.x, &dataset.factor_names)?;
    let baseline = xb.mean_axis(Axis(0)).expect("non-empty").to_vec();
    let x = ckpt.align(view.x, &dataset.factor_names)?;
    let rows = sample_rows(x.nrows(), cfg.n_samples);
    let f = baseline.len();
    let baseline_value = ckpt.predict_reg(ArrayView2::from_shape((1, f), &baseline).expect("one row"))?[0];
    let mut phi = Array2::zeros((rows.len(), f));
    let mut outputs = Vec::with_capacity(rows.len());
    for (k, &r) in rows.iter().enumerate() {
        let xr = x.row(r).to_vec();
        let seed = cfg.seed.wrapping_add(k as u64);
        let p = shapley_mc(|m| ckpt.predict_reg(m), &xr, &baseline, cfg.n_perms, seed)?;
        phi.row_mut(k).assign(&ndarray::aview1(&p));
        outputs.push(ckpt.predict_reg(x.row(r).insert_axis(Axis(0)))?[0]);
    }
    let signed_mean = phi.mean_axis(Axis(0)).expect("non-empty").to_vec();
    let mean_abs = phi.mapv(f64::abs).mean_axis(Axis(0)).expect("non-empty").to_vec();
    Ok(AttributionResult { factor_names: ckpt.factor_names.clone(), baseline, baseline_value, phi, outputs, signed_mean, mean_abs })
}
