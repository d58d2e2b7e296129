//! Training samples: per-day z-scored factors, clipped forward-return
//! targets, up/down labels and a date-based train/validation split.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::{s, Array2, Array3, ArrayView2, Axis};

use crate::dsl::FeatureFrame;
use crate::indicators::cross_zscore;
use crate::panel::{csv_to_io, PricePanel, DATE_FORMAT};
use crate::{Error, Result};

/// Fewest defined training targets accepted when fitting clip quantiles.
pub const MIN_CLIP_SAMPLES: usize = 20;

/// `close[t + horizon] / close[t] - 1`; NaN where either end is missing.
pub fn forward_return(panel: &PricePanel, horizon: usize) -> Array2<f64> {
    let close = panel.close();
    let (t_len, n) = close.dim();
    Array2::from_shape_fn((t_len, n), |(t, s)| {
        if t + horizon < t_len {
            close[[t + horizon, s]] / close[[t, s]] - 1.0
        } else {
            f64::NAN
        }
    })
}

/// Quantile of sorted data with linear interpolation between order
/// statistics (position `q * (n - 1)`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipBounds {
    pub lo: f64,
    pub hi: f64,
}

impl ClipBounds {
    /// Fits `[q_lo, q_hi]` quantiles over the finite values of `values`.
    pub fn fit(values: &[f64], q_lo: f64, q_hi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q_lo) || !(0.0..=1.0).contains(&q_hi) || q_lo >= q_hi {
            return Err(Error::Config(format!("clip quantiles must satisfy 0 <= lo < hi <= 1, got {q_lo} and {q_hi}")));
        }
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.len() < MIN_CLIP_SAMPLES {
            return Err(Error::Data(format!(
                "{} training targets are too few to fit clip quantiles (need {MIN_CLIP_SAMPLES})",
                v.len()
            )));
        }
        v.sort_by(f64::total_cmp);
        Ok(ClipBounds { lo: quantile_sorted(&v, q_lo), hi: quantile_sorted(&v, q_hi) })
    }

    pub fn apply(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

/// Per date and factor z-scores over the defined symbols.
pub fn zscore_per_day(frame: &FeatureFrame) -> FeatureFrame {
    let mut values = Array3::from_elem(frame.values.dim(), f64::NAN);
    for (t, day) in frame.values.axis_iter(Axis(0)).enumerate() {
        for (f, col) in day.axis_iter(Axis(1)).enumerate() {
            let z = cross_zscore(&col.to_vec());
            values.slice_mut(s![t, .., f]).assign(&ndarray::ArrayView1::from(&z));
        }
    }
    FeatureFrame { values, ..frame.clone() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub cutoff_date: NaiveDate,
    pub horizon: usize,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            cutoff_date: NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date"),
            horizon: 5,
            clip_lo: 0.05,
            clip_hi: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

/// Complete samples sorted by (date, symbol); the first `n_train` are the
/// training split.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDataset {
    pub factor_names: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub symbols: Vec<String>,
    /// Index into `dates` per sample.
    pub date_idx: Vec<usize>,
    /// Index into `symbols` per sample.
    pub sym_idx: Vec<usize>,
    /// N × F standardized features.
    pub x: Array2<f64>,
    /// Clipped forward returns.
    pub y: Vec<f64>,
    pub label_up: Vec<f64>,
    pub n_train: usize,
    pub clip: ClipBounds,
    pub config: DatasetConfig,
}

/// Borrowed slice of a dataset (one split or the whole set).
#[derive(Debug, Clone, Copy)]
pub struct DataView<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: &'a [f64],
    pub label_up: &'a [f64],
    pub date_idx: &'a [usize],
    pub sym_idx: &'a [usize],
}

impl DataView<'_> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Contiguous sample ranges sharing a date.
    pub fn date_groups(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.len() {
            if i == self.len() || self.date_idx[i] != self.date_idx[start] {
                out.push(start..i);
                start = i;
            }
        }
        out
    }
}

impl TrainingDataset {
    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.factor_names.len()
    }

    pub fn n_validation(&self) -> usize {
        self.n_samples() - self.n_train
    }

    pub fn split_of(&self, i: usize) -> Split {
        if i < self.n_train {
            Split::Train
        } else {
            Split::Validation
        }
    }

    fn view(&self, r: std::ops::Range<usize>) -> DataView<'_> {
        DataView {
            x: self.x.slice(s![r.clone(), ..]),
            y: &self.y[r.clone()],
            label_up: &self.label_up[r.clone()],
            date_idx: &self.date_idx[r.clone()],
            sym_idx: &self.sym_idx[r],
        }
    }

    pub fn train(&self) -> DataView<'_> {
        self.view(0..self.n_train)
    }

    pub fn validation(&self) -> DataView<'_> {
        self.view(self.n_train..self.n_samples())
    }

    pub fn all(&self) -> DataView<'_> {
        self.view(0..self.n_samples())
    }

    /// Writes `date,symbol,y,label_up,f_000,...` plus a `<path>.meta`
    /// sidecar holding factor names, split and clip settings.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_to_io(path, e))?;
        let mut header = vec!["date".to_owned(), "symbol".into(), "y".into(), "label_up".into()];
        header.extend((0..self.n_features()).map(|f| format!("f_{f:03}")));
        w.write_record(&header)?;
        for i in 0..self.n_samples() {
            let mut rec = vec![
                self.dates[self.date_idx[i]].format(DATE_FORMAT).to_string(),
                self.symbols[self.sym_idx[i]].clone(),
                self.y[i].to_string(),
                self.label_up[i].to_string(),
            ];
            rec.extend(self.x.row(i).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let meta_path = meta_path(path);
        std::fs::write(&meta_path, self.meta()).map_err(|e| Error::io(&meta_path, e))?;
        Ok(())
    }

    fn meta(&self) -> String {
        let c = &self.config;
        let mut m = String::new();
        let _ = writeln!(m, "factors = {}", self.factor_names.join(","));
        let _ = writeln!(m, "cutoff_date = {}", c.cutoff_date.format(DATE_FORMAT));
        let _ = writeln!(m, "horizon_days = {}", c.horizon);
        let _ = writeln!(m, "clip_lo = {}", c.clip_lo);
        let _ = writeln!(m, "clip_hi = {}", c.clip_hi);
        let _ = writeln!(m, "clip_bound_lo = {}", self.clip.lo);
        let _ = writeln!(m, "clip_bound_hi = {}", self.clip.hi);
        let _ = writeln!(m, "n_train = {}", self.n_train);
        let _ = writeln!(m, "n_validation = {}", self.n_validation());
        m
    }

    /// Reads a dataset written by [`TrainingDataset::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta_path = meta_path(path);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: BTreeMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        let get = |k: &str| meta.get(k).copied().ok_or_else(|| Error::Data(format!("{}: missing `{k}`", meta_path.display())));
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Data(format!("{}: bad `{k}`", meta_path.display())))
        };
        let factor_names: Vec<String> = get("factors")?.split(',').map(str::to_owned).collect();
        let config = DatasetConfig {
            cutoff_date: NaiveDate::parse_from_str(get("cutoff_date")?, DATE_FORMAT)
                .map_err(|e| Error::Data(format!("{}: bad cutoff_date: {e}", meta_path.display())))?,
            horizon: num("horizon_days")? as usize,
            clip_lo: num("clip_lo")?,
            clip_hi: num("clip_hi")?,
        };
        let clip = ClipBounds { lo: num("clip_bound_lo")?, hi: num("clip_bound_hi")? };

        let mut r = csv::Reader::from_path(path).map_err(|e| csv_to_io(path, e))?;
        let f = factor_names.len();
        if r.headers()?.len() != 4 + f {
            return Err(Error::Data(format!("{}: expected {} columns", path.display(), 4 + f)));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let bad = |what: &str| Error::Data(format!("{}: bad {what} at line {line}", path.display()));
            let date = NaiveDate::parse_from_str(&rec[0], DATE_FORMAT).map_err(|_| bad("date"))?;
            let nums: Vec<f64> = (2..rec.len())
                .map(|c| rec[c].parse::<f64>().map_err(|_| bad("number")))
                .collect::<Result<_>>()?;
            rows.push((date, rec[1].to_owned(), nums));
        }
        let mut dates: Vec<NaiveDate> = rows.iter().map(|r| r.0).collect();
        dates.dedup();
        let mut symbols: Vec<String> = rows.iter().map(|r| r.1.clone()).collect();
        symbols.sort();
        symbols.dedup();
        let mut x = Array2::zeros((rows.len(), f));
        let (mut date_idx, mut sym_idx, mut y, mut label_up) = (vec![], vec![], vec![], vec![]);
        for (i, (d, sym, nums)) in rows.iter().enumerate() {
            date_idx.push(dates.binary_search(d).map_err(|_| Error::Data(format!("{}: dates out of order", path.display())))?);
            sym_idx.push(symbols.binary_search(sym).expect("collected"));
            y.push(nums[0]);
            label_up.push(nums[1]);
            x.row_mut(i).assign(&ndarray::ArrayView1::from(&nums[2..]));
        }
        let n_train = rows.iter().take_while(|r| r.0 < config.cutoff_date).count();
        Ok(TrainingDataset { factor_names, dates, symbols, date_idx, sym_idx, x, y, label_up, n_train, clip, config })
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}

/// Builds the dataset from raw factor values: z-scores per day, computes
/// forward returns, drops incomplete samples and thin dates, fits clip
/// bounds on the training split and labels clipped targets.
pub fn build_dataset(frame: &FeatureFrame, panel: &PricePanel, config: &DatasetConfig) -> Result<TrainingDataset> {
    if frame.dates != panel.dates() || frame.symbols != panel.symbols() {
        return Err(Error::Data("feature frame and panel are not aligned".into()));
    }
    let z = zscore_per_day(frame);
    let fwd = forward_return(panel, config.horizon);
    split_and_assemble(&z, &fwd, config)
}

/// Assembles samples from standardized features and raw targets.
pub fn split_and_assemble(features: &FeatureFrame, targets: &Array2<f64>, config: &DatasetConfig) -> Result<TrainingDataset> {
    let dates = &features.dates;
    if dates.is_empty() || config.cutoff_date <= dates[0] || config.cutoff_date > *dates.last().expect("non-empty") {
        return Err(Error::Config(format!(
            "cutoff_date {} is outside the panel's date range",
            config.cutoff_date.format(DATE_FORMAT)
        )));
    }
    let (t_len, n_sym, n_f) = features.values.dim();
    let mut keep: Vec<(usize, usize)> = Vec::new();
    let mut dropped = 0usize;
    for t in 0..t_len {
        let day: Vec<(usize, usize)> = (0..n_sym)
            .filter(|&s| targets[[t, s]].is_finite() && (0..n_f).all(|f| features.values[[t, s, f]].is_finite()))
            .map(|s| (t, s))
            .collect();
        let defined_targets = (0..n_sym).filter(|&s| targets[[t, s]].is_finite()).count();
        if day.len() >= 2 {
            dropped += defined_targets - day.len();
            keep.extend(day);
        } else {
            dropped += defined_targets;
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} samples with missing features or thin cross-sections");
    }
    let n_train = keep.iter().take_while(|(t, _)| dates[*t] < config.cutoff_date).count();
    if n_train == 0 || n_train == keep.len() {
        return Err(Error::Data(format!(
            "empty {} split at cutoff {}",
            if n_train == 0 { "train" } else { "validation" },
            config.cutoff_date.format(DATE_FORMAT)
        )));
    }
    let raw: Vec<f64> = keep.iter().map(|&(t, s)| targets[[t, s]]).collect();
    let clip = ClipBounds::fit(&raw[..n_train], config.clip_lo, config.clip_hi)?;
    let y: Vec<f64> = raw.iter().map(|&r| clip.apply(r)).collect();
    let label_up = y.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut x = Array2::zeros((keep.len(), n_f));
    for (i, &(t, s)) in keep.iter().enumerate() {
        x.row_mut(i).assign(&features.values.slice(s![t, s, ..]));
    }
    Ok(TrainingDataset {
        factor_names: features.factor_names.clone(),
        dates: dates.clone(),
        symbols: features.symbols.clone(),
        date_idx: keep.iter().map(|k| k.0).collect(),
        sym_idx: keep.iter().map(|k| k.1).collect(),
        x,
        y,
        label_up,
        n_train,
        clip,
        config: config.clone(),
    })
}
