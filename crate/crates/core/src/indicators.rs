//! Rolling and cross-sectional kernels.
//!
//! Temporal kernels take one symbol's series in date order and return a
//! series of the same length; output at index `t` reads inputs at indices
//! `≤ t` only. NaN marks an undefined value. Windowed kernels are undefined
//! whenever their window touches a NaN. The exponential smoothers (EMA, Wilder)
//! skip missing observations: the output is NaN at the missing index and the
//! smoothing state carries over unchanged.

use crate::{Error, Result};

fn check_window(window: usize, min: usize, kernel: &str) -> Result<()> {
    if window < min {
        return Err(Error::Config(format!("{kernel}: window must be ≥ {min}, got {window}")));
    }
    Ok(())
}

/// Trailing arithmetic mean; the first `window - 1` entries are undefined.
pub fn sma(series: &[f64], window: usize) -> Result<Vec<f64>> {
    check_window(window, 1, "sma")?;
    let mut out = vec![f64::NAN; series.len()];
    let mut sum = 0.0;
    let mut missing = 0usize;
    for (i, &x) in series.iter().enumerate() {
        if x.is_nan() {
            missing += 1;
        } else {
            sum += x;
        }
        if i >= window {
            let old = series[i - window];
            if old.is_nan() {
                missing -= 1;
            } else {
                sum -= old;
            }
        }
        if i + 1 >= window && missing == 0 {
            out[i] = sum / window as f64;
        }
    }
    Ok(out)
}

/// Sliding mean/M2 accumulator over finite values.
#[derive(Default)]
struct SlidingMoments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl SlidingMoments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn pop(&mut self, x: f64) {
        if self.n <= 1.0 {
            *self = SlidingMoments::default();
            return;
        }
        let old_mean = self.mean;
        self.n -= 1.0;
        self.mean = (old_mean * (self.n + 1.0) - x) / self.n;
        self.m2 -= (x - old_mean) * (x - self.mean);
    }

    /// Two-pass moments of a NaN-free window; re-anchors accumulated drift.
    fn exact(win: &[f64]) -> Self {
        let n = win.len() as f64;
        let mean = win.iter().sum::<f64>() / n;
        let m2 = win.iter().map(|v| (v - mean).powi(2)).sum();
        SlidingMoments { n, mean, m2 }
    }

    fn population_std(&self) -> f64 {
        (self.m2.max(0.0) / self.n).sqrt()
    }
}

/// Trailing population standard deviation (divides by `window`).
pub fn rolling_std(series: &[f64], window: usize) -> Result<Vec<f64>> {
    check_window(window, 2, "std")?;
    let mut out = vec![f64::NAN; series.len()];
    let mut acc = SlidingMoments::default();
    let mut missing = 0usize;
    for (i, &x) in series.iter().enumerate() {
        if x.is_nan() {
            missing += 1;
        } else {
            acc.push(x);
        }
        if i >= window {
            let old = series[i - window];
            if old.is_nan() {
                missing -= 1;
            } else {
                acc.pop(old);
            }
        }
        if i + 1 >= window && missing == 0 {
            let win = &series[i + 1 - window..=i];
            if (i + 1) % window == 0 || acc.m2 <= RESYNC_REL * acc.mean * acc.mean * acc.n {
                acc = SlidingMoments::exact(win);
            }
            out[i] = acc.population_std();
        }
    }
    Ok(out)
}

/// Below this `m2 / (n·mean²)` the sliding update's cancellation error can
/// rival the true variance, so the window is recomputed directly.
const RESYNC_REL: f64 = 1e-8;

/// EMA with `alpha = 2 / (span + 1)`, seeded with the first defined value.
/// Defined wherever the input is defined.
pub fn ema(series: &[f64], span: usize) -> Result<Vec<f64>> {
    check_window(span, 1, "ema")?;
    let alpha = 2.0 / (span as f64 + 1.0);
    let mut out = vec![f64::NAN; series.len()];
    let mut state: Option<f64> = None;
    for (i, &x) in series.iter().enumerate() {
        if x.is_nan() {
            continue;
        }
        let next = match state {
            None => x,
            Some(prev) => prev + alpha * (x - prev),
        };
        state = Some(next);
        out[i] = next;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacdParams {
    pub fast: usize,
    pub slow: usize,
    pub signal: usize,
}

impl Default for MacdParams {
    fn default() -> Self {
        MacdParams { fast: 12, slow: 26, signal: 9 }
    }
}

impl MacdParams {
    /// Defined observations consumed before the histogram is reported.
    pub fn warmup(&self) -> usize {
        self.slow + self.signal - 1
    }
}

/// MACD histogram: `(EMA_fast - EMA_slow) - EMA_signal(EMA_fast - EMA_slow)`.
///
/// Reported from the `slow + signal`-th defined observation on; a series
/// with fewer defined observations is entirely undefined.
pub fn macd_diff(close: &[f64], params: MacdParams) -> Result<Vec<f64>> {
    let fast = ema(close, params.fast)?;
    let slow = ema(close, params.slow)?;
    let line: Vec<f64> = fast.iter().zip(&slow).map(|(f, s)| f - s).collect();
    let signal = ema(&line, params.signal)?;
    let mut out = vec![f64::NAN; close.len()];
    let mut seen = 0usize;
    for i in 0..close.len() {
        if close[i].is_nan() {
            continue;
        }
        if seen >= params.warmup() {
            out[i] = line[i] - signal[i];
        }
        seen += 1;
    }
    Ok(out)
}

/// Wilder RSI in `[0, 100]`.
///
/// The first average gain/loss is the plain mean of the first `window`
/// defined one-step changes; later values use Wilder smoothing
/// (`alpha = 1 / window`). With no gains and no losses the RSI is 50. On a
/// gap-free series the output is defined from index `window` onward.
pub fn rsi(close: &[f64], window: usize) -> Result<Vec<f64>> {
    check_window(window, 1, "rsi")?;
    let w = window as f64;
    let mut out = vec![f64::NAN; close.len()];
    let mut seed_gain = 0.0;
    let mut seed_loss = 0.0;
    let mut count = 0usize;
    let mut avg: Option<(f64, f64)> = None;
    for i in 1..close.len() {
        let d = close[i] - close[i - 1];
        if d.is_nan() {
            continue;
        }
        let (g, l) = (d.max(0.0), (-d).max(0.0));
        match avg {
            None => {
                seed_gain += g;
                seed_loss += l;
                count += 1;
                if count == window {
                    avg = Some((seed_gain / w, seed_loss / w));
                }
            }
            Some((ag, al)) => avg = Some(((ag * (w - 1.0) + g) / w, (al * (w - 1.0) + l) / w)),
        }
        if let Some((ag, al)) = avg {
            out[i] = rsi_value(ag, al);
        }
    }
    Ok(out)
}

fn rsi_value(avg_gain: f64, avg_loss: f64) -> f64 {
    if avg_loss == 0.0 {
        if avg_gain == 0.0 {
            50.0
        } else {
            100.0
        }
    } else {
        100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bollinger {
    pub mid: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

/// `mid = sma(window)`, bands at `mid ± k · rolling population std`.
pub fn bollinger(close: &[f64], window: usize, k: f64) -> Result<Bollinger> {
    check_window(window, 2, "bollinger")?;
    let mid = sma(close, window)?;
    let std = rolling_std(close, window)?;
    let upper = mid.iter().zip(&std).map(|(m, s)| m + k * s).collect();
    let lower = mid.iter().zip(&std).map(|(m, s)| m - k * s).collect();
    Ok(Bollinger { mid, upper, lower })
}

/// Trailing VWAP of the typical price `(high + low + close) / 3`; undefined
/// where the window's volume sums to zero.
pub fn rolling_vwap(high: &[f64], low: &[f64], close: &[f64], volume: &[f64], window: usize) -> Result<Vec<f64>> {
    check_window(window, 1, "vwap")?;
    let n = close.len();
    if high.len() != n || low.len() != n || volume.len() != n {
        return Err(Error::Data("vwap inputs must have equal length".into()));
    }
    let pv: Vec<f64> = (0..n).map(|i| (high[i] + low[i] + close[i]) / 3.0 * volume[i]).collect();
    let pv_sum = sma(&pv, window)?;
    let v_sum = sma(volume, window)?;
    Ok(pv_sum
        .iter()
        .zip(&v_sum)
        .map(|(p, v)| if *v == 0.0 { f64::NAN } else { p / v })
        .collect())
}

/// Average-tie ranks (1-based) of the finite entries; NaN elsewhere.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| !values[i].is_nan()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![f64::NAN; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // positions i..=j share the mean of ranks i+1..=j+1
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Cross-sectional rank scaled to `[0, 1]` as `(rank - 1) / (N - 1)` over
/// the defined entries, ties averaged. A single defined entry maps to 0.5.
pub fn cross_rank(values: &[f64]) -> Vec<f64> {
    let ranks = average_ranks(values);
    let n = ranks.iter().filter(|r| !r.is_nan()).count();
    ranks
        .into_iter()
        .map(|r| match n {
            _ if r.is_nan() => f64::NAN,
            1 => 0.5,
            _ => (r - 1.0) / (n - 1) as f64,
        })
        .collect()
}

/// Below this cross-sectional std, z-scores collapse to zero.
pub const ZSCORE_STD_FLOOR: f64 = 1e-12;

/// Cross-sectional z-score with population std; NaN entries stay NaN.
pub fn cross_zscore(values: &[f64]) -> Vec<f64> {
    let defined: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if defined.is_empty() {
        return values.to_vec();
    }
    let n = defined.len() as f64;
    let mean = defined.iter().sum::<f64>() / n;
    let std = (defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    values
        .iter()
        .map(|&v| match () {
            _ if v.is_nan() => f64::NAN,
            _ if std < ZSCORE_STD_FLOOR => 0.0,
            _ => (v - mean) / std,
        })
        .collect()
}

/// Moves values `k` slots later; the first `k` entries become undefined.
pub fn shift(series: &[f64], k: usize) -> Vec<f64> {
    let n = series.len();
    let mut out = vec![f64::NAN; n];
    if k < n {
        out[k..].copy_from_slice(&series[..n - k]);
    }
    out
}

/// `x[t] - x[t-1]`.
pub fn diff(series: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::NAN; series.len()];
    for i in 1..series.len() {
        out[i] = series[i] - series[i - 1];
    }
    out
}

pub fn sign(x: f64) -> f64 {
    if x.is_nan() {
        f64::NAN
    } else if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
