//! Signal evaluation: daily rank IC, ICIR, Sharpe ratios and the top-K /
//! bottom-K long-short backtest.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use crate::dataset::forward_return;
use crate::indicators::average_ranks;
use crate::panel::{csv_to_io, PricePanel, DATE_FORMAT};
use crate::{Error, Result};

/// Below this the IC or return standard deviation counts as zero.
pub const STD_FLOOR: f64 = 1e-12;
pub const TRADING_DAYS: f64 = 252.0;

/// Model scores keyed by (date, symbol), sorted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignalFrame {
    entries: Vec<(NaiveDate, String, f64)>,
}

impl SignalFrame {
    pub fn new(mut entries: Vec<(NaiveDate, String, f64)>) -> Self {
        entries.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        SignalFrame { entries }
    }

    pub fn entries(&self) -> &[(NaiveDate, String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rejects duplicate (date, symbol) pairs and non-finite scores.
    pub fn validate(&self) -> Result<()> {
        for w in self.entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::Data(format!("duplicate score for {}/{}", w[0].0.format(DATE_FORMAT), w[0].1)));
            }
        }
        if let Some(e) = self.entries.iter().find(|e| !e.2.is_finite()) {
            return Err(Error::Data(format!("non-finite score at {}/{}", e.0.format(DATE_FORMAT), e.1)));
        }
        Ok(())
    }

    /// Entries grouped by date, in date order.
    pub fn by_date(&self) -> BTreeMap<NaiveDate, Vec<(&str, f64)>> {
        let mut out: BTreeMap<NaiveDate, Vec<(&str, f64)>> = BTreeMap::new();
        for (d, s, v) in &self.entries {
            out.entry(*d).or_default().push((s.as_str(), *v));
        }
        out
    }

    pub fn negated(&self) -> SignalFrame {
        SignalFrame { entries: self.entries.iter().map(|(d, s, v)| (*d, s.clone(), -v)).collect() }
    }

    /// Writes `date,symbol,score`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_to_io(path, e))?;
        w.write_record(["date", "symbol", "score"])?;
        for (d, s, v) in &self.entries {
            w.write_record([d.format(DATE_FORMAT).to_string(), s.clone(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_to_io(path, e))?;
        if r.headers()?.iter().ne(["date", "symbol", "score"]) {
            return Err(Error::Data(format!("{}: header must be `date,symbol,score`", path.display())));
        }
        let mut entries = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let bad = || Error::Data(format!("{}: malformed row at line {line}", path.display()));
            let d = NaiveDate::parse_from_str(rec.get(0).ok_or_else(bad)?, DATE_FORMAT).map_err(|_| bad())?;
            let v: f64 = rec.get(2).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            entries.push((d, rec[1].to_owned(), v));
        }
        let frame = SignalFrame::new(entries);
        frame.validate()?;
        Ok(frame)
    }
}

/// Pearson correlation; `None` with fewer than 2 points or zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n < 2 || n != b.len() {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa.sqrt() < STD_FLOOR || sbb.sqrt() < STD_FLOOR {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn finite_pairs(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    a.iter().zip(b).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| (*x, *y)).unzip()
}

/// Rank correlation over finite pairs with average ranks for ties. `None`
/// with fewer than 3 pairs or a constant side.
pub fn spearman_ic(scores: &[f64], returns: &[f64]) -> Option<f64> {
    let (a, b) = finite_pairs(scores, returns);
    if a.len() < 3 {
        return None;
    }
    pearson(&average_ranks(&a), &average_ranks(&b))
}

pub fn pearson_ic(scores: &[f64], returns: &[f64]) -> Option<f64> {
    let (a, b) = finite_pairs(scores, returns);
    if a.len() < 3 {
        return None;
    }
    pearson(&a, &b)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IcSummary {
    pub ic_mean: f64,
    pub ic_std: f64,
    /// `ic_mean / ic_std`; also reported as IR. `None` when the std is
    /// below [`STD_FLOOR`] or there are fewer than two days.
    pub icir: Option<f64>,
    pub n_days: usize,
}

pub fn ic_summary(daily: &[f64]) -> IcSummary {
    if daily.is_empty() {
        return IcSummary { ic_mean: f64::NAN, ic_std: f64::NAN, icir: None, n_days: 0 };
    }
    let (m, s) = mean_std(daily);
    let icir = (daily.len() >= 2 && s >= STD_FLOOR).then(|| m / s);
    IcSummary { ic_mean: m, ic_std: s, icir, n_days: daily.len() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SharpeStats {
    pub ann_return: f64,
    pub ann_vol: f64,
    /// `None` for zero volatility or fewer than two returns.
    pub sharpe: Option<f64>,
}

/// Arithmetic annualization with population std and zero risk-free rate.
pub fn sharpe(daily: &[f64], periods_per_year: f64) -> SharpeStats {
    if daily.is_empty() {
        return SharpeStats { ann_return: f64::NAN, ann_vol: f64::NAN, sharpe: None };
    }
    let (m, s) = mean_std(daily);
    let ann_return = m * periods_per_year;
    let ann_vol = s * periods_per_year.sqrt();
    let sharpe = (daily.len() >= 2 && s >= STD_FLOOR).then(|| ann_return / ann_vol);
    SharpeStats { ann_return, ann_vol, sharpe }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyIc {
    pub date: NaiveDate,
    pub ic: f64,
    pub ic_pearson: f64,
    pub n: usize,
}

/// Per-date Spearman IC of scores against realized `horizon`-day forward
/// returns. Days with fewer than 3 pairs or constant ranks are skipped.
pub fn daily_ic(signals: &SignalFrame, panel: &PricePanel, horizon: usize) -> Vec<DailyIc> {
    let fwd = forward_return(panel, horizon);
    let mut out = Vec::new();
    for (date, rows) in signals.by_date() {
        let Some(t) = panel.date_index(date) else { continue };
        let mut s = Vec::new();
        let mut r = Vec::new();
        for (sym, v) in rows {
            if let Some(j) = panel.symbol_index(sym) {
                if fwd[[t, j]].is_finite() && v.is_finite() {
                    s.push(v);
                    r.push(fwd[[t, j]]);
                }
            }
        }
        match spearman_ic(&s, &r) {
            Some(ic) => out.push(DailyIc { date, ic, ic_pearson: pearson_ic(&s, &r).unwrap_or(f64::NAN), n: s.len() }),
            None => log::debug!("skipping IC on {date}: {} usable pairs", s.len()),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    /// Formation dates; each return is realized from that close to the next.
    pub dates: Vec<NaiveDate>,
    pub top: Vec<f64>,
    pub bottom: Vec<f64>,
    pub long_short: Vec<f64>,
    pub k: usize,
    pub holding: usize,
}

/// `Π(1 + r) − 1` after each step.
pub fn cumulative(returns: &[f64]) -> Vec<f64> {
    let mut acc = 1.0;
    returns
        .iter()
        .map(|r| {
            acc *= 1.0 + r;
            acc - 1.0
        })
        .collect()
}

impl BacktestResult {
    pub fn cumulative(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (cumulative(&self.top), cumulative(&self.bottom), cumulative(&self.long_short))
    }
}

/// Equal-weight top-k and bottom-k legs by score. With `holding == 1` the
/// book is rebuilt daily from 1-day forward returns; with `holding > 1`
/// each day's return averages the books formed over the last `holding`
/// days. Ties break by symbol name.
pub fn long_short_backtest(signals: &SignalFrame, panel: &PricePanel, k: usize, holding: usize) -> Result<BacktestResult> {
    if k == 0 || holding == 0 {
        return Err(Error::Config("backtest needs k >= 1 and holding >= 1".into()));
    }
    let next = forward_return(panel, 1);
    let by_date = signals.by_date();
    let mut books: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (date, rows) in &by_date {
        let Some(t) = panel.date_index(*date) else { continue };
        let mut cands: Vec<(f64, &str, usize)> = rows
            .iter()
            .filter_map(|&(sym, v)| panel.symbol_index(sym).map(|j| (v, sym, j)))
            .filter(|&(v, _, j)| v.is_finite() && next[[t, j]].is_finite())
            .collect();
        if cands.len() < 2 * k {
            log::debug!("skipping backtest day {date}: {} candidates for k = {k}", cands.len());
            continue;
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let top: Vec<usize> = cands[..k].iter().map(|c| c.2).collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        let bottom: Vec<usize> = cands[..k].iter().map(|c| c.2).collect();
        books.insert(t, (top, bottom));
    }
    let leg = |t: usize, syms: &[usize]| -> Option<f64> {
        let r: Vec<f64> = syms.iter().map(|&j| next[[t, j]]).filter(|v| v.is_finite()).collect();
        (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
    };
    let mut res = BacktestResult { dates: vec![], top: vec![], bottom: vec![], long_short: vec![], k, holding };
    let days: Vec<usize> = if holding == 1 {
        books.keys().copied().collect()
    } else {
        let first = books.keys().next().copied().unwrap_or(0);
        (first..panel.n_dates().saturating_sub(1)).collect()
    };
    for t in days {
        let mut tops = Vec::new();
        let mut bottoms = Vec::new();
        for (_, (top, bottom)) in books.range(t.saturating_sub(holding - 1)..=t) {
            if let (Some(a), Some(b)) = (leg(t, top), leg(t, bottom)) {
                tops.push(a);
                bottoms.push(b);
            }
        }
        if tops.is_empty() {
            continue;
        }
        let top = tops.iter().sum::<f64>() / tops.len() as f64;
        let bottom = bottoms.iter().sum::<f64>() / bottoms.len() as f64;
        res.dates.push(panel.dates()[t]);
        res.top.push(top);
        res.bottom.push(bottom);
        res.long_short.push(top - bottom);
    }
    Ok(res)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub k: usize,
    pub holding: usize,
    pub horizon: usize,
    pub annualization: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { k: 5, holding: 1, horizon: 5, annualization: TRADING_DAYS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LegSharpe {
    pub top: SharpeStats,
    pub bottom: SharpeStats,
    pub long_short: SharpeStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub ic_mean: f64,
    pub ic_std: f64,
    pub icir: Option<f64>,
    /// Same quantity as `icir`.
    pub ir: Option<f64>,
    pub ic_pearson_mean: f64,
    pub n_days: usize,
    /// True when no day produced a defined IC.
    pub ic_undefined: bool,
    pub k: usize,
    pub holding: usize,
    pub horizon: usize,
    pub backtest_days: usize,
    pub sharpe: LegSharpe,
    pub cumulative_top: f64,
    pub cumulative_bottom: f64,
    pub cumulative_long_short: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub daily: Vec<DailyIc>,
    pub backtest: BacktestResult,
    pub metrics: MetricsReport,
}

pub fn evaluate_signals(signals: &SignalFrame, panel: &PricePanel, cfg: &EvalConfig) -> Result<Evaluation> {
    let daily = daily_ic(signals, panel, cfg.horizon);
    let ics: Vec<f64> = daily.iter().map(|d| d.ic).collect();
    let summary = ic_summary(&ics);
    let pearsons: Vec<f64> = daily.iter().map(|d| d.ic_pearson).filter(|v| v.is_finite()).collect();
    let backtest = long_short_backtest(signals, panel, cfg.k, cfg.holding)?;
    let (ct, cb, cl) = backtest.cumulative();
    let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
    let metrics = MetricsReport {
        ic_mean: summary.ic_mean,
        ic_std: summary.ic_std,
        icir: summary.icir,
        ir: summary.icir,
        ic_pearson_mean: if pearsons.is_empty() { f64::NAN } else { pearsons.iter().sum::<f64>() / pearsons.len() as f64 },
        n_days: summary.n_days,
        ic_undefined: daily.is_empty(),
        k: cfg.k,
        holding: cfg.holding,
        horizon: cfg.horizon,
        backtest_days: backtest.dates.len(),
        sharpe: LegSharpe {
            top: sharpe(&backtest.top, cfg.annualization),
            bottom: sharpe(&backtest.bottom, cfg.annualization),
            long_short: sharpe(&backtest.long_short, cfg.annualization),
        },
        cumulative_top: last(&ct),
        cumulative_bottom: last(&cb),
        cumulative_long_short: last(&cl),
    };
    Ok(Evaluation { daily, backtest, metrics })
}

impl Evaluation {
    /// Writes `ic_series.csv`, `cumrets.csv` and `metrics.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("ic_series.csv");
        let mut w = csv::Writer::from_path(&p).map_err(|e| csv_to_io(&p, e))?;
        w.write_record(["date", "ic", "ic_pearson", "n"])?;
        for d in &self.daily {
            w.write_record([d.date.format(DATE_FORMAT).to_string(), d.ic.to_string(), d.ic_pearson.to_string(), d.n.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;

        let p = dir.join("cumrets.csv");
        let mut w = csv::Writer::from_path(&p).map_err(|e| csv_to_io(&p, e))?;
        w.write_record(["date", "top", "bottom", "long_short"])?;
        let (ct, cb, cl) = self.backtest.cumulative();
        for (i, d) in self.backtest.dates.iter().enumerate() {
            w.write_record([d.format(DATE_FORMAT).to_string(), ct[i].to_string(), cb[i].to_string(), cl[i].to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;

        let p = dir.join("metrics.json");
        let json = serde_json::to_string_pretty(&self.metrics).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
    }
}
