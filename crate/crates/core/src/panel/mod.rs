//! Aligned OHLCV panels.
//!
//! A [`PricePanel`] is a date × symbol grid of five fields. A cell is either
//! fully present or fully missing (all five fields NaN); missing cells are
//! never filled.

mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::Deserialize;

use crate::{Error, Result};

pub use synth::{generate_synthetic, generate_synthetic_with, PlantedSignal, PlantedTerm, SyntheticSpec};

pub const CSV_HEADER: [&str; 7] = ["date", "symbol", "open", "high", "low", "close", "volume"];
pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub date: NaiveDate,
    pub symbol: String,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    fn location(&self) -> String {
        format!("{}/{}", self.date.format(DATE_FORMAT), self.symbol)
    }

    pub fn validate(&self) -> Result<()> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().chain(std::iter::once(&self.volume)).any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite field at {}", self.location())));
        }
        if prices.iter().any(|&p| p <= 0.0) {
            return Err(Error::Data(format!("non-positive price at {}", self.location())));
        }
        if self.volume < 0.0 {
            return Err(Error::Data(format!("negative volume at {}", self.location())));
        }
        if self.high < self.low {
            return Err(Error::Data(format!(
                "high {} < low {} at {}",
                self.high,
                self.low,
                self.location()
            )));
        }
        if self.high < self.open.max(self.close) {
            return Err(Error::Data(format!(
                "high {} below open/close at {}",
                self.high,
                self.location()
            )));
        }
        if self.low > self.open.min(self.close) {
            return Err(Error::Data(format!(
                "low {} above open/close at {}",
                self.low,
                self.location()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    Open,
    High,
    Low,
    Close,
    Volume,
}

impl Field {
    pub const ALL: [Field; 5] = [Field::Open, Field::High, Field::Low, Field::Close, Field::Volume];

    pub fn name(self) -> &'static str {
        match self {
            Field::Open => "Open",
            Field::High => "High",
            Field::Low => "Low",
            Field::Close => "Close",
            Field::Volume => "Volume",
        }
    }
}

/// Date × symbol OHLCV grid. Immutable once built.
#[derive(Debug, Clone)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    symbols: Vec<String>,
    open: Array2<f64>,
    high: Array2<f64>,
    low: Array2<f64>,
    close: Array2<f64>,
    volume: Array2<f64>,
}

/// Missing cells compare equal to each other.
impl PartialEq for PricePanel {
    fn eq(&self, other: &Self) -> bool {
        fn same(a: &Array2<f64>, b: &Array2<f64>) -> bool {
            a.dim() == b.dim() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()))
        }
        self.dates == other.dates
            && self.symbols == other.symbols
            && Field::ALL.iter().all(|&f| same(self.field(f), other.field(f)))
    }
}

impl PricePanel {
    /// Builds a panel from pre-aligned field matrices (T × S).
    ///
    /// Checks date order, symbol uniqueness and order, the all-or-nothing cell
    /// rule, and the per-bar invariants of every present cell.
    pub fn from_fields(
        dates: Vec<NaiveDate>,
        symbols: Vec<String>,
        open: Array2<f64>,
        high: Array2<f64>,
        low: Array2<f64>,
        close: Array2<f64>,
        volume: Array2<f64>,
    ) -> Result<Self> {
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("dates must be strictly increasing".into()));
        }
        if symbols.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("symbols must be unique and sorted".into()));
        }
        let shape = (dates.len(), symbols.len());
        for (name, m) in [("open", &open), ("high", &high), ("low", &low), ("close", &close), ("volume", &volume)] {
            if m.dim() != shape {
                return Err(Error::Data(format!(
                    "field {name} has shape {:?}, expected {shape:?}",
                    m.dim()
                )));
            }
        }
        let panel = PricePanel { dates, symbols, open, high, low, close, volume };
        for t in 0..shape.0 {
            for s in 0..shape.1 {
                let vals = [panel.open[[t, s]], panel.high[[t, s]], panel.low[[t, s]], panel.close[[t, s]], panel.volume[[t, s]]];
                let nan = vals.iter().filter(|v| v.is_nan()).count();
                if nan == 5 {
                    continue;
                }
                if nan != 0 {
                    return Err(Error::Data(format!(
                        "partially missing cell at {}/{}",
                        panel.dates[t].format(DATE_FORMAT),
                        panel.symbols[s]
                    )));
                }
                panel.bar(t, s).expect("present cell").validate()?;
            }
        }
        Ok(panel)
    }

    /// Aligns bars on the union of their dates. Bar order does not matter.
    pub fn from_bars(bars: Vec<Bar>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for bar in &bars {
            bar.validate()?;
            if !seen.insert((bar.date, bar.symbol.clone())) {
                return Err(Error::Data(format!("duplicate bar for {}", bar.location())));
            }
        }
        let dates: Vec<NaiveDate> = bars.iter().map(|b| b.date).collect::<BTreeSet<_>>().into_iter().collect();
        let symbols: Vec<String> = bars.iter().map(|b| b.symbol.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let date_ix: BTreeMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let sym_ix: BTreeMap<&str, usize> = symbols.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let shape = (dates.len(), symbols.len());
        let mut f: [Array2<f64>; 5] = std::array::from_fn(|_| Array2::from_elem(shape, f64::NAN));
        for bar in &bars {
            let ix = [date_ix[&bar.date], sym_ix[bar.symbol.as_str()]];
            f[0][ix] = bar.open;
            f[1][ix] = bar.high;
            f[2][ix] = bar.low;
            f[3][ix] = bar.close;
            f[4][ix] = bar.volume;
        }
        let [open, high, low, close, volume] = f;
        Ok(PricePanel { dates, symbols, open, high, low, close, volume })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.symbols.len()
    }

    pub fn field(&self, field: Field) -> &Array2<f64> {
        match field {
            Field::Open => &self.open,
            Field::High => &self.high,
            Field::Low => &self.low,
            Field::Close => &self.close,
            Field::Volume => &self.volume,
        }
    }

    pub fn close(&self) -> &Array2<f64> {
        &self.close
    }

    pub fn is_present(&self, t: usize, s: usize) -> bool {
        !self.close[[t, s]].is_nan()
    }

    pub fn bar(&self, t: usize, s: usize) -> Option<Bar> {
        if !self.is_present(t, s) {
            return None;
        }
        Some(Bar {
            date: self.dates[t],
            symbol: self.symbols[s].clone(),
            open: self.open[[t, s]],
            high: self.high[[t, s]],
            low: self.low[[t, s]],
            close: self.close[[t, s]],
            volume: self.volume[[t, s]],
        })
    }

    pub fn bars(&self) -> impl Iterator<Item = Bar> + '_ {
        (0..self.n_dates()).flat_map(move |t| (0..self.n_symbols()).filter_map(move |s| self.bar(t, s)))
    }

    /// Truncated copy holding the first `n` dates.
    pub fn head(&self, n: usize) -> PricePanel {
        let n = n.min(self.n_dates());
        let cut = |m: &Array2<f64>| m.slice(ndarray::s![..n, ..]).to_owned();
        PricePanel {
            dates: self.dates[..n].to_vec(),
            symbols: self.symbols.clone(),
            open: cut(&self.open),
            high: cut(&self.high),
            low: cut(&self.low),
            close: cut(&self.close),
            volume: cut(&self.volume),
        }
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn symbol_index(&self, symbol: &str) -> Option<usize> {
        self.symbols.binary_search_by(|s| s.as_str().cmp(symbol)).ok()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_to_io(path, e))?;
        w.write_record(CSV_HEADER)?;
        for bar in self.bars() {
            w.write_record([
                bar.date.format(DATE_FORMAT).to_string(),
                bar.symbol.clone(),
                bar.open.to_string(),
                bar.high.to_string(),
                bar.low.to_string(),
                bar.close.to_string(),
                bar.volume.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub(crate) fn csv_to_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    date: String,
    symbol: String,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    volume: f64,
}

/// Loads a panel from `date,symbol,open,high,low,close,volume` CSV.
pub fn load_csv(path: impl AsRef<Path>) -> Result<PricePanel> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_to_io(path, e))?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Data(format!(
            "{}: header must be `{}`, found `{}`",
            path.display(),
            CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut bars = Vec::new();
    for (i, row) in reader.deserialize::<CsvRow>().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| Error::Data(format!("{}: malformed row at line {line}: {e}", path.display())))?;
        let date = NaiveDate::parse_from_str(&row.date, DATE_FORMAT)
            .map_err(|e| Error::Data(format!("{}: bad date `{}` at line {line}: {e}", path.display(), row.date)))?;
        if row.symbol.is_empty() {
            return Err(Error::Data(format!("{}: empty symbol at line {line}", path.display())));
        }
        bars.push(Bar {
            date,
            symbol: row.symbol,
            open: row.open,
            high: row.high,
            low: row.low,
            close: row.close,
            volume: row.volume,
        });
    }
    PricePanel::from_bars(bars)
}
