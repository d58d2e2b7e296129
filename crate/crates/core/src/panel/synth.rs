//! Seeded synthetic panels.
//!
//! Log closes follow a random walk with a common market shock and an
//! idiosyncratic shock per symbol. Opens gap from the previous close, the
//! high/low envelope is drawn around the open-close body, and volume is
//! log-normal around a per-symbol level.
//!
//! With a [`PlantedSignal`], each day's signal value (a polynomial in the
//! per-date cross-sectional z-scores of named factors) is spread evenly as
//! extra drift over the next `horizon` days, so the close `horizon` days
//! ahead carries the full signal. The idiosyncratic shock is then scaled so
//! its `horizon`-day sum has the planted noise standard deviation.
//!
//! Draw order per day is fixed: one market normal, then per symbol (in
//! symbol order) idiosyncratic, gap, high, low and volume normals. See
//! [`crate::rng`] for the stream definition.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use ndarray::{s, Array2};

use super::PricePanel;
use crate::dsl::{FactorSet, IndicatorParams};
use crate::indicators::cross_zscore;
use crate::rng;
use crate::{Error, Result};

pub const MIN_DAYS: usize = 250;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTerm {
    pub coef: f64,
    /// Factor names whose z-scores are multiplied together.
    pub factors: Vec<String>,
}

impl PlantedTerm {
    /// Parses `coef * name * name ...`; the coefficient may be omitted.
    pub fn parse(text: &str) -> Result<Self> {
        let mut parts = text.split('*').map(str::trim).peekable();
        let coef = match parts.peek().map(|p| p.parse::<f64>()) {
            Some(Ok(c)) => {
                parts.next();
                c
            }
            _ => 1.0,
        };
        let factors: Vec<String> = parts.map(str::to_owned).collect();
        if factors.is_empty() || factors.iter().any(|f| f.is_empty()) {
            return Err(Error::Config(format!("bad planted term `{text}`")));
        }
        Ok(PlantedTerm { coef, factors })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSignal {
    pub terms: Vec<PlantedTerm>,
    /// Standard deviation of the non-signal part of the forward return.
    pub noise: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_symbols: usize,
    pub n_days: usize,
    pub seed: u64,
    pub planted: Option<PlantedSignal>,
    pub start_date: NaiveDate,
    /// Daily volatility of the shock shared by all symbols.
    pub market_vol: f64,
    /// Daily idiosyncratic volatility when no signal is planted.
    pub idio_vol: f64,
}

impl SyntheticSpec {
    pub fn new(n_symbols: usize, n_days: usize, seed: u64) -> Self {
        SyntheticSpec {
            n_symbols,
            n_days,
            seed,
            planted: None,
            start_date: NaiveDate::from_ymd_opt(2020, 12, 1).expect("valid date"),
            market_vol: 0.01,
            idio_vol: 0.02,
        }
    }

    pub fn with_planted(mut self, planted: PlantedSignal) -> Self {
        self.planted = Some(planted);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_symbols < 2 {
            return Err(Error::Config(format!("n_symbols = {} is below the minimum of 2", self.n_symbols)));
        }
        if self.n_days < MIN_DAYS {
            return Err(Error::Config(format!(
                "n_days = {} is below the {MIN_DAYS}-day minimum",
                self.n_days
            )));
        }
        if !(self.market_vol >= 0.0 && self.idio_vol >= 0.0) {
            return Err(Error::Config("volatilities must be non-negative".into()));
        }
        if let Some(p) = &self.planted {
            if p.terms.is_empty() || p.horizon == 0 || !(p.noise >= 0.0) {
                return Err(Error::Config("planted signal needs terms, horizon ≥ 1 and noise ≥ 0".into()));
            }
        }
        Ok(())
    }
}

/// Consecutive weekdays starting at the first weekday on or after `start`.
pub(crate) fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// Generates a panel, resolving planted factor names against the bundled
/// factor file with default indicator parameters.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<PricePanel> {
    generate_synthetic_with(spec, &FactorSet::bundled(), &IndicatorParams::default())
}

pub fn generate_synthetic_with(spec: &SyntheticSpec, factors: &FactorSet, params: &IndicatorParams) -> Result<PricePanel> {
    spec.validate()?;
    let (n_days, n_sym) = (spec.n_days, spec.n_symbols);
    let dates = business_days(spec.start_date, n_days);
    let width = (n_sym - 1).to_string().len().max(3);
    let symbols: Vec<String> = (0..n_sym).map(|i| format!("S{i:0width$}")).collect();

    let planted = spec.planted.as_ref();
    let needed: Vec<&str> = match planted {
        Some(p) => {
            let mut names: Vec<&str> = p.terms.iter().flat_map(|t| t.factors.iter().map(String::as_str)).collect();
            names.sort_unstable();
            names.dedup();
            for n in &names {
                if factors.get(n).is_none() {
                    return Err(Error::Config(format!("planted signal references unknown factor `{n}`")));
                }
            }
            names
        }
        None => Vec::new(),
    };
    let idio_vol = match planted {
        Some(p) => p.noise / (p.horizon as f64).sqrt(),
        None => spec.idio_vol,
    };
    let horizon = planted.map_or(1, |p| p.horizon);

    let mut rng = rng::seeded(spec.seed);
    let mut base_price = Vec::with_capacity(n_sym);
    let mut base_volume = Vec::with_capacity(n_sym);
    for _ in 0..n_sym {
        base_price.push(20.0 * 10f64.powf(rng::uniform(&mut rng)));
        base_volume.push(1.0e6 * (0.5 * rng::normal(&mut rng)).exp());
    }

    let shape = (n_days, n_sym);
    let mut open = Array2::from_elem(shape, f64::NAN);
    let mut high = Array2::from_elem(shape, f64::NAN);
    let mut low = Array2::from_elem(shape, f64::NAN);
    let mut close = Array2::from_elem(shape, f64::NAN);
    let mut volume = Array2::from_elem(shape, f64::NAN);
    // signal[t][s]: planted value computed from data up to and including t
    let mut signal = Array2::<f64>::zeros(shape);

    const GAP_VOL: f64 = 0.005;
    const RANGE_VOL: f64 = 0.01;
    const VOLUME_VOL: f64 = 0.3;

    for t in 0..n_days {
        let market = spec.market_vol * rng::normal(&mut rng);
        for s in 0..n_sym {
            let idio = idio_vol * rng::normal(&mut rng);
            let gap = GAP_VOL * rng::normal(&mut rng);
            let up = RANGE_VOL * rng::normal(&mut rng).abs();
            let down = RANGE_VOL * rng::normal(&mut rng).abs();
            let vol_shock = VOLUME_VOL * rng::normal(&mut rng);

            let prev = if t == 0 { base_price[s] } else { close[[t - 1, s]] };
            let drift: f64 = (1..=horizon)
                .filter(|&j| j <= t)
                .map(|j| signal[[t - j, s]])
                .sum::<f64>()
                / horizon as f64;
            let c = if t == 0 { prev } else { prev * (drift + market + idio).exp() };
            let o = prev * gap.exp();
            open[[t, s]] = o;
            close[[t, s]] = c;
            high[[t, s]] = o.max(c) * up.exp();
            low[[t, s]] = o.min(c) * (-down).exp();
            volume[[t, s]] = (base_volume[s] * vol_shock.exp()).round();
        }

        if let Some(p) = planted {
            let prefix = PricePanel {
                dates: dates[..=t].to_vec(),
                symbols: symbols.clone(),
                open: open.slice(s![..=t, ..]).to_owned(),
                high: high.slice(s![..=t, ..]).to_owned(),
                low: low.slice(s![..=t, ..]).to_owned(),
                close: close.slice(s![..=t, ..]).to_owned(),
                volume: volume.slice(s![..=t, ..]).to_owned(),
            };
            let values = factors.evaluate_last_row(&needed, &prefix, params)?;
            let z: Vec<Vec<f64>> = values
                .iter()
                .map(|row| cross_zscore(row).into_iter().map(|v| if v.is_finite() { v } else { 0.0 }).collect())
                .collect();
            for s in 0..n_sym {
                signal[[t, s]] = p
                    .terms
                    .iter()
                    .map(|term| {
                        term.coef
                            * term
                                .factors
                                .iter()
                                .map(|f| z[needed.binary_search(&f.as_str()).expect("resolved")][s])
                                .product::<f64>()
                    })
                    .sum();
            }
        }
    }

    PricePanel::from_fields(dates, symbols, open, high, low, close, volume)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SyntheticSpec::new(5, 260, 99);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.close().iter().zip(b.close().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn too_few_days_rejected() {
        let err = generate_synthetic(&SyntheticSpec::new(5, 100, 1)).unwrap_err();
        assert!(err.to_string().contains("250"), "{err}");
        assert!(generate_synthetic(&SyntheticSpec::new(1, 300, 1)).is_err());
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_synthetic(&SyntheticSpec::new(3, 250, 1)).unwrap();
        let b = generate_synthetic(&SyntheticSpec::new(3, 250, 2)).unwrap();
        assert_ne!(a.close(), b.close());
    }

    #[test]
    fn calendar_skips_weekends() {
        let days = business_days(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), 3);
        assert_eq!(
            days,
            vec![
                NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(),
                NaiveDate::from_ymd_opt(2024, 1, 8).unwrap(),
                NaiveDate::from_ymd_opt(2024, 1, 9).unwrap(),
            ]
        );
    }

    #[test]
    fn planted_term_parsing() {
        let t = PlantedTerm::parse("0.02 * alpha_a * alpha_b").unwrap();
        assert_eq!(t.coef, 0.02);
        assert_eq!(t.factors, vec!["alpha_a", "alpha_b"]);
        assert_eq!(PlantedTerm::parse("alpha_a").unwrap().coef, 1.0);
        assert!(PlantedTerm::parse("0.5").is_err());
    }

    #[test]
    fn unknown_planted_factor_rejected() {
        let spec = SyntheticSpec::new(4, 250, 1).with_planted(PlantedSignal {
            terms: vec![PlantedTerm::parse("0.01 * alpha_nope").unwrap()],
            noise: 0.02,
            horizon: 5,
        });
        assert!(generate_synthetic(&spec).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn generated_bars_are_valid(seed in any::<u64>(), n_sym in 2usize..6) {
            let panel = generate_synthetic(&SyntheticSpec::new(n_sym, 250, seed)).unwrap();
            for bar in panel.bars() {
                prop_assert!(bar.validate().is_ok());
            }
            prop_assert_eq!(panel.bars().count(), 250 * n_sym);
        }
    }
}
