//! Run configuration: a TOML file with one table per stage.
//!
//! Every key is optional and unknown keys are rejected. `ALPHAFORGE_SEED`
//! in the environment replaces `seed`.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionConfig, GridSpec};
use crate::dataset::DatasetConfig;
use crate::dsl::IndicatorParams;
use crate::evalkit::EvalConfig;
use crate::indicators::MacdParams;
use crate::models::{Init, ModelKind, SignalSource, TrainConfig};
use crate::panel::{PlantedSignal, PlantedTerm, SyntheticSpec, DATE_FORMAT};
use crate::{Error, Result};

pub const SEED_ENV: &str = "ALPHAFORGE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub panel: PanelSection,
    pub factors: FactorSection,
    pub indicators: IndicatorSection,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub attribution: AttributionSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelSection {
    /// `synthetic`, or a path to a long-format OHLCV CSV.
    pub source: String,
    pub n_symbols: usize,
    pub n_days: usize,
    pub start_date: String,
    pub market_vol: f64,
    pub idio_vol: f64,
    /// Terms like `0.02 * alpha_a * alpha_b`; empty for a pure random walk.
    pub planted: Vec<String>,
    pub planted_noise: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorSection {
    /// Empty for the bundled file.
    pub path: String,
    /// Names or aliases to keep; empty keeps all.
    pub select: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndicatorSection {
    pub rsi_window: usize,
    pub macd_fast: usize,
    pub macd_slow: usize,
    pub macd_signal: usize,
    pub vwap_window: usize,
    pub boll_window: usize,
    pub boll_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub cutoff_date: String,
    pub horizon: usize,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: String,
    pub signal: String,
    pub init: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
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
    pub cls_weight: f64,
    pub svr_c: f64,
    pub svr_epsilon: f64,
    pub svr_iters: usize,
    pub svr_step: f64,
    pub svr_scale_targets: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub k: usize,
    pub holding: usize,
    pub annualization: f64,
    /// Which samples get scored: `validation`, `train` or `all`.
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionSection {
    pub n_perms: usize,
    pub n_samples: usize,
    pub grid: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            panel: PanelSection::default(),
            factors: FactorSection::default(),
            indicators: IndicatorSection::default(),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            attribution: AttributionSection::default(),
        }
    }
}

impl Default for PanelSection {
    fn default() -> Self {
        let s = SyntheticSpec::new(100, 750, 0);
        PanelSection {
            source: "synthetic".into(),
            n_symbols: s.n_symbols,
            n_days: s.n_days,
            start_date: s.start_date.format(DATE_FORMAT).to_string(),
            market_vol: s.market_vol,
            idio_vol: s.idio_vol,
            planted: vec!["0.02 * alpha_momentum_5d_min_rank * alpha_volume_spike_ratio".into()],
            planted_noise: 0.05,
        }
    }
}

impl Default for IndicatorSection {
    fn default() -> Self {
        let p = IndicatorParams::default();
        IndicatorSection {
            rsi_window: p.rsi_window,
            macd_fast: p.macd.fast,
            macd_slow: p.macd.slow,
            macd_signal: p.macd.signal,
            vwap_window: p.vwap_window,
            boll_window: p.boll_window,
            boll_k: p.boll_k,
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        DatasetSection { cutoff_date: d.cutoff_date.format(DATE_FORMAT).to_string(), horizon: d.horizon, clip_lo: d.clip_lo, clip_hi: d.clip_hi }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { kind: "mlp".into(), signal: "reg".into(), init: "xavier".into() }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            weight_decay: t.weight_decay,
            decoupled_decay: t.decoupled_decay,
            clip_norm: t.clip_norm,
            scheduler_factor: t.scheduler_factor,
            scheduler_patience: t.scheduler_patience,
            scheduler_delta: t.scheduler_delta,
            early_stop_patience: t.early_stop_patience,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            dropout: t.dropout,
            cls_weight: t.cls_weight,
            svr_c: t.svr_c,
            svr_epsilon: t.svr_epsilon,
            svr_iters: t.svr_iters,
            svr_step: t.svr_step,
            svr_scale_targets: t.svr_scale_targets,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalSection { k: e.k, holding: e.holding, annualization: e.annualization, split: "validation".into() }
    }
}

impl Default for AttributionSection {
    fn default() -> Self {
        let a = AttributionConfig::default();
        AttributionSection { n_perms: a.n_perms, n_samples: a.n_samples, grid: GridSpec::Auto.to_string() }
    }
}

fn parse_date(field: &str, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, DATE_FORMAT).map_err(|_| Error::Config(format!("{field}: `{s}` is not a YYYY-MM-DD date")))
}

/// Which dataset rows the scorer emits signals for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSplit {
    Train,
    Validation,
    All,
}

impl std::str::FromStr for ScoreSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(ScoreSplit::Train),
            "validation" => Ok(ScoreSplit::Validation),
            "all" => Ok(ScoreSplit::All),
            _ => Err(Error::Config(format!("unknown split `{s}` (expected train, validation or all)"))),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_owned()))?;
        Ok(cfg)
    }

    /// Reads, applies `ALPHAFORGE_SEED` and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every knob without touching any data.
    pub fn validate(&self) -> Result<()> {
        self.dataset_config()?;
        self.train_config()?;
        self.eval_config()?;
        self.attribution_config()?;
        self.indicator_params()?;
        self.grid()?;
        self.score_split()?;
        if self.panel.source == "synthetic" {
            self.synthetic_spec()?.validate()?;
        }
        Ok(())
    }

    pub fn is_synthetic(&self) -> bool {
        self.panel.source == "synthetic"
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let p = &self.panel;
        let mut spec = SyntheticSpec::new(p.n_symbols, p.n_days, self.seed);
        spec.start_date = parse_date("panel.start_date", &p.start_date)?;
        spec.market_vol = p.market_vol;
        spec.idio_vol = p.idio_vol;
        if !p.planted.is_empty() {
            let terms = p.planted.iter().map(|t| PlantedTerm::parse(t)).collect::<Result<Vec<_>>>()?;
            spec.planted = Some(PlantedSignal { terms, noise: p.planted_noise, horizon: self.dataset.horizon });
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn indicator_params(&self) -> Result<IndicatorParams> {
        let i = &self.indicators;
        if [i.rsi_window, i.macd_fast, i.macd_slow, i.macd_signal, i.vwap_window, i.boll_window].contains(&0) {
            return Err(Error::Config("indicator windows must be at least 1".into()));
        }
        if i.macd_fast >= i.macd_slow {
            return Err(Error::Config(format!("macd_fast ({}) must be below macd_slow ({})", i.macd_fast, i.macd_slow)));
        }
        Ok(IndicatorParams {
            rsi_window: i.rsi_window,
            macd: MacdParams { fast: i.macd_fast, slow: i.macd_slow, signal: i.macd_signal },
            vwap_window: i.vwap_window,
            boll_window: i.boll_window,
            boll_k: i.boll_k,
        })
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig> {
        let d = &self.dataset;
        if !(0.0..=1.0).contains(&d.clip_lo) || !(0.0..=1.0).contains(&d.clip_hi) || d.clip_lo >= d.clip_hi {
            return Err(Error::Config(format!(
                "dataset.clip_lo ({}) must be below dataset.clip_hi ({}), both in [0, 1]",
                d.clip_lo, d.clip_hi
            )));
        }
        if d.horizon == 0 {
            return Err(Error::Config("dataset.horizon must be at least 1".into()));
        }
        Ok(DatasetConfig { cutoff_date: parse_date("dataset.cutoff_date", &d.cutoff_date)?, horizon: d.horizon, clip_lo: d.clip_lo, clip_hi: d.clip_hi })
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        self.model.kind.parse()
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let init = match self.model.init.as_str() {
            "xavier" => Init::Xavier,
            "zeros" => Init::Zeros,
            other => return Err(Error::Config(format!("unknown init `{other}` (expected xavier or zeros)"))),
        };
        let signal: SignalSource = self.model.signal.parse()?;
        self.model_kind()?;
        let positive = [("lr", t.lr), ("clip_norm", t.clip_norm), ("svr_c", t.svr_c), ("svr_step", t.svr_step)];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("train.{k} must be positive, got {v}")));
        }
        if !(0.0..1.0).contains(&t.dropout) {
            return Err(Error::Config(format!("train.dropout must be in [0, 1), got {}", t.dropout)));
        }
        if !(t.scheduler_factor > 0.0 && t.scheduler_factor <= 1.0) {
            return Err(Error::Config(format!("train.scheduler_factor must be in (0, 1], got {}", t.scheduler_factor)));
        }
        if t.batch_size == 0 || t.max_epochs == 0 {
            return Err(Error::Config("train.batch_size and train.max_epochs must be at least 1".into()));
        }
        if t.weight_decay < 0.0 || t.cls_weight < 0.0 || t.svr_epsilon < 0.0 {
            return Err(Error::Config("weight_decay, cls_weight and svr_epsilon must be non-negative".into()));
        }
        Ok(TrainConfig {
            lr: t.lr,
            weight_decay: t.weight_decay,
            decoupled_decay: t.decoupled_decay,
            clip_norm: t.clip_norm,
            scheduler_factor: t.scheduler_factor,
            scheduler_patience: t.scheduler_patience,
            scheduler_delta: t.scheduler_delta,
            early_stop_patience: t.early_stop_patience,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            dropout: t.dropout,
            cls_weight: t.cls_weight,
            seed: self.seed,
            init,
            signal,
            svr_c: t.svr_c,
            svr_epsilon: t.svr_epsilon,
            svr_iters: t.svr_iters,
            svr_step: t.svr_step,
            svr_scale_targets: t.svr_scale_targets,
        })
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        let e = &self.eval;
        if e.k == 0 || e.holding == 0 {
            return Err(Error::Config("eval.k and eval.holding must be at least 1".into()));
        }
        if !(e.annualization > 0.0) {
            return Err(Error::Config("eval.annualization must be positive".into()));
        }
        Ok(EvalConfig { k: e.k, holding: e.holding, horizon: self.dataset.horizon, annualization: e.annualization })
    }

    pub fn score_split(&self) -> Result<ScoreSplit> {
        self.eval.split.parse()
    }

    pub fn attribution_config(&self) -> Result<AttributionConfig> {
        let a = &self.attribution;
        if a.n_perms == 0 || a.n_samples == 0 {
            return Err(Error::Config("attribution.n_perms and attribution.n_samples must be at least 1".into()));
        }
        Ok(AttributionConfig { n_perms: a.n_perms, n_samples: a.n_samples, seed: self.seed })
    }

    pub fn grid(&self) -> Result<GridSpec> {
        self.attribution.grid.parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::TRADING_DAYS;

    #[test]
    fn defaults_table() {
        let c = RunConfig::default();
        let t = c.train_config().unwrap();
        assert_eq!(t.lr, 5e-4);
        assert_eq!(t.weight_decay, 1e-3);
        assert_eq!(t.clip_norm, 0.5);
        assert_eq!(t.scheduler_factor, 0.7);
        assert_eq!(t.scheduler_patience, 5);
        assert_eq!(t.early_stop_patience, 15);
        assert_eq!(t.cls_weight, 0.5);
        let d = c.dataset_config().unwrap();
        assert_eq!((d.clip_lo, d.clip_hi), (0.05, 0.95));
        assert_eq!(d.horizon, 5);
        assert_eq!(d.cutoff_date, NaiveDate::from_ymd_opt(2023, 1, 1).unwrap());
        assert_eq!(c.eval_config().unwrap().k, 5);
        assert_eq!(c.eval_config().unwrap().annualization, TRADING_DAYS);
        assert_eq!(c.attribution_config().unwrap().n_perms, 2048);
        c.validate().unwrap();
    }

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
        let back = RunConfig::from_toml(&RunConfig::default().to_toml()).unwrap();
        assert_eq!(back, RunConfig::default());
    }

    #[test]
    fn unknown_key_names_the_key() {
        let err = RunConfig::from_toml("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn inverted_clip_quantiles_fail_validation() {
        let c = RunConfig::from_toml("[dataset]\nclip_lo = 0.5\nclip_hi = 0.4\n").unwrap();
        let err = c.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("clip_lo"));
    }
}
