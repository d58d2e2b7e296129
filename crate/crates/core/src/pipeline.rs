//! Stage functions shared by the CLI and the run manifest.
//!
//! A full run writes, under `out_dir`:
//!
//! | file | stage |
//! |---|---|
//! | `panel.csv` | panel |
//! | `factors.csv` | factors |
//! | `dataset.csv`, `dataset.csv.meta` | dataset |
//! | `model.ckpt`, `history.csv` | train |
//! | `signals.csv` | score |
//! | `ic_series.csv`, `cumrets.csv`, `metrics.json` | evaluate |
//! | `attribution.csv` | attribute |
//! | `run_manifest.txt` | every command |

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::attribution::{attribute, AttributionResult};
use crate::config::{RunConfig, ScoreSplit};
use crate::dataset::{build_dataset, TrainingDataset};
use crate::dsl::{evaluate_all, FactorSet, FeatureFrame};
use crate::evalkit::{evaluate_signals, Evaluation, SignalFrame};
use crate::models::{train, Checkpoint, EpochRecord};
use crate::panel::{generate_synthetic_with, load_csv, PricePanel};
use crate::panel::csv_to_io;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "run_manifest.txt";
pub const MANIFEST_VERSION: u32 = 1;

pub fn factor_set(cfg: &RunConfig) -> Result<FactorSet> {
    let mut set = match (cfg.factors.path.as_str(), cfg.factors.select.is_empty()) {
        ("", true) => FactorSet::bundled(),
        ("", false) => FactorSet::bundled_with_extras(),
        (p, _) => FactorSet::load(p)?,
    };
    if !cfg.factors.select.is_empty() {
        set.select(&cfg.factors.select)?;
    }
    Ok(set)
}

/// Synthesizes or loads the panel named by the config.
pub fn load_panel(cfg: &RunConfig) -> Result<PricePanel> {
    if cfg.is_synthetic() {
        generate_synthetic_with(&cfg.synthetic_spec()?, &FactorSet::bundled_with_extras(), &cfg.indicator_params()?)
    } else {
        load_csv(&cfg.panel.source)
    }
}

pub fn compute_factors(cfg: &RunConfig, panel: &PricePanel) -> Result<FeatureFrame> {
    let (frame, report) = evaluate_all(&factor_set(cfg)?, panel, &cfg.indicator_params()?)?;
    for (name, n) in &report.zero_divisions {
        log::warn!("{name}: {n} cells divided by zero");
    }
    Ok(frame)
}

pub fn build(cfg: &RunConfig, panel: &PricePanel, frame: &FeatureFrame) -> Result<TrainingDataset> {
    build_dataset(frame, panel, &cfg.dataset_config()?)
}

pub fn train_model(cfg: &RunConfig, ds: &TrainingDataset) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    train(cfg.model_kind()?, ds, &cfg.train_config()?)
}

pub fn score(ckpt: &Checkpoint, ds: &TrainingDataset, split: ScoreSplit) -> Result<SignalFrame> {
    let view = match split {
        ScoreSplit::Train => ds.train(),
        ScoreSplit::Validation => ds.validation(),
        ScoreSplit::All => ds.all(),
    };
    ckpt.score(ds, &view)
}

pub fn evaluate(cfg: &RunConfig, signals: &SignalFrame, panel: &PricePanel) -> Result<Evaluation> {
    evaluate_signals(signals, panel, &cfg.eval_config()?)
}

/// Attributes validation samples against the validation feature mean.
pub fn attribute_model(cfg: &RunConfig, ckpt: &Checkpoint, ds: &TrainingDataset) -> Result<AttributionResult> {
    let val = ds.validation();
    attribute(ckpt, ds, &val, &val, &cfg.attribution_config()?)
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_to_io(path, e))?;
    w.write_record(["epoch", "train_loss", "val_rmse", "lr"])?;
    for h in history {
        w.write_record([h.epoch.to_string(), h.train_loss.to_string(), h.val_rmse.to_string(), h.lr.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Plain-text `key = value` record of a run: versions, seed, the resolved
/// config (flattened under `config.`) and SHA-256 of every input and
/// output. No timestamps, so identical runs give identical manifests.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    pub entries: Vec<(String, String)>,
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                flatten(&format!("{prefix}.{k}"), v, out);
            }
        }
        other => out.push((prefix.to_owned(), other.to_string())),
    }
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        let mut m = RunManifest::default();
        m.set("manifest_version", MANIFEST_VERSION.to_string());
        m.set("alphaforge_version", env!("CARGO_PKG_VERSION"));
        m.set("command", command);
        m.set("seed", seed.to_string());
        m
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_owned(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn with_config(mut self, cfg: &RunConfig) -> Self {
        let text = cfg.to_toml();
        self.set("config_sha256", hex::encode(Sha256::digest(text.as_bytes())));
        let value: toml::Value = toml::from_str(&text).expect("serialized config parses");
        let mut flat = Vec::new();
        flatten("config", &value, &mut flat);
        for (k, v) in flat {
            self.set(&k, v);
        }
        self
    }

    fn record(&mut self, kind: &str, path: &Path) -> Result<()> {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.set(&format!("{kind}.{name}.path"), path.display().to_string());
        self.set(&format!("{kind}.{name}.sha256"), sha256_file(path)?);
        Ok(())
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.record("input", path)
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.record("output", path)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = RunManifest::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once(" = ").ok_or_else(|| Error::Data(format!("manifest line {}: expected `key = value`", i + 1)))?;
            m.entries.push((k.to_owned(), v.to_owned()));
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        RunManifest::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Rebuilds the run config from the `config.` entries.
    pub fn config(&self) -> Result<RunConfig> {
        let mut root = String::new();
        let mut sections: Vec<(String, String)> = Vec::new();
        for (k, v) in &self.entries {
            let Some(rest) = k.strip_prefix("config.") else { continue };
            match rest.split_once('.') {
                None => root.push_str(&format!("{rest} = {v}\n")),
                Some((sec, key)) => match sections.iter_mut().find(|(s, _)| s == sec) {
                    Some((_, body)) => body.push_str(&format!("{key} = {v}\n")),
                    None => sections.push((sec.to_owned(), format!("{key} = {v}\n"))),
                },
            }
        }
        for (sec, body) in sections {
            root.push_str(&format!("[{sec}]\n{body}"));
        }
        RunConfig::from_toml(&root)
    }
}

/// Everything a full run produced, kept for callers that inspect results.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub dataset: TrainingDataset,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub signals: SignalFrame,
    pub evaluation: Evaluation,
    pub attribution: AttributionResult,
    pub manifest: RunManifest,
}

/// Runs every stage and writes all artifacts plus the manifest to
/// `cfg.out_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let n_factors = factor_set(cfg)?.selected_names().len();
    grid.shape(n_factors)?;
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut manifest = RunManifest::new("pipeline", cfg.seed).with_config(cfg);
    let out = |m: &mut RunManifest, name: &str| -> Result<()> { m.add_output(&dir.join(name)) };

    let panel = load_panel(cfg)?;
    panel.write_csv(dir.join("panel.csv"))?;
    out(&mut manifest, "panel.csv")?;
    log::info!("panel: {} dates x {} symbols", panel.n_dates(), panel.n_symbols());

    let frame = compute_factors(cfg, &panel)?;
    frame.write_csv(dir.join("factors.csv"))?;
    out(&mut manifest, "factors.csv")?;

    let ds = build(cfg, &panel, &frame)?;
    ds.write_csv(dir.join("dataset.csv"))?;
    out(&mut manifest, "dataset.csv")?;
    out(&mut manifest, "dataset.csv.meta")?;
    log::info!("dataset: {} train, {} validation samples", ds.n_train, ds.n_validation());

    let (checkpoint, history) = train_model(cfg, &ds)?;
    checkpoint.save(dir.join("model.ckpt"))?;
    write_history(dir.join("history.csv"), &history)?;
    out(&mut manifest, "model.ckpt")?;
    out(&mut manifest, "history.csv")?;

    let signals = score(&checkpoint, &ds, cfg.score_split()?)?;
    signals.write_csv(dir.join("signals.csv"))?;
    out(&mut manifest, "signals.csv")?;

    let evaluation = evaluate(cfg, &signals, &panel)?;
    evaluation.write(&dir)?;
    for name in ["ic_series.csv", "cumrets.csv", "metrics.json"] {
        out(&mut manifest, name)?;
    }
    log::info!("ic mean {:.4}, long-short sharpe {:?}", evaluation.metrics.ic_mean, evaluation.metrics.sharpe.long_short.sharpe);

    let attribution = attribute_model(cfg, &checkpoint, &ds)?;
    attribution.write_grid_csv(dir.join("attribution.csv"), grid)?;
    out(&mut manifest, "attribution.csv")?;

    manifest.write(&dir)?;
    Ok(PipelineOutput { dataset: ds, checkpoint, history, signals, evaluation, attribution, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_config() {
        let mut cfg = RunConfig { seed: 7, ..Default::default() };
        cfg.train.lr = 1e-3;
        cfg.factors.select = vec!["momentum5_rank".into(), "alpha_rsi_vs_50".into()];
        let m = RunManifest::new("pipeline", cfg.seed).with_config(&cfg);
        let back = RunManifest::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.config().unwrap(), cfg);
        assert_eq!(back.get("seed"), Some("7"));
    }
}
