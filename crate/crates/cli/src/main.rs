use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alphaforge::attribution::GridSpec;
use alphaforge::config::{RunConfig, ScoreSplit};
use alphaforge::dataset::TrainingDataset;
use alphaforge::evalkit::SignalFrame;
use alphaforge::models::{Checkpoint, ModelKind};
use alphaforge::panel::{load_csv, PricePanel};
use alphaforge::pipeline::{self, RunManifest, MANIFEST_FILE};
use alphaforge::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Behavioral alpha factors, small neural models and signal evaluation.
#[derive(Parser)]
#[command(name = "alphaforge", version)]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run config; unset keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => {
                let mut cfg = RunConfig::default();
                cfg.apply_env()?;
                Ok(cfg)
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic OHLCV panel.
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        symbols: Option<usize>,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Planted term such as `0.02 * alpha_a * alpha_b`; repeatable.
        #[arg(long)]
        planted: Vec<String>,
        /// Drop the planted signal from the config.
        #[arg(long, conflicts_with = "planted")]
        no_planted: bool,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value = "panel.csv")]
        out: PathBuf,
    },
    /// Evaluate factor formulas over a panel, or list them.
    Factors {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "panel.csv")]
        panel: PathBuf,
        /// Factor file; defaults to the bundled one.
        #[arg(long)]
        factors: Option<PathBuf>,
        /// Comma-separated names or aliases to keep.
        #[arg(long, value_delimiter = ',')]
        select: Vec<String>,
        /// Print the factor definitions and exit.
        #[arg(long)]
        list: bool,
        #[arg(long, default_value = "factors.csv")]
        out: PathBuf,
    },
    /// Build the standardized training dataset.
    Dataset {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "panel.csv")]
        panel: PathBuf,
        /// First validation date, YYYY-MM-DD.
        #[arg(long)]
        cutoff: Option<String>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        clip_lo: Option<f64>,
        #[arg(long)]
        clip_hi: Option<f64>,
        #[arg(long, default_value = "dataset.csv")]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "dataset.csv")]
        dataset: PathBuf,
        /// mlp, cnn or svr.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
        /// Per-epoch loss curve.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score dataset rows with a checkpoint.
    Score {
        #[arg(long, default_value = "model.ckpt")]
        ckpt: PathBuf,
        #[arg(long, default_value = "dataset.csv")]
        dataset: PathBuf,
        /// validation, train or all.
        #[arg(long, default_value = "validation")]
        split: String,
        #[arg(long, default_value = "signals.csv")]
        out: PathBuf,
    },
    /// IC statistics, Sharpe ratios and the long-short backtest.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "signals.csv")]
        signals: PathBuf,
        #[arg(long, default_value = "panel.csv")]
        panel: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// Days each book is held; 1 rebalances daily.
        #[arg(long)]
        holding: Option<usize>,
        /// Forward-return horizon for the IC.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Shapley attribution of the regression output per factor.
    Attribute {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "model.ckpt")]
        ckpt: PathBuf,
        #[arg(long, default_value = "dataset.csv")]
        dataset: PathBuf,
        #[arg(long)]
        n_perms: Option<usize>,
        /// Validation rows to attribute.
        #[arg(long)]
        samples: Option<usize>,
        /// `auto` or ROWSxCOLS.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "attribution.csv")]
        out: PathBuf,
    },
    /// Run every stage from one config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn sidecar(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".");
    p.push(MANIFEST_FILE);
    PathBuf::from(p)
}

fn write_manifest(m: &RunManifest, path: &Path) -> Result<()> {
    std::fs::write(path, m.to_text()).map_err(|e| Error::Io { path: path.to_owned(), source: e })
}

fn read_panel(path: &Path) -> Result<PricePanel> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_owned()));
    }
    load_csv(path)
}

fn read_dataset(path: &Path) -> Result<TrainingDataset> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_owned()));
    }
    TrainingDataset::read_csv(path)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_owned(), source: e })
        }
        _ => Ok(()),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, symbols, days, seed, planted, no_planted, noise, out } => {
            let mut cfg = config.load()?;
            cfg.panel.source = "synthetic".into();
            cfg.panel.n_symbols = symbols.unwrap_or(cfg.panel.n_symbols);
            cfg.panel.n_days = days.unwrap_or(cfg.panel.n_days);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.panel.planted_noise = noise.unwrap_or(cfg.panel.planted_noise);
            if no_planted {
                cfg.panel.planted.clear();
            } else if !planted.is_empty() {
                cfg.panel.planted = planted;
            }
            cfg.validate()?;
            let panel = pipeline::load_panel(&cfg)?;
            ensure_parent(&out)?;
            panel.write_csv(&out)?;
            let mut m = RunManifest::new("synth", cfg.seed).with_config(&cfg);
            m.add_output(&out)?;
            write_manifest(&m, &sidecar(&out))?;
            log::info!("wrote {} ({} dates x {} symbols)", out.display(), panel.n_dates(), panel.n_symbols());
        }
        Command::Factors { config, panel, factors, select, list, out } => {
            let mut cfg = config.load()?;
            if let Some(f) = factors {
                cfg.factors.path = f.display().to_string();
            }
            if !select.is_empty() {
                cfg.factors.select = select;
            }
            let set = pipeline::factor_set(&cfg)?;
            if list {
                let mut stdout = std::io::stdout().lock();
                for d in set.selected() {
                    // a closed pipe (e.g. `| head`) just ends the listing
                    if writeln!(stdout, "{d}").is_err() {
                        break;
                    }
                }
                return Ok(());
            }
            let p = read_panel(&panel)?;
            let frame = pipeline::compute_factors(&cfg, &p)?;
            ensure_parent(&out)?;
            frame.write_csv(&out)?;
            let mut m = RunManifest::new("factors", cfg.seed).with_config(&cfg);
            m.add_input(&panel)?;
            m.add_output(&out)?;
            write_manifest(&m, &sidecar(&out))?;
        }
        Command::Dataset { config, panel, cutoff, horizon, clip_lo, clip_hi, out } => {
            let mut cfg = config.load()?;
            let d = &mut cfg.dataset;
            d.cutoff_date = cutoff.unwrap_or(d.cutoff_date.clone());
            d.horizon = horizon.unwrap_or(d.horizon);
            d.clip_lo = clip_lo.unwrap_or(d.clip_lo);
            d.clip_hi = clip_hi.unwrap_or(d.clip_hi);
            cfg.dataset_config()?;
            let p = read_panel(&panel)?;
            let frame = pipeline::compute_factors(&cfg, &p)?;
            let ds = pipeline::build(&cfg, &p, &frame)?;
            ensure_parent(&out)?;
            ds.write_csv(&out)?;
            let mut m = RunManifest::new("dataset", cfg.seed).with_config(&cfg);
            m.add_input(&panel)?;
            m.add_output(&out)?;
            m.add_output(&alphaforge::dataset::meta_path(&out))?;
            write_manifest(&m, &sidecar(&out))?;
            log::info!("{} train and {} validation samples", ds.n_train, ds.n_validation());
        }
        Command::Train { config, dataset, model, seed, max_epochs, out, history } => {
            let mut cfg = config.load()?;
            if let Some(k) = model {
                cfg.model.kind = k.parse::<ModelKind>()?.name().to_owned();
            }
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.train.max_epochs = max_epochs.unwrap_or(cfg.train.max_epochs);
            cfg.train_config()?;
            let ds = read_dataset(&dataset)?;
            let (ckpt, hist) = pipeline::train_model(&cfg, &ds)?;
            ensure_parent(&out)?;
            ckpt.save(&out)?;
            let mut m = RunManifest::new("train", cfg.seed).with_config(&cfg);
            m.add_input(&dataset)?;
            m.add_output(&out)?;
            if let Some(h) = history {
                pipeline::write_history(&h, &hist)?;
                m.add_output(&h)?;
            }
            write_manifest(&m, &sidecar(&out))?;
            if let Some(v) = ckpt.meta_value("best_val_rmse") {
                log::info!("best validation rmse {v} at epoch {}", ckpt.meta_value("best_epoch").unwrap_or("?"));
            }
        }
        Command::Score { ckpt, dataset, split, out } => {
            let split: ScoreSplit = split.parse()?;
            if !ckpt.exists() {
                return Err(Error::MissingArtifact(ckpt));
            }
            let c = Checkpoint::load(&ckpt)?;
            let ds = read_dataset(&dataset)?;
            let signals = pipeline::score(&c, &ds, split)?;
            ensure_parent(&out)?;
            signals.write_csv(&out)?;
            let mut m = RunManifest::new("score", 0);
            m.add_input(&ckpt)?;
            m.add_input(&dataset)?;
            m.add_output(&out)?;
            write_manifest(&m, &sidecar(&out))?;
        }
        Command::Evaluate { config, signals, panel, k, holding, horizon, out } => {
            let mut cfg = config.load()?;
            cfg.eval.k = k.unwrap_or(cfg.eval.k);
            cfg.eval.holding = holding.unwrap_or(cfg.eval.holding);
            cfg.dataset.horizon = horizon.unwrap_or(cfg.dataset.horizon);
            cfg.eval_config()?;
            if !signals.exists() {
                return Err(Error::MissingArtifact(signals));
            }
            let s = SignalFrame::read_csv(&signals)?;
            let p = read_panel(&panel)?;
            let ev = pipeline::evaluate(&cfg, &s, &p)?;
            ev.write(&out)?;
            let mut m = RunManifest::new("evaluate", cfg.seed).with_config(&cfg);
            m.add_input(&signals)?;
            m.add_input(&panel)?;
            for f in ["ic_series.csv", "cumrets.csv", "metrics.json"] {
                m.add_output(&out.join(f))?;
            }
            write_manifest(&m, &out.join(MANIFEST_FILE))?;
            let mt = &ev.metrics;
            println!(
                "ic_mean {:.4}  icir {}  days {}  long-short sharpe {}",
                mt.ic_mean,
                mt.icir.map_or("undefined".into(), |v| format!("{v:.4}")),
                mt.n_days,
                mt.sharpe.long_short.sharpe.map_or("undefined".into(), |v| format!("{v:.4}"))
            );
        }
        Command::Attribute { config, ckpt, dataset, n_perms, samples, grid, seed, out } => {
            let mut cfg = config.load()?;
            cfg.attribution.n_perms = n_perms.unwrap_or(cfg.attribution.n_perms);
            cfg.attribution.n_samples = samples.unwrap_or(cfg.attribution.n_samples);
            cfg.attribution.grid = grid.unwrap_or(cfg.attribution.grid.clone());
            cfg.seed = seed.unwrap_or(cfg.seed);
            let spec: GridSpec = cfg.grid()?;
            cfg.attribution_config()?;
            if !ckpt.exists() {
                return Err(Error::MissingArtifact(ckpt));
            }
            let c = Checkpoint::load(&ckpt)?;
            spec.shape(c.factor_names.len())?;
            let ds = read_dataset(&dataset)?;
            let res = pipeline::attribute_model(&cfg, &c, &ds)?;
            ensure_parent(&out)?;
            res.write_grid_csv(&out, spec)?;
            let mut m = RunManifest::new("attribute", cfg.seed).with_config(&cfg);
            m.add_input(&ckpt)?;
            m.add_input(&dataset)?;
            m.add_output(&out)?;
            write_manifest(&m, &sidecar(&out))?;
            log::info!("largest efficiency gap {:.3e}", res.max_efficiency_gap());
        }
        Command::Pipeline { config, out_dir } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            let out = pipeline::run_pipeline(&cfg)?;
            let mt = &out.evaluation.metrics;
            println!(
                "{}: ic_mean {:.4}, long-short sharpe {}",
                cfg.out_dir.display(),
                mt.ic_mean,
                mt.sharpe.long_short.sharpe.map_or("undefined".into(), |v| format!("{v:.4}"))
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
