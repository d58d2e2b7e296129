//! Plain-text checkpoint container.
//!
//! ```text
//! ALPHAFORGE-CKPT
//! version 1
//! kind mlp|cnn|svr
//! signal reg|cls|mean
//! factors <F>
//! <factor name>            (F lines, model input order)
//! meta <M>
//! <key>\t<value>           (M lines)
//! params <P>
//! param <name> <ndim> <d0> <d1> ...
//! <values>                 (row-major, space separated, one line)
//! ```
//!
//! Values use the shortest decimal form that parses back to the same
//! `f64`, so a reload reproduces scores bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::net::init_params;
use super::{ModelKind, ParamSet, SignalSource, TrainConfig};
use crate::{rng, Error, Result};

pub const CHECKPOINT_MAGIC: &str = "ALPHAFORGE-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: ModelKind,
    pub signal: SignalSource,
    pub factor_names: Vec<String>,
    /// Training settings and results, in insertion order.
    pub meta: Vec<(String, String)>,
    pub params: ParamSet,
}

fn config_meta(cfg: &TrainConfig) -> Vec<(String, String)> {
    let pairs: Vec<(&str, String)> = vec![
        ("seed", cfg.seed.to_string()),
        ("lr", cfg.lr.to_string()),
        ("weight_decay", cfg.weight_decay.to_string()),
        ("decoupled_decay", cfg.decoupled_decay.to_string()),
        ("clip_norm", cfg.clip_norm.to_string()),
        ("scheduler_factor", cfg.scheduler_factor.to_string()),
        ("scheduler_patience", cfg.scheduler_patience.to_string()),
        ("scheduler_delta", cfg.scheduler_delta.to_string()),
        ("early_stop_patience", cfg.early_stop_patience.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("max_epochs", cfg.max_epochs.to_string()),
        ("dropout", cfg.dropout.to_string()),
        ("cls_weight", cfg.cls_weight.to_string()),
        ("svr_c", cfg.svr_c.to_string()),
        ("svr_epsilon", cfg.svr_epsilon.to_string()),
        ("svr_iters", cfg.svr_iters.to_string()),
    ];
    pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

impl Checkpoint {
    /// Untrained model with freshly initialized parameters.
    pub fn initial(kind: ModelKind, factor_names: &[String], cfg: &TrainConfig) -> Self {
        let params = init_params(kind, factor_names.len(), cfg.init, &mut rng::derive(cfg.seed, 1));
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind,
            signal: if kind == ModelKind::Mlp { cfg.signal } else { SignalSource::Reg },
            factor_names: factor_names.to_vec(),
            meta: config_meta(cfg),
            params,
        }
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(s, "version {}", self.version);
        let _ = writeln!(s, "kind {}", self.kind);
        let _ = writeln!(s, "signal {}", self.signal.name());
        let _ = writeln!(s, "factors {}", self.factor_names.len());
        for n in &self.factor_names {
            let _ = writeln!(s, "{n}");
        }
        let _ = writeln!(s, "meta {}", self.meta.len());
        for (k, v) in &self.meta {
            let _ = writeln!(s, "{k}\t{v}");
        }
        let _ = writeln!(s, "params {}", self.params.names.len());
        for (name, t) in self.params.names.iter().zip(&self.params.values) {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(s, "param {name} {} {}", t.ndim(), dims.join(" "));
            let vals: Vec<String> = t.iter().map(f64::to_string).collect();
            let _ = writeln!(s, "{}", vals.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines.next().map(|(i, l)| (i + 1, l)).ok_or_else(|| Error::Data(format!("checkpoint truncated before {what}")))
        };
        let bad = |line: usize, msg: &str| Error::Data(format!("checkpoint line {line}: {msg}"));
        let field = |line: (usize, &str), key: &str| -> Result<String> {
            line.1
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| bad(line.0, &format!("expected `{key}`")))
        };
        let count = |line: (usize, &str), key: &str| -> Result<usize> {
            field(line, key)?.parse().map_err(|_| bad(line.0, &format!("bad `{key}` count")))
        };

        let magic = next("magic")?;
        if magic.1 != CHECKPOINT_MAGIC {
            return Err(bad(1, "not an alphaforge checkpoint"));
        }
        let v = next("version")?;
        let version: u32 = field(v, "version")?.parse().map_err(|_| bad(v.0, "bad version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(v.0, &format!("unsupported version {version}")));
        }
        let kind: ModelKind = field(next("kind")?, "kind")?.parse()?;
        let signal: SignalSource = field(next("signal")?, "signal")?.parse()?;
        let nf = count(next("factors")?, "factors")?;
        let mut factor_names = Vec::with_capacity(nf);
        for _ in 0..nf {
            factor_names.push(next("factor names")?.1.to_owned());
        }
        let nm = count(next("meta")?, "meta")?;
        let mut meta = Vec::with_capacity(nm);
        for _ in 0..nm {
            let l = next("meta entries")?;
            let (k, v) = l.1.split_once('\t').ok_or_else(|| bad(l.0, "meta entry needs a tab"))?;
            meta.push((k.to_owned(), v.to_owned()));
        }
        let np = count(next("params")?, "params")?;
        let mut names = Vec::with_capacity(np);
        let mut values = Vec::with_capacity(np);
        for _ in 0..np {
            let h = next("param header")?;
            let rest = field(h, "param")?;
            let parts: Vec<&str> = rest.split(' ').collect();
            let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(h.0, "bad param header"));
            let ndim = parse(parts.get(1).ok_or_else(|| bad(h.0, "bad param header"))?)?;
            if parts.len() != 2 + ndim {
                return Err(bad(h.0, "bad param header"));
            }
            let shape: Vec<usize> = parts[2..].iter().map(|p| parse(p)).collect::<Result<_>>()?;
            let d = next("param values")?;
            let vals: Vec<f64> = if d.1.is_empty() {
                Vec::new()
            } else {
                d.1.split(' ').map(|x| x.parse::<f64>().map_err(|_| bad(d.0, "bad value"))).collect::<Result<_>>()?
            };
            let t = ArrayD::from_shape_vec(IxDyn(&shape), vals).map_err(|_| bad(d.0, "value count does not match shape"))?;
            names.push(parts[0].to_owned());
            values.push(t);
        }
        let ckpt = Checkpoint { version, kind, signal, factor_names, meta, params: ParamSet { names, values } };
        ckpt.check_layout()?;
        Ok(ckpt)
    }

    fn check_layout(&self) -> Result<()> {
        let expect = init_params(self.kind, self.factor_names.len(), super::Init::Zeros, &mut rng::seeded(0));
        let ok = expect.names == self.params.names
            && expect.values.iter().zip(&self.params.values).all(|(a, b)| a.shape() == b.shape());
        if !ok {
            return Err(Error::Data(format!(
                "checkpoint parameters do not fit a {} model over {} factors",
                self.kind,
                self.factor_names.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_text(&text)
    }
}
