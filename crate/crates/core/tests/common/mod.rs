//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use alphaforge::grad::{Graph, Tensor, Var};
use alphaforge::panel::PricePanel;
use alphaforge::rng;
use chrono::{Duration, NaiveDate};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::RngCore;

pub const FD_STEP: f64 = 1e-4;

pub fn dates(n: usize) -> Vec<NaiveDate> {
    let d0 = NaiveDate::from_ymd_opt(2021, 1, 4).unwrap();
    (0..n).map(|i| d0 + Duration::days(i as i64)).collect()
}

pub fn symbols(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("S{i:02}")).collect()
}

/// Panel from closes only: open = previous close, 1% envelope, flat volume.
pub fn panel_from_closes(close: &Array2<f64>) -> PricePanel {
    let (t, n) = close.dim();
    let mut open = close.clone();
    for i in 1..t {
        open.row_mut(i).assign(&close.row(i - 1));
    }
    let high = Array2::from_shape_fn((t, n), |(i, j)| open[[i, j]].max(close[[i, j]]) * 1.01);
    let low = Array2::from_shape_fn((t, n), |(i, j)| open[[i, j]].min(close[[i, j]]) * 0.99);
    let volume = Array2::from_elem((t, n), 1000.0);
    PricePanel::from_fields(dates(t), symbols(n), open, high, low, close.clone(), volume).unwrap()
}

pub fn random_tensor(rng: &mut impl RngCore, shape: &[usize], scale: f64) -> Tensor {
    ArrayD::from_shape_fn(IxDyn(shape), |_| scale * rng::normal(rng))
}

/// `|a − n| / max(|a|, |n|, 1e-3)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FdReport {
    pub worst: f64,
    pub probed: usize,
    /// Coordinates where the difference at `h` and `h / 10` disagree: the
    /// step crossed a ReLU kink, where a central difference means nothing.
    pub kinks: usize,
}

/// Compares reverse-mode gradients with central differences. `build`
/// records the scalar loss from leaf inputs; at most `max_coords` entries
/// per input are probed.
pub fn fd_check(
    inputs: &[Tensor],
    build: &dyn Fn(&mut Graph, &[Var]) -> Var,
    max_coords: usize,
    rng: &mut impl RngCore,
) -> FdReport {
    let eval = |xs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let l = build(&mut g, &vars);
        g.scalar(l)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let l = build(&mut g, &vars);
    let mut grads = g.backward(l).unwrap();
    let mut rep = FdReport::default();
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.take_or_zeros(vars[k], x);
        let n = x.len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords).map(|_| (rng.next_u64() % n as u64) as usize).collect()
        };
        for c in coords {
            let central = |h: f64| {
                let mut plus = inputs.to_vec();
                let mut minus = inputs.to_vec();
                plus[k].as_slice_mut().unwrap()[c] += h;
                minus[k].as_slice_mut().unwrap()[c] -= h;
                (eval(&plus) - eval(&minus)) / (2.0 * h)
            };
            let numeric = central(FD_STEP);
            rep.probed += 1;
            if rel_err(numeric, central(FD_STEP / 10.0)) > 1e-5 {
                rep.kinks += 1;
                continue;
            }
            let a = analytic.as_slice().unwrap()[c];
            rep.worst = rep.worst.max(rel_err(a, numeric));
        }
    }
    rep
}

/// Ranks by counting: `1 + #less + ½·#equal-others`.
pub fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let ties = v.iter().enumerate().filter(|&(j, &y)| j != i && y == x).count() as f64;
            1.0 + less + 0.5 * ties
        })
        .collect()
}

pub fn brute_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..a.len() {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    num / (da * db).sqrt()
}

pub fn brute_spearman(a: &[f64], b: &[f64]) -> f64 {
    brute_pearson(&brute_ranks(a), &brute_ranks(b))
}

/// Index of the best symbol by scanning: highest (or lowest) score, ties to
/// the lexicographically smaller name.
pub fn scan_pick(scores: &[f64], names: &[String], highest: bool) -> usize {
    let mut best = 0;
    for i in 1..scores.len() {
        let better = if highest { scores[i] > scores[best] } else { scores[i] < scores[best] };
        if better || (scores[i] == scores[best] && names[i] < names[best]) {
            best = i;
        }
    }
    best
}

pub type Builder = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;

/// `Σ out ⊙ w` with a fixed weight tensor, so every output entry matters.
fn weighted(g: &mut Graph, out: Var, w: &Tensor) -> Var {
    let wv = g.leaf(w.clone());
    let m = g.mul(out, wv).unwrap();
    g.sum(m)
}

fn away_from_zero(mut t: Tensor, gap: f64) -> Tensor {
    t.mapv_inplace(|v| if v.abs() < gap { v.signum() * gap + v } else { v });
    t
}

/// One case per differentiable operator plus the dual-task and CNN losses.
pub fn grad_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor>, Builder)> {
    use alphaforge::models::dual_task_graph;
    let mut r = rng::seeded(seed);
    let mut cases: Vec<(&'static str, Vec<Tensor>, Builder)> = Vec::new();

    let w = random_tensor(&mut r, &[4, 3], 1.0);
    cases.push((
        "affine",
        vec![random_tensor(&mut r, &[4, 5], 1.0), random_tensor(&mut r, &[3, 5], 0.5), random_tensor(&mut r, &[3], 0.5)],
        Box::new(move |g, v| {
            let o = g.affine(v[0], v[1], v[2]).unwrap();
            weighted(g, o, &w)
        }),
    ));
    let w = random_tensor(&mut r, &[4, 6], 1.0);
    cases.push((
        "relu",
        vec![away_from_zero(random_tensor(&mut r, &[4, 6], 1.0), 0.05)],
        Box::new(move |g, v| {
            let o = g.relu(v[0]);
            weighted(g, o, &w)
        }),
    ));
    let w = random_tensor(&mut r, &[4, 6], 1.0);
    cases.push((
        "sigmoid",
        vec![random_tensor(&mut r, &[4, 6], 2.0)],
        Box::new(move |g, v| {
            let o = g.sigmoid(v[0]);
            weighted(g, o, &w)
        }),
    ));
    let w = random_tensor(&mut r, &[3, 4 * 7], 1.0);
    cases.push((
        "conv1d+flatten",
        vec![random_tensor(&mut r, &[3, 9], 1.0), random_tensor(&mut r, &[4, 3], 0.7), random_tensor(&mut r, &[4], 0.3)],
        Box::new(move |g, v| {
            let c = g.conv1d(v[0], v[1], v[2]).unwrap();
            let f = g.flatten(c);
            weighted(g, f, &w)
        }),
    ));
    let w = random_tensor(&mut r, &[5, 6], 1.0);
    let drop_seed = r.next_u64();
    cases.push((
        "dropout",
        vec![random_tensor(&mut r, &[5, 6], 1.0)],
        Box::new(move |g, v| {
            let o = g.dropout(v[0], 0.3, &mut rng::seeded(drop_seed));
            weighted(g, o, &w)
        }),
    ));
    let w = random_tensor(&mut r, &[4, 3], 1.0);
    cases.push((
        "add",
        vec![random_tensor(&mut r, &[4, 3], 1.0), random_tensor(&mut r, &[4, 3], 1.0)],
        Box::new(move |g, v| {
            let o = g.add(v[0], v[1]).unwrap();
            weighted(g, o, &w)
        }),
    ));
    let w = random_tensor(&mut r, &[4, 3], 1.0);
    cases.push((
        "mul",
        vec![random_tensor(&mut r, &[4, 3], 1.0), random_tensor(&mut r, &[4, 3], 1.0)],
        Box::new(move |g, v| {
            let o = g.mul(v[0], v[1]).unwrap();
            weighted(g, o, &w)
        }),
    ));
    let w = random_tensor(&mut r, &[7], 1.0);
    cases.push((
        "scale",
        vec![random_tensor(&mut r, &[7], 1.0)],
        Box::new(move |g, v| {
            let o = g.scale(v[0], -1.7);
            weighted(g, o, &w)
        }),
    ));
    cases.push((
        "sum",
        vec![random_tensor(&mut r, &[3, 4], 1.0)],
        Box::new(|g, v| {
            let sq = g.mul(v[0], v[0]).unwrap();
            g.sum(sq)
        }),
    ));
    let target: Vec<f64> = (0..6).map(|_| rng::normal(&mut r)).collect();
    cases.push(("mse", vec![random_tensor(&mut r, &[6, 1], 1.0)], Box::new(move |g, v| g.mse(v[0], &target).unwrap())));
    let labels: Vec<f64> = (0..6).map(|_| if rng::uniform(&mut r) < 0.5 { 0.0 } else { 1.0 }).collect();
    let probs = ArrayD::from_shape_fn(IxDyn(&[6, 1]), |_| 0.1 + 0.8 * rng::uniform(&mut r));
    cases.push(("bce", vec![probs], Box::new(move |g, v| g.bce(v[0], &labels).unwrap())));

    // full dual-task objective with dropout on
    let f = 6;
    let n = 8;
    let params = alphaforge::models::Checkpoint::initial(
        alphaforge::models::ModelKind::Mlp,
        &(0..f).map(|i| format!("f{i}")).collect::<Vec<_>>(),
        &alphaforge::models::TrainConfig { seed, ..Default::default() },
    )
    .params;
    let mut inputs: Vec<Tensor> = params.values.iter().map(|p| p + &random_tensor(&mut r, p.shape(), 0.05)).collect();
    inputs.push(random_tensor(&mut r, &[n, f], 1.0));
    let y: Vec<f64> = (0..n).map(|_| 0.1 * rng::normal(&mut r)).collect();
    let lab: Vec<f64> = y.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    let drop_seed = r.next_u64();
    cases.push((
        "dual-task loss",
        inputs,
        Box::new(move |g, v| {
            let (reg, prob) = dual_task_graph(g, &v[..8], v[8], 0.1, &mut rng::seeded(drop_seed)).unwrap();
            let lr = g.mse(reg, &y).unwrap();
            let lc = g.bce(prob, &lab).unwrap();
            let lc = g.scale(lc, 0.5);
            g.add(lr, lc).unwrap()
        }),
    ));

    let params = alphaforge::models::Checkpoint::initial(
        alphaforge::models::ModelKind::Cnn,
        &(0..f).map(|i| format!("f{i}")).collect::<Vec<_>>(),
        &alphaforge::models::TrainConfig { seed, ..Default::default() },
    )
    .params;
    let mut inputs: Vec<Tensor> = params.values.iter().map(|p| p + &random_tensor(&mut r, p.shape(), 0.05)).collect();
    inputs.push(random_tensor(&mut r, &[n, f], 1.0));
    let y: Vec<f64> = (0..n).map(|_| 0.1 * rng::normal(&mut r)).collect();
    cases.push((
        "cnn loss",
        inputs,
        Box::new(move |g, v| {
            let out = alphaforge::models::cnn_graph(g, &v[..6], v[6]).unwrap();
            g.mse(out, &y).unwrap()
        }),
    ));
    cases
}

/// Reduced synthetic run: 40 symbols, 400 days, a few epochs.
pub fn small_config(seed: u64) -> alphaforge::config::RunConfig {
    let mut cfg = alphaforge::config::RunConfig { seed, ..Default::default() };
    cfg.panel.n_symbols = 40;
    cfg.panel.n_days = 400;
    cfg.dataset.cutoff_date = "2022-01-01".into();
    cfg.train.max_epochs = 6;
    cfg.attribution.n_perms = 64;
    cfg.attribution.n_samples = 8;
    cfg
}

pub struct SmallRun {
    pub cfg: alphaforge::config::RunConfig,
    pub panel: PricePanel,
    pub dataset: alphaforge::dataset::TrainingDataset,
    pub checkpoint: alphaforge::models::Checkpoint,
}

pub fn small_trained(seed: u64) -> SmallRun {
    use alphaforge::pipeline;
    let cfg = small_config(seed);
    let panel = pipeline::load_panel(&cfg).unwrap();
    let frame = pipeline::compute_factors(&cfg, &panel).unwrap();
    let dataset = pipeline::build(&cfg, &panel, &frame).unwrap();
    let (checkpoint, _) = pipeline::train_model(&cfg, &dataset).unwrap();
    SmallRun { cfg, panel, dataset, checkpoint }
}

/// Wilder RSI straight from the recurrence.
pub fn ref_rsi(c: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; c.len()];
    if c.len() <= n {
        return out;
    }
    let ch: Vec<f64> = c.windows(2).map(|w| w[1] - w[0]).collect();
    let mut g = ch[..n].iter().map(|d| d.max(0.0)).sum::<f64>() / n as f64;
    let mut l = ch[..n].iter().map(|d| (-d).max(0.0)).sum::<f64>() / n as f64;
    let value = |g: f64, l: f64| {
        if g == 0.0 && l == 0.0 {
            50.0
        } else if l == 0.0 {
            100.0
        } else {
            100.0 - 100.0 / (1.0 + g / l)
        }
    };
    out[n] = value(g, l);
    for i in n + 1..c.len() {
        let d = ch[i - 1];
        g = (g * (n as f64 - 1.0) + d.max(0.0)) / n as f64;
        l = (l * (n as f64 - 1.0) + (-d).max(0.0)) / n as f64;
        out[i] = value(g, l);
    }
    out
}

fn check_factor(name: &str, panel: &PricePanel, reference: impl Fn(usize, usize) -> f64) -> Result<(), String> {
    use alphaforge::dsl::{evaluate, FactorSet, IndicatorParams};
    let v = evaluate(&FactorSet::bundled(), name, panel, &IndicatorParams::default()).map_err(|e| e.to_string())?;
    for t in 0..panel.n_dates() {
        for s in 0..panel.n_symbols() {
            let (got, want) = (v[[t, s]], reference(t, s));
            if !((got.is_nan() && want.is_nan()) || (got - want).abs() <= 1e-10 * want.abs().max(1.0)) {
                return Err(format!("{name} at ({t},{s}): {got} vs {want}"));
            }
        }
    }
    Ok(())
}

/// Five bundled factors against hand-coded kernels.
pub fn reference_factors_match(p: &PricePanel) -> Result<(), String> {
    use alphaforge::panel::Field::*;
    let (o, h, l, c, v) = (p.field(Open), p.field(High), p.field(Low), p.field(Close), p.field(Volume));
    check_factor("alpha_kline_body_strength", p, |t, s| (c[[t, s]] - o[[t, s]]) / (h[[t, s]] - l[[t, s]] + 0.001))?;
    check_factor("alpha_close_near_low", p, |t, s| (h[[t, s]] - c[[t, s]]) / (h[[t, s]] - l[[t, s]] + 0.001))?;
    check_factor("alpha_close_delta_1d", p, |t, s| if t == 0 { f64::NAN } else { -(c[[t, s]] - c[[t - 1, s]]) })?;
    check_factor("alpha_volume_spike_ratio", p, |t, s| {
        if t < 4 {
            f64::NAN
        } else {
            v[[t, s]] / ((t - 4..=t).map(|i| v[[i, s]]).sum::<f64>() / 5.0)
        }
    })?;
    let rsis: Vec<Vec<f64>> = (0..p.n_symbols()).map(|s| ref_rsi(&c.column(s).to_vec(), 14)).collect();
    check_factor("alpha_rsi_vs_50", p, |t, s| rsis[s][t] - 50.0)
}

pub fn svr_objective_2d(w: [f64; 2], b: f64, x: &Array2<f64>, y: &[f64], c: f64, eps: f64) -> f64 {
    let mut loss = 0.0;
    for (i, t) in y.iter().enumerate() {
        let r = t - (w[0] * x[[i, 0]] + w[1] * x[[i, 1]] + b);
        loss += (r.abs() - eps).max(0.0);
    }
    0.5 * (w[0] * w[0] + w[1] * w[1]) + c * loss
}

/// Minimum over a 41³ grid on `(w1, w2, b)`, re-centred and shrunk around
/// the best point for six rounds.
pub fn svr_grid_optimum(x: &Array2<f64>, y: &[f64], c: f64, eps: f64) -> f64 {
    let steps = 41;
    let mut centre = [0.0, 0.0, 0.0];
    let mut half = 4.0;
    let mut best = f64::INFINITY;
    for _ in 0..6 {
        let mut arg = centre;
        let at = |k: usize, c0: f64| c0 - half + 2.0 * half * k as f64 / (steps - 1) as f64;
        for i in 0..steps {
            for j in 0..steps {
                for k in 0..steps {
                    let p = [at(i, centre[0]), at(j, centre[1]), at(k, centre[2])];
                    let v = svr_objective_2d([p[0], p[1]], p[2], x, y, c, eps);
                    if v < best {
                        best = v;
                        arg = p;
                    }
                }
            }
        }
        centre = arg;
        // four grid steps either side
        half *= 8.0 / (steps - 1) as f64;
    }
    best
}

/// A random 2-D regression toy with `n` points.
pub fn svr_toy(r: &mut impl RngCore, n: usize) -> (Array2<f64>, Vec<f64>) {
    let x = Array2::from_shape_fn((n, 2), |_| rng::normal(r));
    let (a0, a1, a2) = (rng::normal(r), rng::normal(r), 0.5 * rng::normal(r));
    let y = (0..n).map(|i| a0 * x[[i, 0]] + a1 * x[[i, 1]] + a2 + 0.3 * rng::normal(r)).collect();
    (x, y)
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Checks every (day, factor) column of `z` whose raw values are not all
/// equal; returns how many were checked.
pub fn standardized_columns(raw: &alphaforge::dsl::FeatureFrame, z: &alphaforge::dsl::FeatureFrame) -> Result<usize, String> {
    let (t_len, n, f_len) = raw.values.dim();
    let mut checked = 0;
    for t in 0..t_len {
        for f in 0..f_len {
            let col: Vec<f64> = (0..n).map(|s| raw.values[[t, s, f]]).filter(|v| v.is_finite()).collect();
            if col.len() < 2 || moments(&col).1 < 1e-9 {
                continue;
            }
            let zc: Vec<f64> = (0..n).map(|s| z.values[[t, s, f]]).filter(|v| v.is_finite()).collect();
            if zc.len() != col.len() {
                return Err(format!("day {t} factor {f}: {} defined z-scores for {} values", zc.len(), col.len()));
            }
            let (m, sd) = moments(&zc);
            if m.abs() >= 1e-9 || (sd - 1.0).abs() >= 1e-9 {
                return Err(format!("day {t} factor {f}: mean {m:e}, std {sd}"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Features with NaN holes and factor scales from 1e-2 to 1e3.
pub fn random_frame(seed: u64, t: usize, n: usize, f: usize, start: NaiveDate) -> alphaforge::dsl::FeatureFrame {
    let mut r = rng::seeded(seed);
    let values = ndarray::Array3::from_shape_fn((t, n, f), |(_, _, k)| {
        if rng::uniform(&mut r) < 0.1 {
            f64::NAN
        } else {
            10f64.powi(k as i32 - 2) * rng::normal(&mut r) + k as f64 * 100.0
        }
    });
    alphaforge::dsl::FeatureFrame {
        dates: (0..t).map(|i| start + Duration::days(i as i64)).collect(),
        symbols: symbols(n),
        factor_names: (0..f).map(|i| format!("f{i}")).collect(),
        values,
    }
}

/// Random z-scored features and targets spanning a 2023-01-01 cutoff.
pub fn split_fixture(seed: u64) -> (alphaforge::dsl::FeatureFrame, Array2<f64>, alphaforge::dataset::DatasetConfig) {
    let start = NaiveDate::from_ymd_opt(2022, 12, 1).unwrap();
    let frame = alphaforge::dataset::zscore_per_day(&random_frame(seed, 60, 12, 3, start));
    let mut r = rng::seeded(seed + 1000);
    let targets = Array2::from_shape_fn((60, 12), |_| 0.03 * rng::normal(&mut r));
    let cfg = alphaforge::dataset::DatasetConfig { cutoff_date: NaiveDate::from_ymd_opt(2023, 1, 1).unwrap(), ..Default::default() };
    (frame, targets, cfg)
}

/// Redraws every validation-date target and reports whether the clip
/// bounds and training targets stayed put.
pub fn clip_invariant_under_validation_noise(seed: u64, shift: f64, scale: f64) -> Result<(), String> {
    use alphaforge::dataset::split_and_assemble;
    let (frame, targets, cfg) = split_fixture(seed);
    let base = split_and_assemble(&frame, &targets, &cfg).map_err(|e| e.to_string())?;
    let mut bumped = targets.clone();
    let mut r = rng::seeded(seed);
    for t in 0..targets.nrows() {
        if frame.dates[t] >= cfg.cutoff_date {
            for s in 0..bumped.ncols() {
                bumped[[t, s]] = shift + scale * rng::normal(&mut r);
            }
        }
    }
    let other = split_and_assemble(&frame, &bumped, &cfg).map_err(|e| e.to_string())?;
    if base.clip != other.clip || base.y[..base.n_train] != other.y[..other.n_train] {
        return Err(format!("seed {seed}: clip {:?} became {:?}", base.clip, other.clip));
    }
    if !other.y[other.n_train..].iter().all(|&v| base.clip.lo <= v && v <= base.clip.hi) {
        return Err(format!("seed {seed}: validation target outside the clip bounds"));
    }
    Ok(())
}

pub fn random_panel(r: &mut impl RngCore, t: usize, n: usize) -> PricePanel {
    let close = Array2::from_shape_fn((t, n), |_| 20.0 * (0.05 * rng::normal(r)).exp());
    panel_from_closes(&close)
}

/// Scores on a random `coverage` share of cells, drawn from {0, 1, 2, 3}
/// so ties are common.
pub fn random_signals(r: &mut impl RngCore, panel: &PricePanel, coverage: f64) -> alphaforge::evalkit::SignalFrame {
    let mut entries = Vec::new();
    for d in panel.dates() {
        for s in panel.symbols() {
            if rng::uniform(r) < coverage {
                entries.push((*d, s.clone(), (rng::uniform(r) * 4.0).floor()));
            }
        }
    }
    alphaforge::evalkit::SignalFrame::new(entries)
}

/// Runs the k = 1 backtest on a random panel of `t` days by `n` symbols
/// and compares every leg with a scan over the day's scores. Returns the
/// number of days compared.
pub fn backtest_matches_scan(r: &mut impl RngCore, t: usize, n: usize) -> Result<usize, String> {
    let panel = random_panel(r, t, n);
    let signals = random_signals(r, &panel, 0.8);
    let bt = alphaforge::evalkit::long_short_backtest(&signals, &panel, 1, 1).map_err(|e| e.to_string())?;
    let close = panel.close();
    let mut k = 0;
    for (date, rows) in signals.by_date() {
        let ti = panel.date_index(date).unwrap();
        if ti + 1 >= t || rows.len() < 2 {
            continue;
        }
        let names: Vec<String> = rows.iter().map(|(s, _)| s.to_string()).collect();
        let scores: Vec<f64> = rows.iter().map(|(_, v)| *v).collect();
        let ret = |name: &str| {
            let j = panel.symbol_index(name).unwrap();
            close[[ti + 1, j]] / close[[ti, j]] - 1.0
        };
        let top = ret(&names[scan_pick(&scores, &names, true)]);
        let bottom = ret(&names[scan_pick(&scores, &names, false)]);
        if bt.dates.get(k) != Some(&date) {
            return Err(format!("{t}x{n}: backtest skipped or added a day near {date}"));
        }
        if bt.top[k] != top || bt.bottom[k] != bottom || bt.long_short[k] != top - bottom {
            return Err(format!(
                "{t}x{n} on {date}: legs ({}, {}, {}) vs ({top}, {bottom}, {})",
                bt.top[k],
                bt.bottom[k],
                bt.long_short[k],
                top - bottom
            ));
        }
        k += 1;
    }
    if k != bt.dates.len() {
        return Err(format!("{t}x{n}: {} backtest days, {k} expected", bt.dates.len()));
    }
    Ok(k)
}

/// The four-stock day where the long leg gains 2%, the short leg 5%.
pub fn worked_example_legs() -> (f64, f64, f64) {
    use alphaforge::panel::Field;
    let close = ndarray::array![[100.0, 100.0, 100.0, 100.0], [102.0, 100.0, 99.0, 105.0]];
    let p = panel_from_closes(&close);
    let panel = PricePanel::from_fields(
        p.dates().to_vec(),
        ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect(),
        p.field(Field::Open).clone(),
        p.field(Field::High).clone(),
        p.field(Field::Low).clone(),
        close,
        p.field(Field::Volume).clone(),
    )
    .unwrap();
    let d = panel.dates()[0];
    let s = alphaforge::evalkit::SignalFrame::new(
        [("A", 3.0), ("B", 1.0), ("C", 2.0), ("D", 0.0)].iter().map(|(n, v)| (d, n.to_string(), *v)).collect(),
    );
    let bt = alphaforge::evalkit::long_short_backtest(&s, &panel, 1, 1).unwrap();
    (bt.top[0], bt.bottom[0], bt.long_short[0])
}
