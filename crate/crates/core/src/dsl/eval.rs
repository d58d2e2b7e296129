use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::rc::Rc;

use chrono::NaiveDate;
use ndarray::{Array2, Array3, Zip};

use super::ast::{BinOp, Expr, NamedSeries, UnaryFn, WindowFn};
use super::{FactorDefinition, FactorSet, IndicatorParams};
use crate::indicators::{self, cross_rank};
use crate::panel::{csv_to_io, Field, PricePanel, DATE_FORMAT};
use crate::{Error, Result};

type Grid = Rc<Array2<f64>>;

#[derive(Clone)]
enum Value {
    Scalar(f64),
    Grid(Grid),
}

/// Per-date, per-symbol factor values (T × S × F) in factor-file order.
#[derive(Debug, Clone)]
pub struct FeatureFrame {
    pub dates: Vec<NaiveDate>,
    pub symbols: Vec<String>,
    pub factor_names: Vec<String>,
    pub values: Array3<f64>,
}

impl FeatureFrame {
    pub fn n_factors(&self) -> usize {
        self.factor_names.len()
    }

    pub fn factor(&self, name: &str) -> Option<Array2<f64>> {
        let f = self.factor_names.iter().position(|n| n == name)?;
        Some(self.values.index_axis(ndarray::Axis(2), f).to_owned())
    }

    /// Writes `date,symbol,<factor names...>`; undefined values are empty.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_to_io(path, e))?;
        let mut header = vec!["date".to_owned(), "symbol".to_owned()];
        header.extend(self.factor_names.iter().cloned());
        w.write_record(&header)?;
        for (t, date) in self.dates.iter().enumerate() {
            for (s, sym) in self.symbols.iter().enumerate() {
                let mut rec = vec![date.format(DATE_FORMAT).to_string(), sym.clone()];
                rec.extend((0..self.n_factors()).map(|f| {
                    let v = self.values[[t, s, f]];
                    if v.is_nan() {
                        String::new()
                    } else {
                        v.to_string()
                    }
                }));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Diagnostics collected during evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    /// Cells per factor where a division hit an exactly-zero denominator.
    pub zero_divisions: BTreeMap<String, usize>,
}

pub(crate) struct Evaluator<'a> {
    panel: &'a PricePanel,
    params: &'a IndicatorParams,
    cache: HashMap<String, Grid>,
    factors: HashMap<String, Grid>,
    report: EvalReport,
    current: String,
}

fn per_symbol(m: &Array2<f64>, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Array2<f64>> {
    let mut out = Array2::from_elem(m.dim(), f64::NAN);
    for (s, col) in m.columns().into_iter().enumerate() {
        let series = f(&col.to_vec())?;
        out.column_mut(s).assign(&ndarray::ArrayView1::from(&series));
    }
    Ok(out)
}

fn per_date(m: &Array2<f64>, f: impl Fn(&[f64]) -> Vec<f64>) -> Array2<f64> {
    let mut out = Array2::from_elem(m.dim(), f64::NAN);
    for (t, row) in m.rows().into_iter().enumerate() {
        let vals = f(&row.to_vec());
        out.row_mut(t).assign(&ndarray::ArrayView1::from(&vals));
    }
    out
}

fn bool01(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl<'a> Evaluator<'a> {
    pub(crate) fn new(panel: &'a PricePanel, params: &'a IndicatorParams) -> Self {
        Evaluator {
            panel,
            params,
            cache: HashMap::new(),
            factors: HashMap::new(),
            report: EvalReport::default(),
            current: String::new(),
        }
    }

    fn shape(&self) -> (usize, usize) {
        (self.panel.n_dates(), self.panel.n_symbols())
    }

    fn grid(&self, v: Value) -> Grid {
        match v {
            Value::Grid(g) => g,
            Value::Scalar(c) => Rc::new(Array2::from_elem(self.shape(), c)),
        }
    }

    /// Evaluates `defs` in the given (dependency-respecting) order.
    pub(crate) fn run(&mut self, defs: &[&FactorDefinition]) -> Result<()> {
        for def in defs {
            if self.factors.contains_key(&def.name) {
                continue;
            }
            self.current = def.name.clone();
            let v = self.eval(&def.expr)?;
            let g = self.grid(v);
            self.factors.insert(def.name.clone(), g);
        }
        Ok(())
    }

    pub(crate) fn factor(&self, name: &str) -> Option<&Array2<f64>> {
        self.factors.get(name).map(|g| g.as_ref())
    }

    pub(crate) fn into_report(self) -> EvalReport {
        self.report
    }

    fn cached(&mut self, e: &Expr, compute: impl FnOnce(&mut Self) -> Result<Array2<f64>>) -> Result<Value> {
        let key = e.to_string();
        if let Some(g) = self.cache.get(&key) {
            return Ok(Value::Grid(g.clone()));
        }
        let g = Rc::new(compute(self)?);
        self.cache.insert(key, g.clone());
        Ok(Value::Grid(g))
    }

    fn eval(&mut self, e: &Expr) -> Result<Value> {
        let cacheable = matches!(
            e,
            Expr::Column(_) | Expr::Series(_) | Expr::Window(..) | Expr::Unary(UnaryFn::Rank | UnaryFn::Diff, _)
        );
        if cacheable {
            if let Some(g) = self.cache.get(&e.to_string()) {
                return Ok(Value::Grid(g.clone()));
            }
        }
        match e {
            Expr::Const(c) => Ok(Value::Scalar(*c)),
            Expr::Column(f) => {
                let field = *f;
                self.cached(e, |ev| Ok(ev.panel.field(field).clone()))
            }
            Expr::Series(s) => {
                let s = *s;
                self.cached(e, |ev| ev.series(s))
            }
            Expr::Factor(name) => match self.factors.get(name) {
                Some(g) => Ok(Value::Grid(g.clone())),
                None => Err(Error::Data(format!(
                    "factor `{}` evaluated before its dependency `{name}`",
                    self.current
                ))),
            },
            Expr::Unary(f, a) => {
                let f = *f;
                let arg = self.eval(a)?;
                if let Value::Scalar(c) = arg {
                    if matches!(f, UnaryFn::Neg | UnaryFn::Sign | UnaryFn::Abs | UnaryFn::Indicator) {
                        return Ok(Value::Scalar(scalar_unary(f, c)));
                    }
                }
                let g = self.grid(arg);
                match f {
                    UnaryFn::Neg | UnaryFn::Sign | UnaryFn::Abs | UnaryFn::Indicator => {
                        Ok(Value::Grid(Rc::new(g.mapv(|x| scalar_unary(f, x)))))
                    }
                    UnaryFn::Rank => self.cached(e, |_| Ok(per_date(&g, cross_rank))),
                    UnaryFn::Diff => self.cached(e, |_| per_symbol(&g, |x| Ok(indicators::diff(x)))),
                }
            }
            Expr::Window(f, a, n) => {
                let (f, n) = (*f, *n);
                let arg = self.eval(a)?;
                let g = self.grid(arg);
                self.cached(e, |_| match f {
                    WindowFn::Shift => per_symbol(&g, |x| Ok(indicators::shift(x, n))),
                    WindowFn::Sma => per_symbol(&g, |x| indicators::sma(x, n)),
                    WindowFn::Std => per_symbol(&g, |x| indicators::rolling_std(x, n)),
                    WindowFn::Rsi => per_symbol(&g, |x| indicators::rsi(x, n)),
                })
            }
            Expr::Binary(op, a, b) => {
                let lhs = self.eval(a)?;
                let rhs = self.eval(b)?;
                self.binary(*op, lhs, rhs)
            }
        }
    }

    fn binary(&mut self, op: BinOp, lhs: Value, rhs: Value) -> Result<Value> {
        let mut zero_div = 0usize;
        let mut apply = |x: f64, y: f64| -> f64 {
            if x.is_nan() || y.is_nan() {
                return f64::NAN;
            }
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => {
                    if y == 0.0 {
                        zero_div += 1;
                        f64::NAN
                    } else {
                        x / y
                    }
                }
                BinOp::Lt => bool01(x < y),
                BinOp::Gt => bool01(x > y),
                BinOp::Le => bool01(x <= y),
                BinOp::Ge => bool01(x >= y),
                BinOp::And => bool01(x != 0.0 && y != 0.0),
            }
        };
        let out = match (lhs, rhs) {
            (Value::Scalar(x), Value::Scalar(y)) => Value::Scalar(apply(x, y)),
            (Value::Grid(g), Value::Scalar(y)) => Value::Grid(Rc::new(g.mapv(|x| apply(x, y)))),
            (Value::Scalar(x), Value::Grid(g)) => Value::Grid(Rc::new(g.mapv(|y| apply(x, y)))),
            (Value::Grid(a), Value::Grid(b)) => {
                let mut out = Array2::zeros(a.dim());
                Zip::from(&mut out).and(&*a).and(&*b).for_each(|o, &x, &y| *o = apply(x, y));
                Value::Grid(Rc::new(out))
            }
        };
        if zero_div > 0 {
            *self.report.zero_divisions.entry(self.current.clone()).or_default() += zero_div;
        }
        Ok(out)
    }

    fn series(&mut self, s: NamedSeries) -> Result<Array2<f64>> {
        let p = self.panel;
        let params = self.params;
        match s {
            NamedSeries::MacdDiff => per_symbol(p.close(), |x| indicators::macd_diff(x, params.macd)),
            NamedSeries::Rsi => per_symbol(p.close(), |x| indicators::rsi(x, params.rsi_window)),
            NamedSeries::Vwap => {
                let (h, l, c, v) = (p.field(Field::High), p.field(Field::Low), p.close(), p.field(Field::Volume));
                let mut out = Array2::from_elem(c.dim(), f64::NAN);
                for s in 0..c.ncols() {
                    let col = |m: &Array2<f64>| m.column(s).to_vec();
                    let vw = indicators::rolling_vwap(&col(h), &col(l), &col(c), &col(v), params.vwap_window)?;
                    out.column_mut(s).assign(&ndarray::ArrayView1::from(&vw));
                }
                Ok(out)
            }
            NamedSeries::BollUpper | NamedSeries::BollMid | NamedSeries::BollLower => {
                let close = p.close();
                let mut bands: [Array2<f64>; 3] = std::array::from_fn(|_| Array2::from_elem(close.dim(), f64::NAN));
                for s in 0..close.ncols() {
                    let b = indicators::bollinger(&close.column(s).to_vec(), params.boll_window, params.boll_k)?;
                    for (band, vals) in bands.iter_mut().zip([b.upper, b.mid, b.lower]) {
                        band.column_mut(s).assign(&ndarray::ArrayView1::from(&vals));
                    }
                }
                let [upper, mid, lower] = bands;
                // keep the sibling bands so they are computed once
                let mut out = None;
                for (which, grid) in [(NamedSeries::BollUpper, upper), (NamedSeries::BollMid, mid), (NamedSeries::BollLower, lower)] {
                    if which == s {
                        out = Some(grid);
                    } else {
                        self.cache.insert(Expr::Series(which).to_string(), Rc::new(grid));
                    }
                }
                Ok(out.expect("band selected"))
            }
        }
    }
}

fn scalar_unary(f: UnaryFn, x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    match f {
        UnaryFn::Neg => -x,
        UnaryFn::Sign => indicators::sign(x),
        UnaryFn::Abs => x.abs(),
        UnaryFn::Indicator => bool01(x != 0.0),
        UnaryFn::Rank | UnaryFn::Diff => unreachable!("not elementwise"),
    }
}

/// Evaluates a single factor (and whatever it depends on) over the panel.
pub fn evaluate(set: &FactorSet, name: &str, panel: &PricePanel, params: &IndicatorParams) -> Result<Array2<f64>> {
    let order = set.dependency_closure(&[name])?;
    let mut ev = Evaluator::new(panel, params);
    ev.run(&order)?;
    Ok(ev.factor(name).expect("evaluated").clone())
}

/// Evaluates every factor; the frame holds the selected factors in file order.
pub fn evaluate_all(set: &FactorSet, panel: &PricePanel, params: &IndicatorParams) -> Result<(FeatureFrame, EvalReport)> {
    let order = set.evaluation_order()?;
    let mut ev = Evaluator::new(panel, params);
    ev.run(&order)?;
    let names: Vec<String> = set.selected().map(|d| d.name.clone()).collect();
    let (t, s) = (panel.n_dates(), panel.n_symbols());
    let mut values = Array3::from_elem((t, s, names.len()), f64::NAN);
    for (f, name) in names.iter().enumerate() {
        values.index_axis_mut(ndarray::Axis(2), f).assign(ev.factor(name).expect("evaluated"));
    }
    let frame = FeatureFrame {
        dates: panel.dates().to_vec(),
        symbols: panel.symbols().to_vec(),
        factor_names: names,
        values,
    };
    Ok((frame, ev.into_report()))
}
