//! Formulaic alpha language.
//!
//! A factor file holds one definition per line:
//!
//! ```text
//! # comment
//! name [@Tag] = expression
//! ```
//!
//! Expressions reference OHLCV columns (`Open`, `High`, `Low`, `Close`,
//! `Volume`), configured indicator series (`vwap`, `macd_diff`, `rsi_14`,
//! `boll_upper`, `boll_mid`, `boll_lower`), moving-average shorthands
//! (`ma5`, `adv20`), functions (`rank`, `sign`, `I`, `abs`, `diff`,
//! `shift`, `sma`/`ma`, `std`, `rsi`, `adv`), and other factors by name.

mod ast;
mod eval;
mod parser;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Axis;

pub use ast::{BinOp, Expr, NamedSeries, UnaryFn, WindowFn};
pub use eval::{evaluate, evaluate_all, EvalReport, FeatureFrame};
pub use parser::parse_expr;

use crate::indicators::MacdParams;
use crate::panel::PricePanel;
use crate::{Error, Result};

/// The 43 behavioral factors shipped with the crate.
pub const BUNDLED_FACTORS: &str = include_str!("../../../../factors/behavioral_43.alpha");
/// Extra factors named in attribution discussions but absent from the table.
pub const EXTRA_FACTORS: &str = include_str!("../../../../factors/extras.alpha");

/// Short names used in attribution reports, mapped to factor-file names.
pub const ALIASES: &[(&str, &str)] = &[
    ("momentum5_rank", "alpha_momentum_5d_min_rank"),
    ("macd_rsi_product", "alpha_macd_rsi_product"),
    ("volume_above_adv20", "alpha_volume_above_adv20"),
    ("volatility_10d", "alpha_volatility_10d_rank_neg"),
    ("macd_times_lowdev", "alpha_macd_times_lowdev"),
    ("vwapdev_over_macd", "alpha_vwapdev_over_macd"),
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DslError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },

    #[error("unbalanced parenthesis at line {line}, column {col}")]
    UnbalancedParen { line: usize, col: usize },

    #[error("unknown function `{name}` at line {line}, column {col}")]
    UnknownFunction { name: String, line: usize, col: usize },

    #[error("wrong number of arguments to `{name}` at line {line}, column {col}")]
    Arity { name: String, line: usize, col: usize },

    #[error("factor `{factor}` references unknown identifier `{name}` at line {line}, column {col}")]
    UnresolvedReference { factor: String, name: String, line: usize, col: usize },

    #[error("duplicate factor `{name}` at line {line}")]
    Duplicate { name: String, line: usize },

    #[error("unknown structure tag `{tag}` at line {line}")]
    UnknownTag { tag: String, line: usize },

    #[error("cyclic factor reference: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("unknown factor `{0}`")]
    UnknownFactor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum StructureTag {
    BottomReversal,
    VolumePriceDivergence,
    MomentumHerding,
    #[default]
    Unclassified,
}

impl StructureTag {
    pub fn name(self) -> &'static str {
        match self {
            StructureTag::BottomReversal => "BottomReversal",
            StructureTag::VolumePriceDivergence => "VolumePriceDivergence",
            StructureTag::MomentumHerding => "MomentumHerding",
            StructureTag::Unclassified => "Unclassified",
        }
    }
}

impl FromStr for StructureTag {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        [
            StructureTag::BottomReversal,
            StructureTag::VolumePriceDivergence,
            StructureTag::MomentumHerding,
            StructureTag::Unclassified,
        ]
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorDefinition {
    pub name: String,
    pub tag: StructureTag,
    pub expr: Expr,
    /// 1-based line in the source file.
    pub line: usize,
}

impl fmt::Display for FactorDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if self.tag != StructureTag::Unclassified {
            write!(f, " @{}", self.tag.name())?;
        }
        write!(f, " = {}", self.expr)
    }
}

/// Parameters of the configured indicator series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndicatorParams {
    pub rsi_window: usize,
    pub macd: MacdParams,
    pub vwap_window: usize,
    pub boll_window: usize,
    pub boll_k: f64,
}

impl Default for IndicatorParams {
    fn default() -> Self {
        IndicatorParams {
            rsi_window: 14,
            macd: MacdParams::default(),
            vwap_window: 5,
            boll_window: 20,
            boll_k: 2.0,
        }
    }
}

/// Ordered set of factor definitions plus an optional input selection.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    defs: Vec<FactorDefinition>,
    index: HashMap<String, usize>,
    /// Indices of the factors exposed as model inputs, in file order.
    selected: Vec<usize>,
}

struct Known<'a>(&'a HashMap<String, usize>);

impl parser::Resolver for Known<'_> {
    fn is_factor(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(code, _)| code)
}

impl FactorSet {
    pub fn parse(source: &str) -> Result<FactorSet, DslError> {
        struct Header<'a> {
            name: String,
            tag: StructureTag,
            body: &'a str,
            body_col: usize,
            line: usize,
        }
        let mut headers = Vec::new();
        let mut index = HashMap::new();
        for (i, raw) in source.lines().enumerate() {
            let line = i + 1;
            let code = strip_comment(raw);
            if code.trim().is_empty() {
                continue;
            }
            let Some((lhs, body)) = code.split_once('=') else {
                return Err(DslError::Syntax { line, col: 1, message: "expected `name = expression`".into() });
            };
            let mut words = lhs.split_whitespace();
            let name = words.next().unwrap_or_default().to_owned();
            let valid_name = name.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
                && name.chars().all(|c| c.is_alphanumeric() || c == '_');
            if !valid_name {
                return Err(DslError::Syntax { line, col: 1, message: format!("bad factor name `{name}`") });
            }
            let tag = match words.next() {
                None => StructureTag::Unclassified,
                Some(t) => {
                    let tag = t.strip_prefix('@').unwrap_or(t);
                    tag.parse().map_err(|_| DslError::UnknownTag { tag: tag.to_owned(), line })?
                }
            };
            if let Some(extra) = words.next() {
                return Err(DslError::Syntax { line, col: 1, message: format!("unexpected `{extra}` before `=`") });
            }
            if index.insert(name.clone(), headers.len()).is_some() {
                return Err(DslError::Duplicate { name, line });
            }
            let body_col = lhs.chars().count() + 2;
            headers.push(Header { name, tag, body, body_col, line });
        }
        let known = Known(&index);
        let mut defs = Vec::with_capacity(headers.len());
        for h in headers {
            let expr = parser::parse_in_context(h.body, h.line, h.body_col, &known, Some(&h.name))?;
            defs.push(FactorDefinition { name: h.name, tag: h.tag, expr, line: h.line });
        }
        let selected = (0..defs.len()).collect();
        Ok(FactorSet { defs, index, selected })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FactorSet> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(FactorSet::parse(&text)?)
    }

    pub fn bundled() -> FactorSet {
        FactorSet::parse(BUNDLED_FACTORS).expect("bundled factor file parses")
    }

    /// Bundled factors followed by the extras file.
    pub fn bundled_with_extras() -> FactorSet {
        FactorSet::parse(&format!("{BUNDLED_FACTORS}\n{EXTRA_FACTORS}")).expect("bundled factor files parse")
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn definitions(&self) -> &[FactorDefinition] {
        &self.defs
    }

    pub fn get(&self, name: &str) -> Option<&FactorDefinition> {
        self.index.get(name).map(|&i| &self.defs[i])
    }

    /// Looks a factor up by exact name, then by alias, then with an
    /// `alpha_` prefix.
    pub fn resolve(&self, name: &str) -> Option<&FactorDefinition> {
        self.get(name)
            .or_else(|| ALIASES.iter().find(|(a, _)| *a == name).and_then(|(_, full)| self.get(full)))
            .or_else(|| self.get(&format!("alpha_{name}")))
    }

    /// Restricts model inputs to `include` (order still follows the file).
    pub fn select(&mut self, include: &[String]) -> Result<(), DslError> {
        let mut chosen = BTreeSet::new();
        for name in include {
            let def = self.resolve(name).ok_or_else(|| DslError::UnknownFactor(name.clone()))?;
            chosen.insert(self.index[&def.name]);
        }
        self.selected = chosen.into_iter().collect();
        Ok(())
    }

    pub fn selected(&self) -> impl Iterator<Item = &FactorDefinition> {
        self.selected.iter().map(|&i| &self.defs[i])
    }

    pub fn selected_names(&self) -> Vec<String> {
        self.selected().map(|d| d.name.clone()).collect()
    }

    /// Pretty-prints the set back into factor-file syntax.
    pub fn to_source(&self) -> String {
        self.defs.iter().map(|d| format!("{d}\n")).collect()
    }

    /// All definitions ordered so that dependencies come first.
    pub fn evaluation_order(&self) -> Result<Vec<&FactorDefinition>, DslError> {
        let names: Vec<&str> = self.defs.iter().map(|d| d.name.as_str()).collect();
        self.dependency_closure(&names)
    }

    /// `roots` and their transitive dependencies, dependencies first.
    pub fn dependency_closure(&self, roots: &[&str]) -> Result<Vec<&FactorDefinition>, DslError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        fn visit<'a>(
            set: &'a FactorSet,
            i: usize,
            marks: &mut [Mark],
            stack: &mut Vec<usize>,
            out: &mut Vec<&'a FactorDefinition>,
        ) -> Result<(), DslError> {
            match marks[i] {
                Mark::Done => return Ok(()),
                Mark::Active => {
                    let start = stack.iter().position(|&j| j == i).expect("on stack");
                    let mut cycle: Vec<String> = stack[start..].iter().map(|&j| set.defs[j].name.clone()).collect();
                    cycle.push(set.defs[i].name.clone());
                    return Err(DslError::Cycle(cycle));
                }
                Mark::New => {}
            }
            marks[i] = Mark::Active;
            stack.push(i);
            for dep in set.defs[i].expr.factor_refs() {
                let j = *set.index.get(dep).ok_or_else(|| DslError::UnresolvedReference {
                    factor: set.defs[i].name.clone(),
                    name: dep.to_owned(),
                    line: set.defs[i].line,
                    col: 1,
                })?;
                visit(set, j, marks, stack, out)?;
            }
            stack.pop();
            marks[i] = Mark::Done;
            out.push(&set.defs[i]);
            Ok(())
        }
        let mut marks = vec![Mark::New; self.defs.len()];
        let mut out = Vec::new();
        for root in roots {
            let &i = self.index.get(*root).ok_or_else(|| DslError::UnknownFactor((*root).to_owned()))?;
            visit(self, i, &mut marks, &mut Vec::new(), &mut out)?;
        }
        Ok(out)
    }

    /// Values of the named factors on the panel's last date, one vector
    /// (length S) per name.
    pub fn evaluate_last_row(&self, names: &[&str], panel: &PricePanel, params: &IndicatorParams) -> Result<Vec<Vec<f64>>> {
        let order = self.dependency_closure(names)?;
        let mut ev = eval::Evaluator::new(panel, params);
        ev.run(&order)?;
        let last = panel.n_dates().saturating_sub(1);
        Ok(names
            .iter()
            .map(|n| ev.factor(n).expect("evaluated").index_axis(Axis(0), last).to_vec())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_file_has_43_factors() {
        let set = FactorSet::bundled();
        assert_eq!(set.len(), 43);
        assert_eq!(set.definitions()[0].name, "alpha_signal_open_down");
        assert_eq!(set.definitions()[42].name, "alpha_macd_cross_rank");
        assert_eq!(FactorSet::bundled_with_extras().len(), 44);
    }

    #[test]
    fn bundled_round_trips_through_printer() {
        let set = FactorSet::bundled_with_extras();
        for def in set.definitions() {
            let printed = def.expr.to_string();
            assert_eq!(parse_expr(&printed).unwrap(), def.expr, "{}: {printed}", def.name);
        }
        let again = FactorSet::parse(&set.to_source()).unwrap();
        let strip = |s: &FactorSet| s.definitions().iter().map(|d| (d.name.clone(), d.tag, d.expr.clone())).collect::<Vec<_>>();
        assert_eq!(strip(&again), strip(&set));
    }

    #[test]
    fn behavioral_tags() {
        let set = FactorSet::bundled();
        let tag = |n: &str| set.get(n).unwrap().tag;
        assert_eq!(tag("alpha_rsi_bounce_strength"), StructureTag::BottomReversal);
        assert_eq!(tag("alpha_macd_cross_strength"), StructureTag::BottomReversal);
        assert_eq!(tag("alpha_volspike_times_body"), StructureTag::VolumePriceDivergence);
        assert_eq!(tag("alpha_macd_times_lowdev"), StructureTag::VolumePriceDivergence);
        assert_eq!(tag("alpha_momentum_5d_min_rank"), StructureTag::MomentumHerding);
        assert_eq!(tag("alpha_macd_rsi_product"), StructureTag::MomentumHerding);
        assert_eq!(tag("alpha_kline_body_strength"), StructureTag::Unclassified);
    }

    #[test]
    fn aliases_resolve() {
        let set = FactorSet::bundled_with_extras();
        for (alias, full) in ALIASES {
            assert_eq!(set.resolve(alias).map(|d| d.name.as_str()), Some(*full), "{alias}");
        }
        assert_eq!(set.resolve("kline_body_strength").unwrap().name, "alpha_kline_body_strength");
    }

    #[test]
    fn cycle_detected() {
        let set = FactorSet::parse("a = b\nb = a\n").unwrap();
        let err = set.evaluation_order().unwrap_err();
        let DslError::Cycle(names) = &err else { panic!("{err}") };
        assert!(names.contains(&"a".to_owned()) && names.contains(&"b".to_owned()));
        assert!(err.to_string().contains("a -> b -> a"), "{err}");
    }

    #[test]
    fn deleted_reference_names_both() {
        let src = BUNDLED_FACTORS
            .lines()
            .filter(|l| !l.starts_with("alpha_volume_spike_ratio "))
            .collect::<Vec<_>>()
            .join("\n");
        let err = FactorSet::parse(&src).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("alpha_volspike_times_body") && msg.contains("alpha_volume_spike_ratio"), "{msg}");
    }

    #[test]
    fn file_errors_carry_positions() {
        let err = FactorSet::parse("# header\nx = rank(Close\n").unwrap_err();
        assert!(matches!(err, DslError::UnbalancedParen { line: 2, .. }), "{err}");
        assert!(matches!(FactorSet::parse("x = 1\nx = 2"), Err(DslError::Duplicate { .. })));
        assert!(matches!(FactorSet::parse("x @Bogus = 1"), Err(DslError::UnknownTag { .. })));
        assert!(matches!(FactorSet::parse("x = y"), Err(DslError::UnresolvedReference { .. })));
        let err = FactorSet::parse("x = Close + nope").unwrap_err();
        let DslError::UnresolvedReference { col, .. } = err else { panic!() };
        assert_eq!(col, 13);
    }

    #[test]
    fn select_keeps_file_order() {
        let mut set = FactorSet::bundled();
        set.select(&["alpha_rsi_vs_50".into(), "kline_body_strength".into()]).unwrap();
        assert_eq!(set.selected_names(), vec!["alpha_kline_body_strength", "alpha_rsi_vs_50"]);
        assert!(set.select(&["nope".into()]).is_err());
    }
}
