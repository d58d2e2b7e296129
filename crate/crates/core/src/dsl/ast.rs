use std::fmt;

use crate::panel::Field;

/// Indicator series whose parameters come from [`super::IndicatorParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NamedSeries {
    Vwap,
    MacdDiff,
    /// Spelled `rsi_14`; the window is the configured RSI window.
    Rsi,
    BollUpper,
    BollMid,
    BollLower,
}

impl NamedSeries {
    pub const ALL: [NamedSeries; 6] = [
        NamedSeries::Vwap,
        NamedSeries::MacdDiff,
        NamedSeries::Rsi,
        NamedSeries::BollUpper,
        NamedSeries::BollMid,
        NamedSeries::BollLower,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NamedSeries::Vwap => "vwap",
            NamedSeries::MacdDiff => "macd_diff",
            NamedSeries::Rsi => "rsi_14",
            NamedSeries::BollUpper => "boll_upper",
            NamedSeries::BollMid => "boll_mid",
            NamedSeries::BollLower => "boll_lower",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryFn {
    Neg,
    /// Cross-sectional rank per date.
    Rank,
    Sign,
    Diff,
    /// `I(x)`: 1 where `x` is non-zero, else 0.
    Indicator,
    Abs,
}

impl UnaryFn {
    pub fn name(self) -> &'static str {
        match self {
            UnaryFn::Neg => "-",
            UnaryFn::Rank => "rank",
            UnaryFn::Sign => "sign",
            UnaryFn::Diff => "diff",
            UnaryFn::Indicator => "I",
            UnaryFn::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WindowFn {
    Shift,
    Sma,
    Std,
    Rsi,
}

impl WindowFn {
    pub fn name(self) -> &'static str {
        match self {
            WindowFn::Shift => "shift",
            WindowFn::Sma => "sma",
            WindowFn::Std => "std",
            WindowFn::Rsi => "rsi",
        }
    }

    pub fn min_window(self) -> usize {
        match self {
            WindowFn::Shift => 0,
            WindowFn::Sma | WindowFn::Rsi => 1,
            WindowFn::Std => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Gt,
    Le,
    Ge,
    And,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Lt => "<",
            BinOp::Gt => ">",
            BinOp::Le => "<=",
            BinOp::Ge => ">=",
            BinOp::And => "&",
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            BinOp::And => 1,
            BinOp::Lt | BinOp::Gt | BinOp::Le | BinOp::Ge => 2,
            BinOp::Add | BinOp::Sub => 3,
            BinOp::Mul | BinOp::Div => 4,
        }
    }
}

const UNARY_PRECEDENCE: u8 = 5;
const ATOM_PRECEDENCE: u8 = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Column(Field),
    Series(NamedSeries),
    /// Reference to another factor by name.
    Factor(String),
    Unary(UnaryFn, Box<Expr>),
    Window(WindowFn, Box<Expr>, usize),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => op.precedence(),
            Expr::Unary(UnaryFn::Neg, _) => UNARY_PRECEDENCE,
            _ => ATOM_PRECEDENCE,
        }
    }

    /// Names of factors referenced anywhere in the tree.
    pub fn factor_refs(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Factor(name) = e {
                out.push(name.as_str());
            }
        });
        out
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Unary(_, a) | Expr::Window(_, a, _) => a.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Const(_) | Expr::Column(_) | Expr::Series(_) | Expr::Factor(_) => {}
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

/// Prints with the minimum parentheses needed to reparse the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Column(c) => f.write_str(c.name()),
            Expr::Series(s) => f.write_str(s.name()),
            Expr::Factor(name) => f.write_str(name),
            Expr::Unary(UnaryFn::Neg, a) => {
                f.write_str("-")?;
                a.fmt_child(f, UNARY_PRECEDENCE)
            }
            Expr::Unary(UnaryFn::Diff, a) if a.precedence() == ATOM_PRECEDENCE => write!(f, "{a}.diff()"),
            Expr::Unary(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Window(WindowFn::Shift, a, k) if a.precedence() == ATOM_PRECEDENCE => write!(f, "{a}.shift({k})"),
            Expr::Window(func, a, n) => write!(f, "{}({a}, {n})", func.name()),
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                a.fmt_child(f, p)?;
                write!(f, " {} ", op.symbol())?;
                // left-associative: an equal-precedence right child needs parens
                b.fmt_child(f, p + 1)
            }
        }
    }
}
