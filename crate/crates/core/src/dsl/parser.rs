//! Recursive-descent parser for factor expressions.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! expr    := and
//! and     := cmp ('&' cmp)*
//! cmp     := sum (('<' | '>' | '<=' | '>=') sum)*
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | postfix
//! postfix := primary ('.' method '(' args ')')*
//! primary := number | ident | ident '(' args ')' | '(' expr ')'
//! ```
//!
//! Methods are `shift(k)`, `diff()` and `astype(int)` (a no-op, comparisons
//! already yield 0/1). `ma5`-style names desugar to `sma(Close, 5)` and
//! `adv20` to `sma(Volume, 20)`.

use super::ast::{BinOp, Expr, NamedSeries, UnaryFn, WindowFn};
use super::DslError;
use crate::panel::Field;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Op(BinOp),
    Minus,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str, line: usize, col0: usize) -> Result<Vec<Token>, DslError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = col0 + i;
        let single = |tok| Token { tok, line, col };
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text.parse::<f64>().map_err(|_| DslError::Syntax {
                line,
                col,
                message: format!("bad number `{text}`"),
            })?;
            out.push(single(Tok::Num(value)));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(single(Tok::Ident(chars[start..i].iter().collect())));
            continue;
        }
        let next = chars.get(i + 1).copied();
        let (tok, width) = match (c, next) {
            ('<', Some('=')) => (Tok::Op(BinOp::Le), 2),
            ('>', Some('=')) => (Tok::Op(BinOp::Ge), 2),
            ('&', Some('&')) => (Tok::Op(BinOp::And), 2),
            ('<', _) => (Tok::Op(BinOp::Lt), 1),
            ('>', _) => (Tok::Op(BinOp::Gt), 1),
            ('≤', _) => (Tok::Op(BinOp::Le), 1),
            ('≥', _) => (Tok::Op(BinOp::Ge), 1),
            ('&', _) => (Tok::Op(BinOp::And), 1),
            ('+', _) => (Tok::Op(BinOp::Add), 1),
            ('-', _) => (Tok::Minus, 1),
            ('*', _) | ('×', _) => (Tok::Op(BinOp::Mul), 1),
            ('/', _) => (Tok::Op(BinOp::Div), 1),
            ('(', _) => (Tok::LParen, 1),
            (')', _) => (Tok::RParen, 1),
            (',', _) => (Tok::Comma, 1),
            ('.', _) => (Tok::Dot, 1),
            _ => {
                return Err(DslError::Syntax {
                    line,
                    col,
                    message: format!("unexpected character `{c}`"),
                })
            }
        };
        out.push(single(tok));
        i += width;
    }
    out.push(Token { tok: Tok::Eof, line, col: col0 + chars.len() });
    Ok(out)
}

/// Decides how bare identifiers that are not builtins are treated.
pub(crate) trait Resolver {
    fn is_factor(&self, name: &str) -> bool;
}

pub(crate) struct AnyFactor;

impl Resolver for AnyFactor {
    fn is_factor(&self, _: &str) -> bool {
        true
    }
}

struct Parser<'a, R: Resolver> {
    toks: Vec<Token>,
    pos: usize,
    resolver: &'a R,
    /// Factor being parsed, for error messages.
    context: Option<&'a str>,
}

enum Arg {
    Expr(Expr),
    /// A bare type name such as `int` in `astype(int)`.
    Type(String),
}

impl<'a, R: Resolver> Parser<'a, R> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax(&self, tok: &Token, message: impl Into<String>) -> DslError {
        DslError::Syntax { line: tok.line, col: tok.col, message: message.into() }
    }

    fn parse(mut self) -> Result<Expr, DslError> {
        let e = self.expr()?;
        let t = self.peek().clone();
        match &t.tok {
            Tok::Eof => Ok(e),
            Tok::RParen => Err(DslError::UnbalancedParen { line: t.line, col: t.col }),
            other => Err(self.syntax(&t, format!("unexpected {other:?} after expression"))),
        }
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        self.binary_level(1)
    }

    fn binary_level(&mut self, level: u8) -> Result<Expr, DslError> {
        if level > 4 {
            return self.unary();
        }
        let mut lhs = self.binary_level(level + 1)?;
        loop {
            let op = match self.peek().tok {
                Tok::Op(op) if op.precedence() == level => op,
                Tok::Minus if level == BinOp::Sub.precedence() => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.binary_level(level + 1)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, DslError> {
        if self.peek().tok == Tok::Minus {
            self.next();
            return Ok(Expr::Unary(UnaryFn::Neg, Box::new(self.unary()?)));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, DslError> {
        let mut e = self.primary()?;
        while self.peek().tok == Tok::Dot {
            self.next();
            let name_tok = self.next();
            let Tok::Ident(method) = name_tok.tok.clone() else {
                return Err(self.syntax(&name_tok, "expected method name after `.`"));
            };
            self.expect_lparen(&name_tok)?;
            let args = self.args()?;
            e = match (method.as_str(), args.as_slice()) {
                ("shift", [Arg::Expr(k)]) => Expr::Window(WindowFn::Shift, Box::new(e), self.window(&name_tok, "shift", k, 0)?),
                ("diff", []) => Expr::Unary(UnaryFn::Diff, Box::new(e)),
                ("astype", [Arg::Type(t)]) if t == "int" || t == "float" => e,
                ("shift" | "diff" | "astype", _) => {
                    return Err(DslError::Arity { name: method, line: name_tok.line, col: name_tok.col })
                }
                _ => {
                    return Err(DslError::UnknownFunction { name: method, line: name_tok.line, col: name_tok.col })
                }
            };
        }
        Ok(e)
    }

    fn expect_lparen(&mut self, after: &Token) -> Result<(), DslError> {
        if self.peek().tok != Tok::LParen {
            let t = self.peek().clone();
            return Err(self.syntax(&t, format!("expected `(` after {:?}", after.tok)));
        }
        self.next();
        Ok(())
    }

    /// Parses a comma-separated list up to and including `)`.
    fn args(&mut self) -> Result<Vec<Arg>, DslError> {
        let mut out = Vec::new();
        if self.peek().tok == Tok::RParen {
            self.next();
            return Ok(out);
        }
        loop {
            let t = self.peek().clone();
            let is_type = matches!(&t.tok, Tok::Ident(n) if n == "int" || n == "float")
                && matches!(self.toks[self.pos + 1].tok, Tok::RParen | Tok::Comma);
            if is_type {
                self.next();
                let Tok::Ident(n) = t.tok else { unreachable!() };
                out.push(Arg::Type(n));
            } else {
                out.push(Arg::Expr(self.expr()?));
            }
            let t = self.next();
            match &t.tok {
                Tok::Comma => continue,
                Tok::RParen => return Ok(out),
                Tok::Eof => return Err(DslError::UnbalancedParen { line: t.line, col: t.col }),
                other => return Err(self.syntax(&t, format!("expected `,` or `)`, found {other:?}"))),
            }
        }
    }

    fn window(&self, at: &Token, func: &str, arg: &Expr, min: usize) -> Result<usize, DslError> {
        match arg {
            Expr::Const(c) if c.fract() == 0.0 && *c >= min as f64 && *c < 1e6 => Ok(*c as usize),
            _ => Err(self.syntax(at, format!("{func}: window must be an integer literal ≥ {min}"))),
        }
    }

    fn call(&mut self, name: String, at: &Token) -> Result<Expr, DslError> {
        let args = self.args()?;
        let exprs: Option<Vec<&Expr>> = args
            .iter()
            .map(|a| match a {
                Arg::Expr(e) => Some(e),
                Arg::Type(_) => None,
            })
            .collect();
        let Some(exprs) = exprs else {
            return Err(self.syntax(at, format!("type name not allowed in `{name}`")));
        };
        let arity = |n: usize| -> Result<(), DslError> {
            if exprs.len() == n {
                Ok(())
            } else {
                Err(DslError::Arity { name: name.clone(), line: at.line, col: at.col })
            }
        };
        let unary = |f: UnaryFn| -> Result<Expr, DslError> {
            arity(1)?;
            Ok(Expr::Unary(f, Box::new(exprs[0].clone())))
        };
        let windowed = |f: WindowFn| -> Result<Expr, DslError> {
            arity(2)?;
            let n = self.window(at, &name, exprs[1], f.min_window())?;
            Ok(Expr::Window(f, Box::new(exprs[0].clone()), n))
        };
        match name.as_str() {
            "rank" => unary(UnaryFn::Rank),
            "sign" => unary(UnaryFn::Sign),
            "diff" => unary(UnaryFn::Diff),
            "abs" => unary(UnaryFn::Abs),
            "I" => unary(UnaryFn::Indicator),
            "shift" => windowed(WindowFn::Shift),
            "sma" | "ma" => windowed(WindowFn::Sma),
            "std" => windowed(WindowFn::Std),
            "rsi" => windowed(WindowFn::Rsi),
            "adv" => {
                arity(1)?;
                let n = self.window(at, "adv", exprs[0], 1)?;
                Ok(Expr::Window(WindowFn::Sma, Box::new(Expr::Column(Field::Volume)), n))
            }
            _ => Err(DslError::UnknownFunction { name, line: at.line, col: at.col }),
        }
    }

    fn primary(&mut self) -> Result<Expr, DslError> {
        let t = self.next();
        match t.tok.clone() {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                let close = self.next();
                match &close.tok {
                    Tok::RParen => Ok(e),
                    Tok::Eof => Err(DslError::UnbalancedParen { line: close.line, col: close.col }),
                    other => Err(self.syntax(&close, format!("expected `)`, found {other:?}"))),
                }
            }
            Tok::Ident(name) => {
                if self.peek().tok == Tok::LParen {
                    self.next();
                    return self.call(name, &t);
                }
                self.identifier(name, &t)
            }
            Tok::RParen => Err(DslError::UnbalancedParen { line: t.line, col: t.col }),
            Tok::Eof => Err(self.syntax(&t, "unexpected end of expression")),
            other => Err(self.syntax(&t, format!("unexpected {other:?}"))),
        }
    }

    fn identifier(&self, name: String, at: &Token) -> Result<Expr, DslError> {
        if let Some(f) = crate::panel::Field::ALL.iter().find(|f| f.name() == name) {
            return Ok(Expr::Column(*f));
        }
        if let Some(s) = NamedSeries::ALL.iter().find(|s| s.name() == name) {
            return Ok(Expr::Series(*s));
        }
        for (prefix, field) in [("ma", Field::Close), ("adv", Field::Volume)] {
            if let Some(n) = name.strip_prefix(prefix).and_then(|d| d.parse::<usize>().ok()) {
                if n >= 1 {
                    return Ok(Expr::Window(WindowFn::Sma, Box::new(Expr::Column(field)), n));
                }
            }
        }
        if self.resolver.is_factor(&name) {
            return Ok(Expr::Factor(name));
        }
        Err(DslError::UnresolvedReference {
            factor: self.context.unwrap_or("<expression>").to_owned(),
            name,
            line: at.line,
            col: at.col,
        })
    }
}

/// Parses a standalone expression; unknown bare identifiers become factor
/// references, resolved later by the owning [`super::FactorSet`].
pub fn parse_expr(src: &str) -> Result<Expr, DslError> {
    parse_in_context(src, 1, 1, &AnyFactor, None)
}

pub(crate) fn parse_in_context<R: Resolver>(
    src: &str,
    line: usize,
    col0: usize,
    resolver: &R,
    context: Option<&str>,
) -> Result<Expr, DslError> {
    let toks = lex(src, line, col0)?;
    Parser { toks, pos: 0, resolver, context }.parse()
}
