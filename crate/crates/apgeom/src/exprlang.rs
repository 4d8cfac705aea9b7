//! Minimal arithmetic expression language for metric entries, frame
//! components and variation profiles.
//!
//! Grammar (see docs/exprlang.md):
//! ```text
//! expr   := term  (("+" | "-") term)*
//! term   := unary (("*" | "/") unary)*
//! unary  := "-" unary | power
//! power  := atom ("^" ("-")? number)?        // constant exponent only
//! atom   := number | ident | func "(" expr ")" | "(" expr ")"
//! ```
//! `^` is right above unary minus in binding strength, so `-x0^2` is
//! `-(x0^2)` and `sin(x0)^2` is `(sin x0)^2`.  Coordinates are `x0`, `x1`,
//! ...; any other identifier is a named parameter bound at evaluation time.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::GeomError;
use crate::scalar::Scalar;

pub type Params = BTreeMap<String, f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tan,
    Sinh,
    Cosh,
    Tanh,
    Abs,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Coordinate `x{k}`.
    Coord(usize),
    Param(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Base raised to a constant exponent.
    Pow(Box<Expr>, f64),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, GeomError> {
        let mut p = Parser {
            src: source.as_bytes(),
            pos: 0,
        };
        p.skip_ws();
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(GeomError::Syntax {
                offset: p.pos,
                expected: "end of input".into(),
            });
        }
        Ok(e)
    }

    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn coord(k: usize) -> Expr {
        Expr::Coord(k)
    }

    /// Evaluate at a coordinate point, generic over the scalar type.
    pub fn eval<S: Scalar>(&self, x: &[S], params: &Params) -> Result<S, GeomError> {
        Ok(match self {
            Expr::Num(v) => S::from_f64(*v),
            Expr::Coord(k) => {
                if *k >= x.len() {
                    return Err(GeomError::UnknownSymbol {
                        name: format!("x{k}"),
                    });
                }
                x[*k]
            }
            Expr::Param(name) => match params.get(name) {
                Some(v) => S::from_f64(*v),
                None => {
                    return Err(GeomError::UnboundParameter { name: name.clone() })
                }
            },
            Expr::Neg(e) => -e.eval(x, params)?,
            Expr::Add(a, b) => a.eval(x, params)? + b.eval(x, params)?,
            Expr::Sub(a, b) => a.eval(x, params)? - b.eval(x, params)?,
            Expr::Mul(a, b) => a.eval(x, params)? * b.eval(x, params)?,
            Expr::Div(a, b) => {
                let den = b.eval(x, params)?;
                if den.value() == 0.0 {
                    return Err(GeomError::Domain {
                        what: "division by zero".into(),
                    });
                }
                a.eval(x, params)? / den
            }
            Expr::Pow(base, e) => {
                let b = base.eval(x, params)?;
                if e.fract() == 0.0 && e.abs() <= 64.0 {
                    let k = *e as i32;
                    if k < 0 && b.value() == 0.0 {
                        return Err(GeomError::Domain {
                            what: "zero base with negative exponent".into(),
                        });
                    }
                    b.powi(k)
                } else {
                    if b.value() < 0.0 {
                        return Err(GeomError::Domain {
                            what: "fractional power of a negative base".into(),
                        });
                    }
                    b.powf(*e)
                }
            }
            Expr::Call(f, arg) => {
                let a = arg.eval(x, params)?;
                match f {
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a.value() <= 0.0 {
                            return Err(GeomError::Domain {
                                what: "log of a non-positive value".into(),
                            });
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a.value() < 0.0 {
                            return Err(GeomError::Domain {
                                what: "sqrt of a negative value".into(),
                            });
                        }
                        a.sqrt()
                    }
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tan => a.tan(),
                    Func::Sinh => a.sinh(),
                    Func::Cosh => a.cosh(),
                    Func::Tanh => a.tanh(),
                    Func::Abs => a.abs(),
                }
            }
        })
    }

    /// Parameter names referenced anywhere in the tree.
    pub fn param_names(&self, out: &mut Vec<String>) {
        match self {
            Expr::Param(n) => {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
            Expr::Neg(a) | Expr::Call(_, a) | Expr::Pow(a, _) => a.param_names(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.param_names(out);
                b.param_names(out);
            }
            _ => {}
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let prec = self.precedence();
        if prec < min {
            write!(f, "(")?;
            self.fmt_prec(f, 0)?;
            return write!(f, ")");
        }
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Coord(k) => write!(f, "x{k}"),
            Expr::Param(n) => write!(f, "{n}"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                a.fmt_prec(f, 3)
            }
            Expr::Add(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " + ")?;
                b.fmt_prec(f, 2)
            }
            Expr::Sub(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " - ")?;
                b.fmt_prec(f, 2)
            }
            Expr::Mul(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, "*")?;
                b.fmt_prec(f, 3)
            }
            Expr::Div(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, "/")?;
                b.fmt_prec(f, 3)
            }
            Expr::Pow(a, e) => {
                a.fmt_prec(f, 5)?;
                write!(f, "^{e}")
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    fn err(&self, expected: &str) -> GeomError {
        GeomError::Syntax {
            offset: self.pos,
            expected: expected.into(),
        }
    }

    fn expr(&mut self) -> Result<Expr, GeomError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                let rhs = self.term()?;
                lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'-') {
                let rhs = self.term()?;
                lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, GeomError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                let rhs = self.unary()?;
                lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'/') {
                let rhs = self.unary()?;
                lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, GeomError> {
        if self.eat(b'-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, GeomError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let neg = self.eat(b'-');
            let e = self.number()?;
            Ok(Expr::Pow(Box::new(base), if neg { -e } else { e }))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, GeomError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                self.skip_ws();
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("closing parenthesis"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let v = self.number()?;
                Ok(Expr::Num(v))
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let name = self.ident();
                self.skip_ws();
                if self.peek() == Some(b'(') {
                    let func = Func::from_name(&name)
                        .ok_or(GeomError::UnknownSymbol { name: name.clone() })?;
                    self.pos += 1;
                    self.skip_ws();
                    let arg = self.expr()?;
                    if !self.eat(b')') {
                        return Err(self.err("closing parenthesis"));
                    }
                    Ok(Expr::Call(func, Box::new(arg)))
                } else if let Some(k) = coord_index(&name) {
                    Ok(Expr::Coord(k))
                } else if Func::from_name(&name).is_some() {
                    Err(self.err("argument list after function name"))
                } else {
                    Ok(Expr::Param(name))
                }
            }
            _ => Err(self.err("number, symbol or parenthesized expression")),
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self
            .peek()
            .map(|c| c.is_ascii_alphanumeric() || c == b'_')
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn number(&mut self) -> Result<f64, GeomError> {
        let start = self.pos;
        while self
            .peek()
            .map(|c| c.is_ascii_digit() || c == b'.')
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        if let Some(b'e' | b'E') = self.peek() {
            let mark = self.pos;
            self.pos += 1;
            if let Some(b'+' | b'-') = self.peek() {
                self.pos += 1;
            }
            if self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                while self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                    self.pos += 1;
                }
            } else {
                // `e` belonged to an identifier, not this number
                self.pos = mark;
            }
        }
        if self.pos == start {
            return Err(self.err("number"));
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let v: f64 = text.parse().map_err(|_| GeomError::Syntax {
            offset: start,
            expected: "valid numeric literal".into(),
        })?;
        self.skip_ws();
        Ok(v)
    }
}

fn coord_index(name: &str) -> Option<usize> {
    let rest = name.strip_prefix('x')?;
    if rest.is_empty() || !rest.bytes().all(|c| c.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{seed, Dual};

    fn p(s: &str) -> Expr {
        Expr::parse(s).unwrap()
    }

    #[test]
    fn precedence_cases() {
        assert_eq!(
            p("exp(-2*x0)"),
            Expr::Call(
                Func::Exp,
                Box::new(Expr::Mul(
                    Box::new(Expr::Neg(Box::new(Expr::Num(2.0)))),
                    Box::new(Expr::Coord(0))
                ))
            )
        );
        // (sin x0)^2, not sin(x0^2)
        assert_eq!(
            p("sin(x0)^2"),
            Expr::Pow(Box::new(Expr::Call(Func::Sin, Box::new(Expr::Coord(0)))), 2.0)
        );
        // ^ binds tighter than unary minus
        assert_eq!(
            p("-x0^2"),
            Expr::Neg(Box::new(Expr::Pow(Box::new(Expr::Coord(0)), 2.0)))
        );
        assert_eq!(
            p("1 - 2 - 3").eval::<f64>(&[], &Params::new()).unwrap(),
            -4.0
        );
        assert_eq!(
            p("2*3 + 4/2").eval::<f64>(&[], &Params::new()).unwrap(),
            8.0
        );
    }

    #[test]
    fn unbalanced_paren_offset() {
        match Expr::parse("1/(1 - x1*x1") {
            Err(GeomError::Syntax { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_function_is_reported() {
        match Expr::parse("foo(x0)") {
            Err(GeomError::UnknownSymbol { name }) => assert_eq!(name, "foo"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eval_basics() {
        let e = p("x0*x1");
        assert_eq!(e.eval(&[2.0, 3.0], &Params::new()).unwrap(), 6.0);

        let e = p("exp(-2*x0)");
        let d = e.eval(&seed(&[0.0], 0), &Params::new()).unwrap();
        assert!((d.du - (-2.0)).abs() < 1e-15);
    }

    #[test]
    fn third_derivative_of_sin_is_minus_cos() {
        let e = p("sin(x0)");
        type D3 = Dual<Dual<Dual<f64>>>;
        let x = D3 {
            re: Dual {
                re: Dual::variable(0.0),
                du: Dual::constant(1.0),
            },
            du: Dual::constant(Dual::constant(1.0)),
        };
        let y = e.eval(&[x], &Params::new()).unwrap();
        assert!((y.re.du.du - 0.0).abs() < 1e-14); // second derivative
        assert!((y.du.du.du - (-1.0)).abs() < 1e-14); // third derivative
    }

    #[test]
    fn params_bind_and_missing_params_error() {
        let e = p("a*x0 + b");
        let mut params = Params::new();
        params.insert("a".into(), 2.0);
        params.insert("b".into(), 5.0);
        assert_eq!(e.eval(&[3.0], &params).unwrap(), 11.0);
        params.remove("b");
        assert!(matches!(
            e.eval(&[3.0], &params),
            Err(GeomError::UnboundParameter { .. })
        ));
    }

    #[test]
    fn domain_errors_never_nan() {
        let cases = ["log(-1)", "sqrt(-2)", "1/(x0 - x0)", "(-2)^0.5"];
        for c in cases {
            let e = p(c);
            assert!(
                matches!(e.eval(&[1.0], &Params::new()), Err(GeomError::Domain { .. })),
                "{c} should be a domain error"
            );
        }
    }

    #[test]
    fn display_round_trips() {
        for s in [
            "x0 + x1*x2",
            "-x0^2 + sin(x1)^3",
            "(x0 + 1)*(x1 - 2)/(x2 + 3)",
            "exp(-(x0 - 0.5)^2/0.1)",
            "a*cosh(x0) - tanh(b*x1)",
            "1/(1 + x0^-2)",
        ] {
            let t = p(s);
            let printed = t.to_string();
            assert_eq!(p(&printed), t, "round-trip failed for `{s}` -> `{printed}`");
        }
    }
}
