//! Closed-form coefficient expressions in `x` and `t`.
//!
//! Grammar (standard precedence, `^` binds tighter than unary minus):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' integer)?
//! primary := number | 'x' | 't' | 'pi' | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | exp | ln | sqrt | abs | sign
//! integer := ['-' | '+'] digits | '(' ['-' | '+'] digits ')'
//! ```
//!
//! Exponents are restricted to integer constants so that [`Expr::differentiate`]
//! stays inside the node set. `sign` is part of the node set because it is the
//! derivative of `abs` (with `abs'(0) = 0`).

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Sign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Expression tree. Immutable once built; `Send + Sync`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at {pos}")]
    UnknownIdentifier { pos: usize, name: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("domain error in `{node}` at (x={x}, t={t}): {reason}")]
pub struct EvalError {
    pub node: String,
    pub reason: &'static str,
    pub x: f64,
    pub t: f64,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, ParseError> {
        let mut p = Parser::new(source);
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.syntax("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn x() -> Expr {
        Expr::Var(Var::X)
    }

    pub fn t() -> Expr {
        Expr::Var(Var::T)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    /// True when the tree references `var` anywhere.
    pub fn depends_on(&self, var: Var) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.depends_on(var),
            Expr::Binary(_, a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    pub fn eval(&self, x: f64, t: f64) -> Result<f64, EvalError> {
        let fail = |node: &Expr, reason| EvalError {
            node: node.to_string(),
            reason,
            x,
            t,
        };
        Ok(match self {
            Expr::Const(v) => *v,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::T) => t,
            Expr::Unary(op, a) => {
                let v = a.eval(x, t)?;
                match op {
                    UnaryOp::Neg => -v,
                    UnaryOp::Sin => v.sin(),
                    UnaryOp::Cos => v.cos(),
                    UnaryOp::Exp => v.exp(),
                    UnaryOp::Ln => {
                        if v <= 0.0 {
                            return Err(fail(self, "logarithm of a non-positive value"));
                        }
                        v.ln()
                    }
                    UnaryOp::Sqrt => {
                        if v < 0.0 {
                            return Err(fail(self, "square root of a negative value"));
                        }
                        v.sqrt()
                    }
                    UnaryOp::Abs => v.abs(),
                    UnaryOp::Sign => {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                let u = a.eval(x, t)?;
                let v = b.eval(x, t)?;
                match op {
                    BinaryOp::Add => u + v,
                    BinaryOp::Sub => u - v,
                    BinaryOp::Mul => u * v,
                    BinaryOp::Div => {
                        if v == 0.0 {
                            return Err(fail(self, "division by zero"));
                        }
                        u / v
                    }
                }
            }
            Expr::Pow(a, k) => {
                let v = a.eval(x, t)?;
                if *k < 0 && v == 0.0 {
                    return Err(fail(self, "negative power of zero"));
                }
                v.powi(*k)
            }
        })
    }

    /// Exact symbolic derivative. No simplification beyond folding of
    /// trivial constants, so trees may grow.
    pub fn differentiate(&self, var: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(v) => Expr::Const(if *v == var { 1.0 } else { 0.0 }),
            Expr::Unary(op, a) => {
                let da = a.differentiate(var);
                if da.as_const() == Some(0.0) {
                    return Expr::Const(0.0);
                }
                let a = (**a).clone();
                let outer = match op {
                    UnaryOp::Neg => return neg(da),
                    UnaryOp::Sin => unary(UnaryOp::Cos, a),
                    UnaryOp::Cos => neg(unary(UnaryOp::Sin, a)),
                    UnaryOp::Exp => unary(UnaryOp::Exp, a),
                    UnaryOp::Ln => return div(da, a),
                    UnaryOp::Sqrt => {
                        return div(da, mul(Expr::Const(2.0), unary(UnaryOp::Sqrt, a)))
                    }
                    UnaryOp::Abs => unary(UnaryOp::Sign, a),
                    UnaryOp::Sign => return Expr::Const(0.0),
                };
                mul(outer, da)
            }
            Expr::Binary(op, a, b) => {
                let da = a.differentiate(var);
                let db = b.differentiate(var);
                match op {
                    BinaryOp::Add => add(da, db),
                    BinaryOp::Sub => sub(da, db),
                    BinaryOp::Mul => add(mul(da, (**b).clone()), mul((**a).clone(), db)),
                    BinaryOp::Div => {
                        // (a' b - a b') / b^2
                        let num = sub(mul(da, (**b).clone()), mul((**a).clone(), db));
                        div(num, pow((**b).clone(), 2))
                    }
                }
            }
            Expr::Pow(a, k) => {
                if *k == 0 {
                    return Expr::Const(0.0);
                }
                let da = a.differentiate(var);
                let inner = if *k == 1 {
                    Expr::Const(1.0)
                } else {
                    pow((**a).clone(), k - 1)
                };
                mul(mul(Expr::Const(*k as f64), inner), da)
            }
        }
    }
}

fn unary(op: UnaryOp, a: Expr) -> Expr {
    Expr::Unary(op, Box::new(a))
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(v) => Expr::Const(-v),
        a => unary(UnaryOp::Neg, a),
    }
}

pub(crate) fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => Expr::Binary(BinaryOp::Add, Box::new(a), Box::new(b)),
    }
}

pub(crate) fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (_, Some(0.0)) => a,
        (Some(0.0), _) => neg(b),
        _ => Expr::Binary(BinaryOp::Sub, Box::new(a), Box::new(b)),
    }
}

pub(crate) fn mul(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(0.0), _) | (_, Some(0.0)) => Expr::Const(0.0),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        _ => Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b)),
    }
}

pub(crate) fn div(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(0.0), _) => Expr::Const(0.0),
        (_, Some(1.0)) => a,
        _ => Expr::Binary(BinaryOp::Div, Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, k: i32) -> Expr {
    if k == 1 {
        a
    } else {
        Expr::Pow(Box::new(a), k)
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesised form that re-parses to an equivalent tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "(-{})", -v)
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var(Var::X) => f.write_str("x"),
            Expr::Var(Var::T) => f.write_str("t"),
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(-{a})"),
            Expr::Unary(op, a) => {
                let name = match op {
                    UnaryOp::Sin => "sin",
                    UnaryOp::Cos => "cos",
                    UnaryOp::Exp => "exp",
                    UnaryOp::Ln => "ln",
                    UnaryOp::Sqrt => "sqrt",
                    UnaryOp::Abs => "abs",
                    UnaryOp::Sign => "sign",
                    UnaryOp::Neg => unreachable!(),
                };
                write!(f, "{name}({a})")
            }
            Expr::Binary(op, a, b) => {
                let sym = match op {
                    BinaryOp::Add => '+',
                    BinaryOp::Sub => '-',
                    BinaryOp::Mul => '*',
                    BinaryOp::Div => '/',
                };
                write!(f, "({a} {sym} {b})")
            }
            Expr::Pow(a, k) => write!(f, "({a}^({k}))"),
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(s: &'a str) -> Self {
        Parser {
            src: s.as_bytes(),
            pos: 0,
        }
    }

    fn syntax(&self, msg: &str) -> ParseError {
        ParseError::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                let rhs = self.term()?;
                lhs = Expr::Binary(BinaryOp::Add, Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'-') {
                let rhs = self.term()?;
                lhs = Expr::Binary(BinaryOp::Sub, Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                let rhs = self.unary()?;
                lhs = Expr::Binary(BinaryOp::Mul, Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'/') {
                let rhs = self.unary()?;
                lhs = Expr::Binary(BinaryOp::Div, Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            let a = self.unary()?;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(a)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat(b'^') {
            let k = self.integer_exponent()?;
            return Ok(Expr::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn integer_exponent(&mut self) -> Result<i32, ParseError> {
        let paren = self.eat(b'(');
        let negative = if self.eat(b'-') {
            true
        } else {
            self.eat(b'+');
            false
        };
        self.skip_ws();
        let start = self.pos;
        let v = self.number()?;
        if v.fract() != 0.0 || v.abs() > i32::MAX as f64 {
            self.pos = start;
            return Err(self.syntax("exponent must be an integer constant"));
        }
        if paren {
            self.expect(b')')?;
        }
        let k = v as i32;
        Ok(if negative { -k } else { k })
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos > s
        };
        let int_part = digits(self);
        let mut frac_part = false;
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            frac_part = digits(self);
        }
        if !int_part && !frac_part {
            self.pos = start;
            return Err(self.syntax("expected a number"));
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if !digits(self) {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>().map_err(|_| ParseError::Syntax {
            pos: start,
            msg: format!("malformed number `{text}`"),
        })
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(Expr::Const(self.number()?)),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
                let func = match name {
                    "x" => return Ok(Expr::Var(Var::X)),
                    "t" => return Ok(Expr::Var(Var::T)),
                    "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
                    "sin" => UnaryOp::Sin,
                    "cos" => UnaryOp::Cos,
                    "exp" => UnaryOp::Exp,
                    "ln" => UnaryOp::Ln,
                    "sqrt" => UnaryOp::Sqrt,
                    "abs" => UnaryOp::Abs,
                    "sign" => UnaryOp::Sign,
                    _ => {
                        return Err(ParseError::UnknownIdentifier {
                            pos: start,
                            name: name.to_string(),
                        })
                    }
                };
                self.expect(b'(')?;
                let arg = self.expr()?;
                self.expect(b')')?;
                Ok(Expr::Unary(func, Box::new(arg)))
            }
            Some(c) => Err(self.syntax(&format!("unexpected character `{}`", c as char))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ev(s: &str, x: f64, t: f64) -> f64 {
        Expr::parse(s).unwrap().eval(x, t).unwrap()
    }

    #[test]
    fn parses_example_coefficients() {
        assert_eq!(ev("1 - 0.25*sin(t)", 0.3, 0.0), 1.0);
        assert_eq!(ev("x", 0.5, 7.0), 0.5);
        assert_eq!(ev("-(3+x)", 1.0, 0.0), -4.0);
    }

    #[test]
    fn evaluates_constants() {
        assert_eq!(ev("exp(0)", 0.1, 0.2), 1.0);
        assert_eq!(ev("sin(pi/2)", 0.1, 0.2), 1.0);
        let v = ev("1 - 0.25*sin(t)", 0.0, PI / 2.0);
        assert!((v - 0.75).abs() < 1e-15);
    }

    #[test]
    fn precedence_and_unary_minus() {
        assert_eq!(ev("-x^2", 3.0, 0.0), -9.0);
        assert_eq!(ev("2*3+4", 0.0, 0.0), 10.0);
        assert_eq!(ev("2+3*4", 0.0, 0.0), 14.0);
        assert_eq!(ev("8/4/2", 0.0, 0.0), 1.0);
        assert_eq!(ev("x^-2", 2.0, 0.0), 0.25);
        assert_eq!(ev("x^(-1)", 4.0, 0.0), 0.25);
        assert_eq!(ev("1e-3 * 2E2", 0.0, 0.0), 0.2);
        assert_eq!(ev(".5 + 1.", 0.0, 0.0), 1.5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Expr::parse("1 + y"),
            Err(ParseError::UnknownIdentifier { pos: 4, .. })
        ));
        assert!(matches!(Expr::parse("1 +"), Err(ParseError::Syntax { .. })));
        assert!(matches!(Expr::parse("(1"), Err(ParseError::Syntax { .. })));
        assert!(matches!(Expr::parse("x^1.5"), Err(ParseError::Syntax { .. })));
        assert!(matches!(Expr::parse("x^t"), Err(ParseError::Syntax { .. })));
        assert!(matches!(Expr::parse("2 3"), Err(ParseError::Syntax { pos: 2, .. })));
    }

    #[test]
    fn domain_errors_name_the_node() {
        let e = Expr::parse("1 + 1/(x-1)").unwrap();
        let err = e.eval(1.0, 0.0).unwrap_err();
        assert_eq!(err.reason, "division by zero");
        assert!(err.node.contains('/'));
        assert!(Expr::parse("ln(x)").unwrap().eval(0.0, 0.0).is_err());
        assert!(Expr::parse("sqrt(x-2)").unwrap().eval(1.0, 0.0).is_err());
        assert!(Expr::parse("x^-1").unwrap().eval(0.0, 0.0).is_err());
    }

    #[test]
    fn derivative_examples() {
        let d = Expr::parse("sin(t)").unwrap().differentiate(Var::T);
        assert_eq!(d.eval(0.0, 0.0).unwrap(), 1.0);
        let d = Expr::parse("1 - 0.25*sin(t)").unwrap().differentiate(Var::T);
        assert_eq!(d.eval(0.3, 0.0).unwrap(), -0.25);
        let d = Expr::parse("1 - 0.25*sin(t) + exp(cos(t))").unwrap().differentiate(Var::X);
        for &(x, t) in &[(0.0, 0.0), (0.3, 1.7), (1.0, -2.0)] {
            assert_eq!(d.eval(x, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn abs_derivative_convention() {
        let d = Expr::parse("abs(x)").unwrap().differentiate(Var::X);
        assert_eq!(d.eval(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(d.eval(-0.5, 0.0).unwrap(), -1.0);
        assert_eq!(d.eval(0.5, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn display_round_trips() {
        for s in ["-(3+x)", "x^-2 * sqrt(t + 2)", "-1.5e-7 - -x", "ln(2)/sign(x - 0.5)"] {
            let e = Expr::parse(s).unwrap();
            let again = Expr::parse(&e.to_string()).unwrap();
            assert_eq!(e.eval(0.7, 0.3).unwrap(), again.eval(0.7, 0.3).unwrap(), "{s}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Sources over the full grammar whose value is defined everywhere.
        fn safe_source() -> impl Strategy<Value = String> {
            let leaf = prop_oneof![
                (-2.0f64..2.0).prop_map(|c| format!("{c}")),
                Just("x".to_string()),
                Just("t".to_string()),
                Just("pi".to_string()),
            ];
            leaf.prop_recursive(3, 24, 2, |inner| {
                prop_oneof![
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) + ({b})")),
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) - {b}")),
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})*({b})")),
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) / (1.5 + ({b})^2)")),
                    inner.clone().prop_map(|a| format!("sin({a})")),
                    inner.clone().prop_map(|a| format!("cos({a})")),
                    inner.clone().prop_map(|a| format!("exp(sin({a}))")),
                    inner.clone().prop_map(|a| format!("ln(1 + ({a})^2)")),
                    inner.clone().prop_map(|a| format!("sqrt(2 + cos({a}))")),
                    inner.clone().prop_map(|a| format!("abs(2 + sin({a}))")),
                    inner.clone().prop_map(|a| format!("-{a}")),
                    (inner, 1i32..4).prop_map(|(a, k)| format!("(1 + ({a})^2)^-{k}")),
                ]
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]

            #[test]
            fn derivative_matches_central_difference(
                src in safe_source(),
                x in -1.0f64..1.0,
                t in -1.0f64..1.0,
                wrt_t in any::<bool>(),
            ) {
                let e = Expr::parse(&src).unwrap();
                let var = if wrt_t { Var::T } else { Var::X };
                let h = 1e-5;
                let fd = if wrt_t {
                    (e.eval(x, t + h).unwrap() - e.eval(x, t - h).unwrap()) / (2.0 * h)
                } else {
                    (e.eval(x + h, t).unwrap() - e.eval(x - h, t).unwrap()) / (2.0 * h)
                };
                let v = e.differentiate(var).eval(x, t).unwrap();
                prop_assert!((v - fd).abs() <= 1e-6 * (1.0 + v.abs()), "{src}: {v} vs {fd}");
            }

            #[test]
            fn print_then_parse_preserves_values(
                src in safe_source(),
                x in -1.0f64..1.0,
                t in -1.0f64..1.0,
            ) {
                let e = Expr::parse(&src).unwrap();
                let again = Expr::parse(&e.to_string()).unwrap();
                let (a, b) = (e.eval(x, t).unwrap(), again.eval(x, t).unwrap());
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{src}");
            }
        }
    }
}
