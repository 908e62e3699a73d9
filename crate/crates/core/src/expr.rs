//! Restricted expression grammar for map definitions.
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;        (* divisor must be constant *)
//! unary   = "-" unary | power ;
//! power   = atom [ "^" integer ] ;
//! atom    = number | ident | func "(" expr ")" | "(" expr ")" ;
//! func    = "sin" | "cos" | "exp" ;
//! ident   = "p" | "p" digits        (* parameter components, p = p0 *)
//!         | "x" | "y" | "x" digits  (* fiber coordinates, x = x0, y = x1 *)
//!         | "a" digits              (* address letter as a number, a0 = current letter *)
//!         | "pi" ;
//! ```
//!
//! Expressions are evaluated over any [`Scalar`], which is how the same
//! definition drives plain evaluation and truncated Taylor propagation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::symbolic::Letter;

/// Arithmetic needed to evaluate an [`Expr`].
pub trait Scalar: Clone {
    fn lift(&self, v: f64) -> Self;
    fn value(&self) -> f64;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn scale(&self, k: f64) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
}

impl Scalar for f64 {
    fn lift(&self, v: f64) -> f64 {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn add(&self, o: &f64) -> f64 {
        self + o
    }
    fn sub(&self, o: &f64) -> f64 {
        self - o
    }
    fn mul(&self, o: &f64) -> f64 {
        self * o
    }
    fn neg(&self) -> f64 {
        -self
    }
    fn scale(&self, k: f64) -> f64 {
        self * k
    }
    fn sin(&self) -> f64 {
        f64::sin(*self)
    }
    fn cos(&self) -> f64 {
        f64::cos(*self)
    }
    fn exp(&self) -> f64 {
        f64::exp(*self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(f64),
    Param(usize),
    Var(usize),
    Letter(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, u32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0, src };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(LabError::Config(format!("trailing input in expression `{src}`")));
        }
        Ok(e.fold())
    }

    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b)).fold()
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b)).fold()
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Highest parameter index used plus one.
    pub fn param_arity(&self) -> usize {
        self.max_index(|e| if let Expr::Param(i) = e { Some(*i) } else { None })
    }

    pub fn var_arity(&self) -> usize {
        self.max_index(|e| if let Expr::Var(i) = e { Some(*i) } else { None })
    }

    pub fn letter_arity(&self) -> usize {
        self.max_index(|e| if let Expr::Letter(i) = e { Some(*i) } else { None })
    }

    fn max_index(&self, pick: fn(&Expr) -> Option<usize>) -> usize {
        let mut best = 0;
        self.visit(&mut |e| {
            if let Some(i) = pick(e) {
                best = best.max(i + 1);
            }
        });
        best
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => a.visit(f),
            _ => {}
        }
    }

    /// Evaluation at plain reals.
    pub fn eval(&self, params: &[f64], vars: &[f64], address: &[Letter]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Param(i) => params[*i],
            Expr::Var(i) => vars[*i],
            Expr::Letter(i) => address[*i] as f64,
            Expr::Add(a, b) => a.eval(params, vars, address) + b.eval(params, vars, address),
            Expr::Sub(a, b) => a.eval(params, vars, address) - b.eval(params, vars, address),
            Expr::Mul(a, b) => a.eval(params, vars, address) * b.eval(params, vars, address),
            Expr::Neg(a) => -a.eval(params, vars, address),
            Expr::Pow(a, k) => a.eval(params, vars, address).powi(*k as i32),
            Expr::Sin(a) => a.eval(params, vars, address).sin(),
            Expr::Cos(a) => a.eval(params, vars, address).cos(),
            Expr::Exp(a) => a.eval(params, vars, address).exp(),
        }
    }

    /// Evaluation over a generic scalar. `like` supplies the lifting context
    /// for constants.
    pub fn eval_scalar<T: Scalar>(&self, like: &T, params: &[T], vars: &[T], address: &[Letter]) -> T {
        let rec = |e: &Expr| e.eval_scalar(like, params, vars, address);
        match self {
            Expr::Const(c) => like.lift(*c),
            Expr::Param(i) => params[*i].clone(),
            Expr::Var(i) => vars[*i].clone(),
            Expr::Letter(i) => like.lift(address[*i] as f64),
            Expr::Add(a, b) => rec(a).add(&rec(b)),
            Expr::Sub(a, b) => rec(a).sub(&rec(b)),
            Expr::Mul(a, b) => match (a.as_const(), b.as_const()) {
                (Some(c), _) => rec(b).scale(c),
                (_, Some(c)) => rec(a).scale(c),
                _ => rec(a).mul(&rec(b)),
            },
            Expr::Neg(a) => rec(a).neg(),
            Expr::Pow(a, k) => {
                let base = rec(a);
                let mut acc = like.lift(1.0);
                for _ in 0..*k {
                    acc = acc.mul(&base);
                }
                acc
            }
            Expr::Sin(a) => rec(a).sin(),
            Expr::Cos(a) => rec(a).cos(),
            Expr::Exp(a) => rec(a).exp(),
        }
    }

    /// Symbolic partial derivative with respect to fiber coordinate `j`.
    pub fn diff_var(&self, j: usize) -> Expr {
        self.diff(&|e| matches!(e, Expr::Var(i) if *i == j))
    }

    /// Symbolic partial derivative with respect to parameter component `j`.
    pub fn diff_param(&self, j: usize) -> Expr {
        self.diff(&|e| matches!(e, Expr::Param(i) if *i == j))
    }

    fn diff(&self, is_var: &dyn Fn(&Expr) -> bool) -> Expr {
        use Expr::*;
        let b = |e: Expr| Box::new(e);
        let out = match self {
            Const(_) | Letter(_) => Const(0.0),
            Param(_) | Var(_) => Const(if is_var(self) { 1.0 } else { 0.0 }),
            Add(x, y) => Add(b(x.diff(is_var)), b(y.diff(is_var))),
            Sub(x, y) => Sub(b(x.diff(is_var)), b(y.diff(is_var))),
            Mul(x, y) => Add(
                b(Mul(b(x.diff(is_var)), y.clone())),
                b(Mul(x.clone(), b(y.diff(is_var)))),
            ),
            Neg(x) => Neg(b(x.diff(is_var))),
            Pow(x, k) => match k {
                0 => Const(0.0),
                1 => x.diff(is_var),
                _ => Mul(b(Mul(b(Const(*k as f64)), b(Pow(x.clone(), k - 1)))), b(x.diff(is_var))),
            },
            Sin(x) => Mul(b(Cos(x.clone())), b(x.diff(is_var))),
            Cos(x) => Neg(b(Mul(b(Sin(x.clone())), b(x.diff(is_var))))),
            Exp(x) => Mul(b(Exp(x.clone())), b(x.diff(is_var))),
        };
        out.fold()
    }

    /// Constant folding and trivial identity removal.
    pub fn fold(self) -> Expr {
        use Expr::*;
        match self {
            Add(x, y) => match (x.fold(), y.fold()) {
                (Const(a), Const(b)) => Const(a + b),
                (Const(z), e) | (e, Const(z)) if z == 0.0 => e,
                (a, b) => Add(Box::new(a), Box::new(b)),
            },
            Sub(x, y) => match (x.fold(), y.fold()) {
                (Const(a), Const(b)) => Const(a - b),
                (e, Const(z)) if z == 0.0 => e,
                (Const(z), e) if z == 0.0 => Neg(Box::new(e)).fold(),
                (a, b) => Sub(Box::new(a), Box::new(b)),
            },
            Mul(x, y) => match (x.fold(), y.fold()) {
                (Const(a), Const(b)) => Const(a * b),
                (Const(z), _) | (_, Const(z)) if z == 0.0 => Const(0.0),
                (Const(o), e) | (e, Const(o)) if o == 1.0 => e,
                (a, b) => Mul(Box::new(a), Box::new(b)),
            },
            Neg(x) => match x.fold() {
                Const(a) => Const(-a),
                Neg(inner) => *inner,
                e => Neg(Box::new(e)),
            },
            Pow(x, k) => match (x.fold(), k) {
                (_, 0) => Const(1.0),
                (e, 1) => e,
                (Const(a), k) => Const(a.powi(k as i32)),
                (e, k) => Pow(Box::new(e), k),
            },
            Sin(x) => match x.fold() {
                Const(a) => Const(a.sin()),
                e => Sin(Box::new(e)),
            },
            Cos(x) => match x.fold() {
                Const(a) => Const(a.cos()),
                e => Cos(Box::new(e)),
            },
            Exp(x) => match x.fold() {
                Const(a) => Const(a.exp()),
                e => Exp(Box::new(e)),
            },
            e => e,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Param(i) => write!(f, "p{i}"),
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Letter(i) => write!(f, "a{i}"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Pow(a, k) => write!(f, "({a}^{k})"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| LabError::Config(format!("bad number `{text}` in `{src}`")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(LabError::Config(format!("unexpected character `{c}` in `{src}`")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Tok>,
    pos: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn eat_op(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn err(&self, what: &str) -> LabError {
        LabError::Config(format!("{what} in expression `{}`", self.src))
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_op('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat_op('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_op('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat_op('/') {
                let rhs = self.unary()?.fold();
                match rhs {
                    Expr::Const(c) if c != 0.0 => {
                        lhs = Expr::Mul(Box::new(lhs), Box::new(Expr::Const(1.0 / c)));
                    }
                    _ => return Err(self.err("division by a non-constant or zero")),
                }
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_op('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat_op('^') {
            match self.tokens.get(self.pos).cloned() {
                Some(Tok::Num(v)) if v >= 0.0 && v.fract() == 0.0 && v <= 64.0 => {
                    self.pos += 1;
                    return Ok(Expr::Pow(Box::new(base), v as u32));
                }
                _ => return Err(self.err("exponent must be a small nonnegative integer")),
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let tok = self.tokens.get(self.pos).cloned().ok_or_else(|| self.err("unexpected end"))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Op('(') => {
                let e = self.expr()?;
                if !self.eat_op(')') {
                    return Err(self.err("missing `)`"));
                }
                Ok(e)
            }
            Tok::Ident(name) => {
                if matches!(name.as_str(), "sin" | "cos" | "exp") {
                    if !self.eat_op('(') {
                        return Err(self.err("function call needs `(`"));
                    }
                    let arg = Box::new(self.expr()?);
                    if !self.eat_op(')') {
                        return Err(self.err("missing `)`"));
                    }
                    return Ok(match name.as_str() {
                        "sin" => Expr::Sin(arg),
                        "cos" => Expr::Cos(arg),
                        _ => Expr::Exp(arg),
                    });
                }
                ident(&name).ok_or_else(|| self.err(&format!("unknown identifier `{name}`")))
            }
            Tok::Op(c) => Err(self.err(&format!("unexpected `{c}`"))),
        }
    }
}

fn ident(name: &str) -> Option<Expr> {
    match name {
        "p" => return Some(Expr::Param(0)),
        "x" => return Some(Expr::Var(0)),
        "y" => return Some(Expr::Var(1)),
        "pi" => return Some(Expr::Const(std::f64::consts::PI)),
        _ => {}
    }
    let (head, digits) = name.split_at(1);
    let idx: usize = digits.parse().ok()?;
    match head {
        "p" => Some(Expr::Param(idx)),
        "x" => Some(Expr::Var(idx)),
        "a" => Some(Expr::Letter(idx)),
        _ => None,
    }
}
