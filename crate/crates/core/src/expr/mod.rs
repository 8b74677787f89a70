//! Symbolic scalar expressions over a list of named variables.
//!
//! Expressions are immutable trees. They evaluate over reals and over
//! intervals, and differentiate symbolically with light constant folding.

mod interval;
mod parse;

use std::fmt;

use thiserror::Error;

pub use interval::Interval;
pub use parse::{parse, ParseError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Ln,
    Sqrt,
    Exp,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Var(usize),
    Const(f64),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("variable index {index} out of range for {len} variables")]
    UnknownVariable { index: usize, len: usize },
    #[error("{op} undefined at this argument")]
    Domain { op: &'static str },
}

impl Expr {
    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Var(i) => Some(*i),
            Expr::Const(_) => None,
            Expr::Neg(a) | Expr::Call(_, a) | Expr::Pow(a, _) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
        }
    }

    pub fn depends_on(&self, var: usize) -> bool {
        match self {
            Expr::Var(i) => *i == var,
            Expr::Const(_) => false,
            Expr::Neg(a) | Expr::Call(_, a) | Expr::Pow(a, _) => a.depends_on(var),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on(var) || b.depends_on(var)
            }
        }
    }

    pub fn eval(&self, env: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Var(i) => *env.get(*i).ok_or(EvalError::UnknownVariable {
                index: *i,
                len: env.len(),
            })?,
            Expr::Const(c) => *c,
            Expr::Neg(a) => -a.eval(env)?,
            Expr::Call(f, a) => {
                let x = a.eval(env)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Ln if x > 0.0 => x.ln(),
                    Func::Sqrt if x >= 0.0 => x.sqrt(),
                    _ => return Err(EvalError::Domain { op: f.name() }),
                }
            }
            Expr::Add(a, b) => a.eval(env)? + b.eval(env)?,
            Expr::Sub(a, b) => a.eval(env)? - b.eval(env)?,
            Expr::Mul(a, b) => a.eval(env)? * b.eval(env)?,
            Expr::Div(a, b) => {
                let d = b.eval(env)?;
                if d == 0.0 {
                    return Err(EvalError::Domain { op: "division" });
                }
                a.eval(env)? / d
            }
            Expr::Pow(a, n) => a.eval(env)?.powi(*n as i32),
        })
    }

    /// Sound enclosure of the range over a box. A box that touches a
    /// singularity yields `EvalError::Domain`, never a partial answer.
    pub fn eval_interval(&self, env: &[Interval]) -> Result<Interval, EvalError> {
        Ok(match self {
            Expr::Var(i) => *env.get(*i).ok_or(EvalError::UnknownVariable {
                index: *i,
                len: env.len(),
            })?,
            Expr::Const(c) => Interval::point(*c),
            Expr::Neg(a) => a.eval_interval(env)?.neg(),
            Expr::Call(f, a) => {
                let x = a.eval_interval(env)?;
                let r = match f {
                    Func::Sin => Some(x.sin()),
                    Func::Cos => Some(x.cos()),
                    Func::Exp => Some(x.exp()),
                    Func::Ln => x.ln(),
                    Func::Sqrt => x.sqrt(),
                };
                r.ok_or(EvalError::Domain { op: f.name() })?
            }
            Expr::Add(a, b) => a.eval_interval(env)?.add(b.eval_interval(env)?),
            Expr::Sub(a, b) => a.eval_interval(env)?.sub(b.eval_interval(env)?),
            Expr::Mul(a, b) => a.eval_interval(env)?.mul(b.eval_interval(env)?),
            Expr::Div(a, b) => a
                .eval_interval(env)?
                .div(b.eval_interval(env)?)
                .ok_or(EvalError::Domain { op: "division" })?,
            Expr::Pow(a, n) => a.eval_interval(env)?.powi(*n),
        })
    }

    /// Symbolic partial derivative with respect to variable `var`.
    pub fn derivative(&self, var: usize) -> Expr {
        match self {
            Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Neg(a) => neg(a.derivative(var)),
            Expr::Add(a, b) => add(a.derivative(var), b.derivative(var)),
            Expr::Sub(a, b) => sub(a.derivative(var), b.derivative(var)),
            Expr::Mul(a, b) => add(
                mul(a.derivative(var), (**b).clone()),
                mul((**a).clone(), b.derivative(var)),
            ),
            Expr::Div(a, b) => {
                // (a'b - ab') / b^2
                let num = sub(
                    mul(a.derivative(var), (**b).clone()),
                    mul((**a).clone(), b.derivative(var)),
                );
                div(num, pow((**b).clone(), 2))
            }
            Expr::Pow(a, n) => match n {
                0 => Expr::Const(0.0),
                _ => mul(
                    mul(Expr::Const(*n as f64), pow((**a).clone(), n - 1)),
                    a.derivative(var),
                ),
            },
            Expr::Call(f, a) => {
                let inner = a.derivative(var);
                let a = (**a).clone();
                let outer = match f {
                    Func::Sin => call(Func::Cos, a),
                    Func::Cos => neg(call(Func::Sin, a)),
                    Func::Exp => call(Func::Exp, a),
                    Func::Ln => div(Expr::Const(1.0), a),
                    Func::Sqrt => div(Expr::Const(0.5), call(Func::Sqrt, a)),
                };
                mul(outer, inner)
            }
        }
    }

    /// Replaces every `Var(i)` by `subst[i]`.
    pub fn substitute(&self, subst: &[Expr]) -> Expr {
        match self {
            Expr::Var(i) => subst[*i].clone(),
            Expr::Const(c) => Expr::Const(*c),
            Expr::Neg(a) => neg(a.substitute(subst)),
            Expr::Call(f, a) => call(*f, a.substitute(subst)),
            Expr::Add(a, b) => add(a.substitute(subst), b.substitute(subst)),
            Expr::Sub(a, b) => sub(a.substitute(subst), b.substitute(subst)),
            Expr::Mul(a, b) => mul(a.substitute(subst), b.substitute(subst)),
            Expr::Div(a, b) => div(a.substitute(subst), b.substitute(subst)),
            Expr::Pow(a, n) => pow(a.substitute(subst), *n),
        }
    }

    /// Renders with the given variable names.
    pub fn display<'a>(&'a self, names: &'a [String]) -> DisplayExpr<'a> {
        DisplayExpr { expr: self, names }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => 3,
            Expr::Var(_) | Expr::Const(_) | Expr::Call(..) => 5,
        }
    }
}

// Folding constructors. They keep derivative trees small; no algebraic
// rewriting beyond identities with 0 and 1 and literal arithmetic.

pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

pub fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x + y),
        (Some(x), None) if x == 0.0 => b,
        (None, Some(y)) if y == 0.0 => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x - y),
        (Some(x), None) if x == 0.0 => neg(b),
        (None, Some(y)) if y == 0.0 => a,
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::Const(0.0),
        (Some(x), None) if x == 1.0 => b,
        (None, Some(y)) if y == 1.0 => a,
        (Some(x), None) if x == -1.0 => neg(b),
        (None, Some(y)) if y == -1.0 => neg(a),
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), None) if x == 0.0 => Expr::Const(0.0),
        (None, Some(y)) if y == 1.0 => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

pub fn pow(a: Expr, n: u32) -> Expr {
    match (n, a.as_const()) {
        (0, _) => Expr::Const(1.0),
        (1, _) => a,
        (_, Some(c)) => Expr::Const(c.powi(n as i32)),
        _ => Expr::Pow(Box::new(a), n),
    }
}

pub fn call(f: Func, a: Expr) -> Expr {
    Expr::Call(f, Box::new(a))
}

pub struct DisplayExpr<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

fn fmt_const(c: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let a = c.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        write!(f, "{c:e}")
    } else {
        write!(f, "{c}")
    }
}

impl DisplayExpr<'_> {
    fn child(&self, e: &Expr, f: &mut fmt::Formatter<'_>, parens: bool) -> fmt::Result {
        let d = DisplayExpr {
            expr: e,
            names: self.names,
        };
        if parens {
            write!(f, "({d})")
        } else {
            write!(f, "{d}")
        }
    }
}

impl fmt::Display for DisplayExpr<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = self.expr;
        let p = e.precedence();
        match e {
            Expr::Var(i) => match self.names.get(*i) {
                Some(name) => write!(f, "{name}"),
                None => write!(f, "${i}"),
            },
            Expr::Const(c) => fmt_const(*c, f),
            Expr::Neg(a) => {
                write!(f, "-")?;
                // "-(-x)" must not collapse to "--x".
                self.child(a, f, a.precedence() < p || matches!(**a, Expr::Neg(_)) || a.precedence() == 3)
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                self.child(a, f, false)?;
                write!(f, ")")
            }
            Expr::Pow(a, n) => {
                self.child(a, f, a.precedence() <= p)?;
                write!(f, "^{n}")
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                let op = match e {
                    Expr::Add(..) => " + ",
                    Expr::Sub(..) => " - ",
                    Expr::Mul(..) => "*",
                    _ => "/",
                };
                self.child(a, f, a.precedence() < p)?;
                write!(f, "{op}")?;
                // Left-associative: the right operand needs parentheses at
                // equal precedence.
                self.child(b, f, b.precedence() <= p)
            }
        }
    }
}
