//! Scalar expressions used to supply the maps `g`, `phi` and `f`.
//!
//! An [`Expr`] is an immutable syntax tree together with the ordered list of
//! variable names it was parsed against. Variables are resolved to positions
//! at parse time, so evaluation from a slice is a plain tree walk.

mod diff;
mod parse;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use parse::parse;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("variable `{0}` is not bound")]
    Unbound(String),
    #[error("expected {expected} bindings, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("non-finite result while evaluating `{0}`")]
    NonFinite(String),
    #[error("negative base {base} raised to non-integer power {exponent}")]
    Domain { base: f64, exponent: f64 },
    #[error("`{0}` is not a variable of this expression")]
    NotAVariable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Ln,
}

impl Func {
    pub(crate) fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "ln" => Func::Ln,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Ln => "ln",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Abs => x.abs(),
            Func::Ln => x.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Pi,
    /// Index into the owning expression's variable list.
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, vals: &[f64]) -> Result<f64, ExprError> {
        let v = match self {
            Node::Num(x) => *x,
            Node::Pi => std::f64::consts::PI,
            Node::Var(i) => vals[*i],
            Node::Neg(x) => -x.eval(vals)?,
            Node::Bin(op, l, r) => {
                let (l, r) = (l.eval(vals)?, r.eval(vals)?);
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => l / r,
                    BinOp::Pow => {
                        if l < 0.0 && r.fract() != 0.0 {
                            return Err(ExprError::Domain {
                                base: l,
                                exponent: r,
                            });
                        }
                        l.powf(r)
                    }
                }
            }
            Node::Call(f, x) => f.apply(x.eval(vals)?),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::NonFinite(String::new()))
        }
    }

    fn depends_on(&self, var: usize) -> bool {
        match self {
            Node::Num(_) | Node::Pi => false,
            Node::Var(i) => *i == var,
            Node::Neg(x) | Node::Call(_, x) => x.depends_on(var),
            Node::Bin(_, l, r) => l.depends_on(var) || r.depends_on(var),
        }
    }

    fn write(&self, vars: &[String], out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(x) if *x < 0.0 => write!(out, "(-{:?})", -x),
            Node::Num(x) => write!(out, "{x:?}"),
            Node::Pi => write!(out, "pi"),
            Node::Var(i) => write!(out, "{}", vars[*i]),
            Node::Neg(x) => {
                write!(out, "(-")?;
                x.write(vars, out)?;
                write!(out, ")")
            }
            Node::Bin(op, l, r) => {
                write!(out, "(")?;
                l.write(vars, out)?;
                write!(out, "{}", op.symbol())?;
                r.write(vars, out)?;
                write!(out, ")")
            }
            Node::Call(f, x) => {
                write!(out, "{}(", f.name())?;
                x.write(vars, out)?;
                write!(out, ")")
            }
        }
    }
}

/// A parsed scalar expression over a fixed, ordered set of variables.
#[derive(Debug, Clone)]
pub struct Expr {
    root: Arc<Node>,
    vars: Arc<[String]>,
}

impl Expr {
    pub(crate) fn from_parts(root: Node, vars: Arc<[String]>) -> Self {
        Expr {
            root: Arc::new(root),
            vars,
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == name)
    }

    /// Evaluates with positional bindings, in the order of [`Expr::vars`].
    pub fn eval_slice(&self, vals: &[f64]) -> Result<f64, ExprError> {
        if vals.len() != self.vars.len() {
            return Err(ExprError::Arity {
                expected: self.vars.len(),
                got: vals.len(),
            });
        }
        self.root.eval(vals).map_err(|e| match e {
            ExprError::NonFinite(_) => ExprError::NonFinite(self.to_string()),
            other => other,
        })
    }

    /// Evaluates with named bindings. Only variables the tree actually uses
    /// need to be bound.
    pub fn eval(&self, bindings: &HashMap<&str, f64>) -> Result<f64, ExprError> {
        let mut vals = vec![f64::NAN; self.vars.len()];
        for (i, name) in self.vars.iter().enumerate() {
            match bindings.get(name.as_str()) {
                Some(v) => vals[i] = *v,
                None if self.root.depends_on(i) => return Err(ExprError::Unbound(name.clone())),
                None => vals[i] = 0.0,
            }
        }
        self.eval_slice(&vals)
    }

    pub fn depends_on(&self, name: &str) -> bool {
        self.var_index(name)
            .is_some_and(|i| self.root.depends_on(i))
    }

    /// Symbolic partial derivative with respect to `var`.
    pub fn diff(&self, var: &str) -> Result<Expr, ExprError> {
        let idx = self
            .var_index(var)
            .ok_or_else(|| ExprError::NotAVariable(var.to_string()))?;
        Ok(Expr::from_parts(diff::derivative(&self.root, idx), self.vars.clone()))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.write(&self.vars, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind<'a>(pairs: &[(&'a str, f64)]) -> HashMap<&'a str, f64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn logistic_value() {
        let e = parse("u*(1-u)", &["u"]).unwrap();
        assert_eq!(e.eval(&bind(&[("u", 0.5)])).unwrap(), 0.25);
    }

    #[test]
    fn example_nonlinearity() {
        let e = parse("-x0*(1+x2)", &["x0", "x1", "x2"]).unwrap();
        // g(u, 0, phi(u, 0)) with phi(u, 0) = -u gives -u(1-u)
        for u in [-0.3, 0.0, 0.4, 1.0, 2.5] {
            let v = e.eval_slice(&[u, 0.0, -u]).unwrap();
            assert!((v + u * (1.0 - u)).abs() < 1e-15);
        }
    }

    #[test]
    fn forcing_with_zero_amplitude() {
        let e = parse("1+x*sin(2*pi*t)", &["t", "x", "v"]).unwrap();
        assert_eq!(e.eval(&bind(&[("x", 0.0), ("t", 0.3)])).unwrap(), 1.0);
    }

    #[test]
    fn coupling_at_lifted_zero() {
        let e = parse("q-p", &["p", "q"]).unwrap();
        assert_eq!(e.eval(&bind(&[("p", 1.0), ("q", 0.0)])).unwrap(), -1.0);
    }

    #[test]
    fn pole_is_an_error() {
        let e = parse("1/u", &["u"]).unwrap();
        assert!(matches!(
            e.eval(&bind(&[("u", 0.0)])),
            Err(ExprError::NonFinite(_))
        ));
        let e = parse("u^(-1)", &["u"]).unwrap();
        assert!(e.eval(&bind(&[("u", 0.0)])).is_err());
    }

    #[test]
    fn negative_base_fractional_power() {
        let e = parse("u^0.5", &["u"]).unwrap();
        assert!(matches!(
            e.eval(&bind(&[("u", -4.0)])),
            Err(ExprError::Domain { .. })
        ));
        let e = parse("u^3", &["u"]).unwrap();
        assert_eq!(e.eval(&bind(&[("u", -2.0)])).unwrap(), -8.0);
    }

    #[test]
    fn unbound_variable() {
        let e = parse("x+v", &["t", "x", "v"]).unwrap();
        assert_eq!(
            e.eval(&bind(&[("x", 1.0)])),
            Err(ExprError::Unbound("v".into()))
        );
    }

    #[test]
    fn derivatives() {
        let e = parse("u*(1-u)", &["u"]).unwrap();
        let d = e.diff("u").unwrap();
        assert_eq!(d.eval_slice(&[0.0]).unwrap(), 1.0);
        assert_eq!(d.eval_slice(&[1.0]).unwrap(), -1.0);

        let e = parse("sin(2*pi*t)", &["t"]).unwrap();
        let d = e.diff("t").unwrap();
        assert!((d.eval_slice(&[0.0]).unwrap() - 2.0 * std::f64::consts::PI).abs() < 1e-15);

        let e = parse("q-p", &["p", "q"]).unwrap();
        let d = e.diff("p").unwrap();
        for (p, q) in [(0.0, 0.0), (3.0, -1.0), (-7.5, 2.0)] {
            assert_eq!(d.eval_slice(&[p, q]).unwrap(), -1.0);
        }
        assert!(e.diff("r").is_err());
    }

    #[test]
    fn abs_derivative_undefined_at_kink() {
        let e = parse("abs(u)", &["u"]).unwrap();
        let d = e.diff("u").unwrap();
        assert_eq!(d.eval_slice(&[2.0]).unwrap(), 1.0);
        assert_eq!(d.eval_slice(&[-2.0]).unwrap(), -1.0);
        assert!(d.eval_slice(&[0.0]).is_err());
    }

    #[test]
    fn display_reparses() {
        let e = parse("-x^2 + 3*sin(x)/(1+x) - 2^-x", &["x"]).unwrap();
        let again = parse(&e.to_string(), &["x"]).unwrap();
        for x in [0.1, 0.7, 2.0] {
            assert_eq!(e.eval_slice(&[x]).unwrap(), again.eval_slice(&[x]).unwrap());
        }
    }

    #[test]
    fn shared_across_threads() {
        let e = parse("exp(-u)*cos(u)", &["u"]).unwrap();
        let expected = e.eval_slice(&[0.3]).unwrap();
        std::thread::scope(|s| {
            for _ in 0..4 {
                let e = e.clone();
                s.spawn(move || assert_eq!(e.eval_slice(&[0.3]).unwrap(), expected));
            }
        });
    }
}
