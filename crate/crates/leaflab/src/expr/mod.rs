//! Scalar expressions over named ambient coordinates.
//!
//! An [`Expression`] is parsed once, is immutable afterwards, and evaluates
//! with exact first and second derivatives by running the same tree over
//! dual-number scalars (one pass per direction).

mod parser;
mod scalar;

pub use scalar::{Dual, Scalar};

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Const(f64),
    Var(usize),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Div(Box<Ast>, Box<Ast>),
    Pow(Box<Ast>, i32),
    Neg(Box<Ast>),
    Sqrt(Box<Ast>),
    Sin(Box<Ast>),
    Cos(Box<Ast>),
}

impl Ast {
    fn eval<T: Scalar>(&self, vars: &[T]) -> Result<T> {
        Ok(match self {
            Ast::Const(c) => T::from_f64(*c),
            Ast::Var(i) => vars[*i],
            Ast::Add(a, b) => a.eval(vars)? + b.eval(vars)?,
            Ast::Sub(a, b) => a.eval(vars)? - b.eval(vars)?,
            Ast::Mul(a, b) => a.eval(vars)? * b.eval(vars)?,
            Ast::Div(a, b) => a.eval(vars)?.div_checked(b.eval(vars)?)?,
            Ast::Pow(a, n) => a.eval(vars)?.powi_checked(*n)?,
            Ast::Neg(a) => -a.eval(vars)?,
            Ast::Sqrt(a) => a.eval(vars)?.sqrt_checked()?,
            Ast::Sin(a) => a.eval(vars)?.sin(),
            Ast::Cos(a) => a.eval(vars)?.cos(),
        })
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Ast::Const(_) => None,
            Ast::Var(i) => Some(*i),
            Ast::Add(a, b) | Ast::Sub(a, b) | Ast::Mul(a, b) | Ast::Div(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
            Ast::Pow(a, _) | Ast::Neg(a) | Ast::Sqrt(a) | Ast::Sin(a) | Ast::Cos(a) => a.max_var(),
        }
    }
}

/// A parsed scalar expression of fixed arity.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    ast: Ast,
    coords: Vec<String>,
}

impl Expression {
    /// Parse `text` over the given coordinate names.
    pub fn parse(text: &str, coords: &[String]) -> Result<Self> {
        let ast = parser::Parser::parse(text, coords)?;
        Ok(Expression {
            ast,
            coords: coords.to_vec(),
        })
    }

    /// Wrap a hand-built tree (used to synthesise generator fields).
    pub(crate) fn from_ast(ast: Ast, coords: &[String]) -> Result<Self> {
        if let Some(m) = ast.max_var() {
            if m >= coords.len() {
                return Err(Error::Arity {
                    expected: coords.len(),
                    got: m + 1,
                });
            }
        }
        Ok(Expression {
            ast,
            coords: coords.to_vec(),
        })
    }

    pub fn constant(c: f64, coords: &[String]) -> Self {
        Expression {
            ast: Ast::Const(c),
            coords: coords.to_vec(),
        }
    }

    pub fn arity(&self) -> usize {
        self.coords.len()
    }

    pub fn coord_names(&self) -> &[String] {
        &self.coords
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.arity() {
            return Err(Error::Arity {
                expected: self.arity(),
                got: n,
            });
        }
        Ok(())
    }

    pub fn eval(&self, p: &[f64]) -> Result<f64> {
        self.check_len(p.len())?;
        self.ast.eval(p)
    }

    /// Directional derivative along `dir` in a single dual pass.
    pub fn directional(&self, p: &[f64], dir: &[f64]) -> Result<f64> {
        self.check_len(p.len())?;
        let vars: Vec<Dual<f64>> = p
            .iter()
            .zip(dir.iter())
            .map(|(&v, &d)| Dual::new(v, d))
            .collect();
        Ok(self.ast.eval(&vars)?.der)
    }

    pub fn gradient(&self, p: &[f64]) -> Result<DVector<f64>> {
        self.check_len(p.len())?;
        let n = p.len();
        let mut vars: Vec<Dual<f64>> = p.iter().map(|&v| Dual::new(v, 0.0)).collect();
        let mut out = DVector::zeros(n);
        for k in 0..n {
            vars[k].der = 1.0;
            out[k] = self.ast.eval(&vars)?.der;
            vars[k].der = 0.0;
        }
        Ok(out)
    }

    /// Second derivative matrix by forward-over-forward duals.
    pub fn hessian(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        self.check_len(p.len())?;
        let n = p.len();
        let mut out = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let vars: Vec<Dual<Dual<f64>>> = (0..n)
                    .map(|j| {
                        Dual::new(
                            Dual::new(p[j], if j == a { 1.0 } else { 0.0 }),
                            Dual::new(if j == b { 1.0 } else { 0.0 }, 0.0),
                        )
                    })
                    .collect();
                let v = self.ast.eval(&vars)?.der.der;
                out[(a, b)] = v;
                out[(b, a)] = v;
            }
        }
        Ok(out)
    }
}

/// Stack gradients of several expressions into a row-per-expression matrix.
pub fn jacobian(exprs: &[Expression], p: &[f64]) -> Result<DMatrix<f64>> {
    let rows = exprs.len();
    let cols = p.len();
    let mut out = DMatrix::zeros(rows, cols);
    for (r, e) in exprs.iter().enumerate() {
        let g = e.gradient(p)?;
        out.row_mut(r).copy_from(&g.transpose());
    }
    Ok(out)
}

// Printer binding powers; `wrap` adds parentheses when the context binds
// tighter than the node being printed.
fn print(ast: &Ast, coords: &[String], parent_bp: u8, out: &mut String) {
    let bp = match ast {
        Ast::Add(..) | Ast::Sub(..) => 1,
        Ast::Mul(..) | Ast::Div(..) => 3,
        Ast::Neg(..) => 5,
        Ast::Const(c) if *c < 0.0 => 5,
        Ast::Pow(..) => 7,
        _ => 9,
    };
    let wrap = parent_bp > bp;
    if wrap {
        out.push('(');
    }
    match ast {
        Ast::Const(c) => out.push_str(&format!("{c:?}")),
        Ast::Var(i) => out.push_str(&coords[*i]),
        Ast::Add(a, b) => {
            print(a, coords, 1, out);
            out.push_str(" + ");
            print(b, coords, 2, out);
        }
        Ast::Sub(a, b) => {
            print(a, coords, 1, out);
            out.push_str(" - ");
            print(b, coords, 2, out);
        }
        Ast::Mul(a, b) => {
            print(a, coords, 3, out);
            out.push_str(" * ");
            print(b, coords, 4, out);
        }
        Ast::Div(a, b) => {
            print(a, coords, 3, out);
            out.push_str(" / ");
            print(b, coords, 4, out);
        }
        Ast::Neg(a) => {
            out.push('-');
            print(a, coords, 5, out);
        }
        Ast::Pow(a, n) => {
            print(a, coords, 8, out);
            out.push('^');
            out.push_str(&n.to_string());
        }
        Ast::Sqrt(a) => {
            out.push_str("sqrt(");
            print(a, coords, 0, out);
            out.push(')');
        }
        Ast::Sin(a) => {
            out.push_str("sin(");
            print(a, coords, 0, out);
            out.push(')');
        }
        Ast::Cos(a) => {
            out.push_str("cos(");
            print(a, coords, 0, out);
            out.push(')');
        }
    }
    if wrap {
        out.push(')');
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        print(&self.ast, &self.coords, 0, &mut s);
        f.write_str(&s)
    }
}

#[cfg(test)]
pub(crate) mod test_strategies {
    use super::Ast;
    use proptest::prelude::*;

    /// Random expression trees over six coordinates, for the property suites.
    pub(crate) fn arb_ast() -> impl Strategy<Value = Ast> {
        let leaf = prop_oneof![
            (-3.0..3.0f64).prop_map(Ast::Const),
            (0usize..6).prop_map(Ast::Var),
        ];
        leaf.prop_recursive(4, 64, 8, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Ast::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Ast::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Ast::Mul(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Ast::Div(Box::new(a), Box::new(b))),
                (inner.clone(), 0i32..4).prop_map(|(a, n)| Ast::Pow(Box::new(a), n)),
                inner.clone().prop_map(|a| Ast::Neg(Box::new(a))),
                inner.clone().prop_map(|a| Ast::Sqrt(Box::new(a))),
                inner.clone().prop_map(|a| Ast::Sin(Box::new(a))),
                inner.prop_map(|a| Ast::Cos(Box::new(a))),
            ]
        })
    }
}
