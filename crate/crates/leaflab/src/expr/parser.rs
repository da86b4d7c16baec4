//! Lexer and Pratt parser for the scalar expression grammar.
//!
//! Grammar: infix `+ - * /`, right-associative `^` with integer exponents,
//! unary minus, parentheses, calls `sqrt(..) sin(..) cos(..)`, the literal
//! `pi`, float literals, and coordinate names supplied by the caller.

use std::f64::consts::PI;

use super::Ast;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num { value: f64, is_int: bool },
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' => {
                out.push(Token {
                    tok: Tok::Plus,
                    offset: i,
                });
                i += 1;
            }
            b'-' => {
                out.push(Token {
                    tok: Tok::Minus,
                    offset: i,
                });
                i += 1;
            }
            b'*' => {
                out.push(Token {
                    tok: Tok::Star,
                    offset: i,
                });
                i += 1;
            }
            b'/' => {
                out.push(Token {
                    tok: Tok::Slash,
                    offset: i,
                });
                i += 1;
            }
            b'^' => {
                out.push(Token {
                    tok: Tok::Caret,
                    offset: i,
                });
                i += 1;
            }
            b'(' => {
                out.push(Token {
                    tok: Tok::LParen,
                    offset: i,
                });
                i += 1;
            }
            b')' => {
                out.push(Token {
                    tok: Tok::RParen,
                    offset: i,
                });
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                let mut has_dot = false;
                let mut has_exp = false;
                while i < bytes.len() {
                    match bytes[i] {
                        b'0'..=b'9' => i += 1,
                        b'.' if !has_dot && !has_exp => {
                            has_dot = true;
                            i += 1;
                        }
                        b'e' | b'E' if !has_exp => {
                            has_exp = true;
                            i += 1;
                            if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                                i += 1;
                            }
                        }
                        _ => break,
                    }
                }
                let lexeme = &text[start..i];
                let value: f64 = lexeme.parse().map_err(|_| Error::Syntax {
                    offset: start,
                    message: format!("malformed number `{lexeme}`"),
                })?;
                out.push(Token {
                    tok: Tok::Num {
                        value,
                        is_int: !has_dot && !has_exp,
                    },
                    offset: start,
                });
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(text[start..i].to_string()),
                    offset: start,
                });
            }
            _ => {
                return Err(Error::Syntax {
                    offset: i,
                    message: format!(
                        "unexpected character `{}`",
                        text[i..].chars().next().unwrap()
                    ),
                })
            }
        }
    }
    Ok(out)
}

pub struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    coords: &'a [String],
    end: usize,
}

impl<'a> Parser<'a> {
    pub fn parse(text: &str, coords: &'a [String]) -> Result<Ast> {
        let tokens = lex(text)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            coords,
            end: text.len(),
        };
        let ast = parser.expr_bp(0)?;
        if let Some(t) = parser.peek() {
            return Err(Error::Syntax {
                offset: t.offset,
                message: "unexpected trailing input".to_string(),
            });
        }
        Ok(ast)
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn starts_operand(t: &Tok) -> bool {
        matches!(
            t,
            Tok::Num { .. } | Tok::Ident(_) | Tok::LParen | Tok::Minus
        )
    }

    fn expr_bp(&mut self, min_bp: u8) -> Result<Ast> {
        let mut lhs = self.prefix()?;
        while let Some(t) = self.peek() {
            let (op, l_bp, r_bp, offset) = match t.tok {
                Tok::Plus => (Tok::Plus, 1, 2, t.offset),
                Tok::Minus => (Tok::Minus, 1, 2, t.offset),
                Tok::Star => (Tok::Star, 3, 4, t.offset),
                Tok::Slash => (Tok::Slash, 3, 4, t.offset),
                Tok::Caret => (Tok::Caret, 7, 0, t.offset),
                _ => break,
            };
            if l_bp < min_bp {
                break;
            }
            self.next();
            if op == Tok::Caret {
                let n = self.exponent()?;
                lhs = Ast::Pow(Box::new(lhs), n);
                continue;
            }
            // A missing operand is blamed on the dangling operator itself.
            match self.peek() {
                Some(t) if Self::starts_operand(&t.tok) => {}
                _ => {
                    return Err(Error::Syntax {
                        offset,
                        message: format!(
                            "operator `{}` is missing its right operand",
                            op_text(&op)
                        ),
                    })
                }
            }
            let rhs = self.expr_bp(r_bp)?;
            lhs = match op {
                Tok::Plus => Ast::Add(Box::new(lhs), Box::new(rhs)),
                Tok::Minus => Ast::Sub(Box::new(lhs), Box::new(rhs)),
                Tok::Star => Ast::Mul(Box::new(lhs), Box::new(rhs)),
                Tok::Slash => Ast::Div(Box::new(lhs), Box::new(rhs)),
                _ => unreachable!(),
            };
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Ast> {
        let t = self.next().ok_or(Error::Syntax {
            offset: self.end,
            message: "unexpected end of input".to_string(),
        })?;
        match t.tok {
            Tok::Num { value, .. } => Ok(Ast::Const(value)),
            Tok::Minus => {
                let inner = self.expr_bp(5)?;
                Ok(Ast::Neg(Box::new(inner)))
            }
            Tok::LParen => {
                let inner = self.expr_bp(0)?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => match name.as_str() {
                "pi" => Ok(Ast::Const(PI)),
                "sqrt" | "sin" | "cos" => {
                    match self.peek() {
                        Some(p) if p.tok == Tok::LParen => {
                            self.next();
                        }
                        _ => {
                            return Err(Error::Syntax {
                                offset: t.offset,
                                message: format!("function `{name}` requires parentheses"),
                            })
                        }
                    }
                    let arg = Box::new(self.expr_bp(0)?);
                    self.expect_rparen()?;
                    Ok(match name.as_str() {
                        "sqrt" => Ast::Sqrt(arg),
                        "sin" => Ast::Sin(arg),
                        _ => Ast::Cos(arg),
                    })
                }
                _ => {
                    let idx = self.coords.iter().position(|c| c == &name).ok_or(
                        Error::UnknownIdentifier {
                            name,
                            offset: t.offset,
                        },
                    )?;
                    Ok(Ast::Var(idx))
                }
            },
            other => Err(Error::Syntax {
                offset: t.offset,
                message: format!("expected an operand, found `{}`", op_text(&other)),
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        match self.next() {
            Some(t) if t.tok == Tok::RParen => Ok(()),
            Some(t) => Err(Error::Syntax {
                offset: t.offset,
                message: "expected `)`".to_string(),
            }),
            None => Err(Error::Syntax {
                offset: self.end,
                message: "expected `)` before end of input".to_string(),
            }),
        }
    }

    /// Exponents are integer literals, optionally signed or parenthesised.
    /// A chained `a^b^c` folds right-associatively into one integer.
    fn exponent(&mut self) -> Result<i32> {
        let base = self.exponent_atom()?;
        let folded = if matches!(self.peek(), Some(t) if t.tok == Tok::Caret) {
            let caret_off = self.peek().unwrap().offset;
            self.next();
            let upper = self.exponent()?;
            if upper < 0 {
                return Err(Error::NonIntegerExponent { offset: caret_off });
            }
            base.checked_pow(upper as u32)
                .ok_or(Error::NonIntegerExponent { offset: caret_off })?
        } else {
            base
        };
        Ok(folded)
    }

    fn exponent_atom(&mut self) -> Result<i32> {
        let t = self.next().ok_or(Error::Syntax {
            offset: self.end,
            message: "expected an exponent".to_string(),
        })?;
        match t.tok {
            Tok::Num { value, is_int } => {
                if !is_int || value.fract() != 0.0 || value.abs() > i32::MAX as f64 {
                    return Err(Error::NonIntegerExponent { offset: t.offset });
                }
                Ok(value as i32)
            }
            Tok::Minus => Ok(-self.exponent_atom()?),
            Tok::LParen => {
                let n = self.exponent()?;
                self.expect_rparen()?;
                Ok(n)
            }
            _ => Err(Error::NonIntegerExponent { offset: t.offset }),
        }
    }
}

fn op_text(t: &Tok) -> &'static str {
    match t {
        Tok::Plus => "+",
        Tok::Minus => "-",
        Tok::Star => "*",
        Tok::Slash => "/",
        Tok::Caret => "^",
        Tok::LParen => "(",
        Tok::RParen => ")",
        Tok::Num { .. } => "<number>",
        Tok::Ident(_) => "<identifier>",
    }
}
