//! A minimal arithmetic expression grammar for drift and diffusion
//! coefficients: `+ - * / ^`, unary minus, parentheses, the functions
//! `exp`, `sin`, `cos`, `abs`, numeric literals (including scientific
//! notation), and the single variable `x`.
//!
//! `^` is right-associative and binds tighter than unary minus, so
//! `-x^2` parses as `-(x^2)`. Parse errors carry the byte offset of the
//! offending token.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Exp(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Abs(Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Parse {
                msg: format!("unexpected trailing input `{}`", p.tokens[p.pos].0),
                pos: p.tokens[p.pos].1,
            });
        }
        Ok(e)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var => x,
            Expr::Neg(e) => -e.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => a.eval(x).powf(b.eval(x)),
            Expr::Exp(e) => e.eval(x).exp(),
            Expr::Sin(e) => e.eval(x).sin(),
            Expr::Cos(e) => e.eval(x).cos(),
            Expr::Abs(e) => e.eval(x).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "{v}"),
            Tok::Ident(s) => write!(f, "{s}"),
            Tok::Plus => write!(f, "+"),
            Tok::Minus => write!(f, "-"),
            Tok::Star => write!(f, "*"),
            Tok::Slash => write!(f, "/"),
            Tok::Caret => write!(f, "^"),
            Tok::LParen => write!(f, "("),
            Tok::RParen => write!(f, ")"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push((Tok::Plus, i));
                i += 1;
            }
            '-' => {
                out.push((Tok::Minus, i));
                i += 1;
            }
            '*' => {
                out.push((Tok::Star, i));
                i += 1;
            }
            '/' => {
                out.push((Tok::Slash, i));
                i += 1;
            }
            '^' => {
                out.push((Tok::Caret, i));
                i += 1;
            }
            '(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            ')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                // Optional exponent part, careful not to swallow `e` alone.
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| Error::Parse {
                    msg: format!("bad number literal `{text}`"),
                    pos: start,
                })?;
                out.push((Tok::Num(v), start));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, 'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
            }
            other => {
                return Err(Error::Parse {
                    msg: format!("unexpected character `{other}`"),
                    pos: i,
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn bump(&mut self) -> Option<(Tok, usize)> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|&(_, p)| p)
            .unwrap_or_else(|| self.tokens.last().map(|&(_, p)| p + 1).unwrap_or(0))
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(op) = self.peek() {
            let op = match op {
                Tok::Plus => true,
                Tok::Minus => false,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = if op {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek() {
            let mul = match op {
                Tok::Star => true,
                Tok::Slash => false,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = if mul {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            self.bump();
            // Right-associative; exponent may carry its own unary minus.
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let pos = self.here();
        match self.bump() {
            Some((Tok::Num(v), _)) => Ok(Expr::Num(v)),
            Some((Tok::Ident(name), p)) => match name.as_str() {
                "x" => Ok(Expr::Var),
                "exp" | "sin" | "cos" | "abs" => {
                    if !matches!(self.peek(), Some(Tok::LParen)) {
                        return Err(Error::Parse {
                            msg: format!("function `{name}` needs parentheses"),
                            pos: self.here(),
                        });
                    }
                    self.bump();
                    let arg = self.expr()?;
                    match self.bump() {
                        Some((Tok::RParen, _)) => {}
                        _ => {
                            return Err(Error::Parse {
                                msg: "missing `)`".into(),
                                pos: self.here(),
                            })
                        }
                    }
                    let arg = Box::new(arg);
                    Ok(match name.as_str() {
                        "exp" => Expr::Exp(arg),
                        "sin" => Expr::Sin(arg),
                        "cos" => Expr::Cos(arg),
                        _ => Expr::Abs(arg),
                    })
                }
                other => Err(Error::Parse {
                    msg: format!("unknown identifier `{other}` (only x, exp, sin, cos, abs)"),
                    pos: p,
                }),
            },
            Some((Tok::LParen, _)) => {
                let e = self.expr()?;
                match self.bump() {
                    Some((Tok::RParen, _)) => Ok(e),
                    _ => Err(Error::Parse {
                        msg: "missing `)`".into(),
                        pos: self.here(),
                    }),
                }
            }
            Some((tok, p)) => Err(Error::Parse {
                msg: format!("unexpected `{tok}`"),
                pos: p,
            }),
            None => Err(Error::Parse {
                msg: "unexpected end of input".into(),
                pos,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eval(src: &str, x: f64) -> f64 {
        Expr::parse(src).unwrap().eval(x)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval("2+3*4", 0.0), 14.0);
        assert_eq!(eval("2^3^2", 0.0), 512.0); // right-assoc
        assert_eq!(eval("-x^2", 3.0), -9.0); // -(x^2)
        assert_eq!(eval("(2+3)*4", 0.0), 20.0);
        assert_eq!(eval("2^-2", 0.0), 0.25);
        assert_eq!(eval("6/3/2", 0.0), 1.0); // left-assoc
        assert_eq!(eval("1-2-3", 0.0), -4.0);
    }

    #[test]
    fn functions_and_literals() {
        assert_relative_eq!(eval("exp(-x^2/2)", 1.5), (-1.125f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(eval("sin(x)+cos(x)", 0.7), 0.7f64.sin() + 0.7f64.cos());
        assert_eq!(eval("abs(-3.5)", 0.0), 3.5);
        assert_eq!(eval("1e-3 + 2.5E2", 0.0), 250.001);
        assert_eq!(eval("1.5e+1", 0.0), 15.0);
    }

    #[test]
    fn errors_carry_positions() {
        match Expr::parse("2 + $") {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("{other:?}"),
        }
        match Expr::parse("exp 2") {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("parentheses")),
            other => panic!("{other:?}"),
        }
        match Expr::parse("2 * y") {
            Err(Error::Parse { msg, pos }) => {
                assert!(msg.contains("unknown identifier"));
                assert_eq!(pos, 4);
            }
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("(1+2").is_err());
        assert!(Expr::parse("1 2").is_err());
        assert!(Expr::parse("").is_err());
    }
}
