//! Small arithmetic expression language used for function-valued model fields.
//!
//! Grammar: numbers, the variables `x` and `u`, the constants `pi` and `e`,
//! the operators `+ - * / ^` (with `^` right-associative and binding tighter
//! than unary minus) and the functions `sin cos exp abs sign min max`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("unexpected character '{0}' at offset {1}")]
    BadChar(char, usize),
    #[error("unexpected end of expression")]
    Eof,
    #[error("unexpected token '{0}'")]
    Unexpected(String),
    #[error("unknown identifier '{0}'")]
    UnknownIdent(String),
    #[error("function '{name}' takes {expected} argument(s), got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Sign,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "exp" => (Func::Exp, 1),
            "abs" => (Func::Abs, 1),
            "sign" => (Func::Sign, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    X,
    U,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call1(Func, Box<Node>),
    Call2(Func, Box<Node>, Box<Node>),
}

impl Node {
    fn eval(&self, x: f64, u: f64) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::X => x,
            Node::U => u,
            Node::Neg(a) => -a.eval(x, u),
            Node::Add(a, b) => a.eval(x, u) + b.eval(x, u),
            Node::Sub(a, b) => a.eval(x, u) - b.eval(x, u),
            Node::Mul(a, b) => a.eval(x, u) * b.eval(x, u),
            Node::Div(a, b) => a.eval(x, u) / b.eval(x, u),
            Node::Pow(a, b) => {
                let base = a.eval(x, u);
                match **b {
                    Node::Num(p) if p == 2.0 => base * base,
                    Node::Num(p) if p.fract() == 0.0 && p.abs() < 64.0 => base.powi(p as i32),
                    _ => base.powf(b.eval(x, u)),
                }
            }
            Node::Call1(f, a) => {
                let v = a.eval(x, u);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Abs => v.abs(),
                    Func::Sign => {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                    _ => unreachable!(),
                }
            }
            Node::Call2(f, a, b) => {
                let (p, q) = (a.eval(x, u), b.eval(x, u));
                match f {
                    Func::Min => p.min(q),
                    Func::Max => p.max(q),
                    _ => unreachable!(),
                }
            }
        }
    }

    fn mentions(&self, var: &Node) -> bool {
        match self {
            Node::X | Node::U => self == var,
            Node::Num(_) => false,
            Node::Neg(a) | Node::Call1(_, a) => a.mentions(var),
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Pow(a, b)
            | Node::Call2(_, a, b) => a.mentions(var) || b.mentions(var),
        }
    }

    /// Folds constant subtrees so repeated evaluation skips them.
    fn fold(self) -> Node {
        use Node::*;
        let folded = match self {
            Neg(a) => Neg(Box::new(a.fold())),
            Add(a, b) => Add(Box::new(a.fold()), Box::new(b.fold())),
            Sub(a, b) => Sub(Box::new(a.fold()), Box::new(b.fold())),
            Mul(a, b) => Mul(Box::new(a.fold()), Box::new(b.fold())),
            Div(a, b) => Div(Box::new(a.fold()), Box::new(b.fold())),
            Pow(a, b) => Pow(Box::new(a.fold()), Box::new(b.fold())),
            Call1(f, a) => Call1(f, Box::new(a.fold())),
            Call2(f, a, b) => Call2(f, Box::new(a.fold()), Box::new(b.fold())),
            leaf => leaf,
        };
        if !folded.mentions(&X) && !folded.mentions(&U) {
            Num(folded.eval(0.0, 0.0))
        } else {
            folded
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<Tok>, ExprError> {
    let bytes: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == '.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == 'e' || bytes[i] == 'E') {
                let save = i;
                i += 1;
                if i < bytes.len() && (bytes[i] == '+' || bytes[i] == '-') {
                    i += 1;
                }
                if i < bytes.len() && bytes[i].is_ascii_digit() {
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = bytes[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| ExprError::Unexpected(text.clone()))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(bytes[start..i].iter().collect()));
        } else {
            out.push(match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                _ => return Err(ExprError::BadChar(c, i)),
            });
            i += 1;
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Result<Tok, ExprError> {
        let t = self.toks.get(self.pos).cloned().ok_or(ExprError::Eof)?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, want: Tok) -> Result<(), ExprError> {
        let t = self.next()?;
        if t == want {
            Ok(())
        } else {
            Err(ExprError::Unexpected(format!("{t:?}")))
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.next()? {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => match name.as_str() {
                "x" => Ok(Node::X),
                "u" => Ok(Node::U),
                "pi" => Ok(Node::Num(std::f64::consts::PI)),
                "e" => Ok(Node::Num(std::f64::consts::E)),
                _ => {
                    let (f, arity) =
                        Func::lookup(&name).ok_or_else(|| ExprError::UnknownIdent(name.clone()))?;
                    self.expect(Tok::LParen)?;
                    let mut args = vec![self.expr()?];
                    while let Some(Tok::Comma) = self.peek() {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen)?;
                    if args.len() != arity {
                        return Err(ExprError::Arity {
                            name,
                            expected: arity,
                            got: args.len(),
                        });
                    }
                    let mut it = args.into_iter();
                    let a = Box::new(it.next().unwrap());
                    Ok(match it.next() {
                        None => Node::Call1(f, a),
                        Some(b) => Node::Call2(f, a, Box::new(b)),
                    })
                }
            },
            t => Err(ExprError::Unexpected(format!("{t:?}"))),
        }
    }
}

/// A parsed expression in the variables `x` and `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    src: String,
    root: Node,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let toks = tokenize(src)?;
        let mut p = Parser { toks, pos: 0 };
        let root = p.expr()?;
        if let Some(t) = p.peek() {
            return Err(ExprError::Unexpected(format!("{t:?}")));
        }
        Ok(Expr {
            src: src.to_string(),
            root: root.fold(),
        })
    }

    #[inline]
    pub fn eval(&self, x: f64, u: f64) -> f64 {
        self.root.eval(x, u)
    }

    #[inline]
    pub fn eval_x(&self, x: f64) -> f64 {
        self.root.eval(x, 0.0)
    }

    pub fn uses_x(&self) -> bool {
        self.root.mentions(&Node::X)
    }

    pub fn uses_u(&self) -> bool {
        self.root.mentions(&Node::U)
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    /// Returns the value if the expression does not depend on any variable.
    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Num(v) => Some(v),
            _ => None,
        }
    }
}

impl FromStr for Expr {
    type Err = ExprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.src)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64) -> f64 {
        Expr::parse(s).unwrap().eval(x, 0.0)
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("1+2*3", 0.0), 7.0);
        assert_eq!(ev("-2^2", 0.0), -4.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("(1+2)*3", 0.0), 9.0);
        assert_eq!(ev("8/2/2", 0.0), 2.0);
        assert_eq!(ev("2*-x", 3.0), -6.0);
    }

    #[test]
    fn functions_and_constants() {
        assert!((ev("1+0.3*sin(x)", 1.0) - (1.0 + 0.3 * 1f64.sin())).abs() < 1e-15);
        assert_eq!(ev("min(x, 2)", 5.0), 2.0);
        assert_eq!(ev("max(x, 2)", 5.0), 5.0);
        assert_eq!(ev("sign(x)", -0.1), -1.0);
        assert_eq!(ev("abs(x)^1.5", -4.0), 8.0);
        assert!((ev("pi", 0.0) - std::f64::consts::PI).abs() < 1e-15);
        assert!((ev("exp(1)-e", 0.0)).abs() < 1e-15);
        assert_eq!(ev("1e-3*x", 2.0), 0.002);
    }

    #[test]
    fn variables() {
        let q = Expr::parse("abs(u)^(-1.5)*(abs(u)<=1)");
        assert!(q.is_err());
        let q = Expr::parse("abs(u)^(0-1.5)").unwrap();
        assert!(q.uses_u() && !q.uses_x());
        assert_eq!(q.eval(0.0, 4.0), 0.125);
        assert_eq!(Expr::parse("2*pi").unwrap().as_constant(), Some(2.0 * std::f64::consts::PI));
    }

    #[test]
    fn errors() {
        assert!(matches!(Expr::parse("foo(x)"), Err(ExprError::UnknownIdent(_))));
        assert!(matches!(Expr::parse("min(x)"), Err(ExprError::Arity { .. })));
        assert!(matches!(Expr::parse("1+"), Err(ExprError::Eof)));
        assert!(matches!(Expr::parse("1 $ 2"), Err(ExprError::BadChar('$', 2))));
        assert!(Expr::parse("(1").is_err());
        assert!(Expr::parse("1 2").is_err());
    }
}
