//! Small arithmetic expression language for closed-form potentials `V(x, y)` and
//! magnetic fields `φ(x, y)`.
//!
//! Grammar (usual precedence, `^` right-associative):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | 'x' | 'y' | 'pi' | 'e' | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `sin cos tan exp log sqrt abs min max`. Evaluation carries value,
//! gradient and Hessian in `(x, y)` so models get exact derivatives.

use crate::error::{Error, Result};
use crate::grid::Point;

const MAX_DEPTH: usize = 64;
const MAX_LEN: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "tan" => (Func::Tan, 1),
            "exp" => (Func::Exp, 1),
            "log" | "ln" => (Func::Log, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// Value, gradient and Hessian of a scalar field at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

impl Jet {
    fn constant(v: f64) -> Self {
        Jet {
            value: v,
            grad: [0.0; 2],
            hess: [[0.0; 2]; 2],
        }
    }

    fn variable(v: f64, axis: usize) -> Self {
        let mut j = Jet::constant(v);
        j.grad[axis] = 1.0;
        j
    }

    /// Chain rule for a scalar function with first and second derivatives `d1`, `d2`.
    fn chain(self, value: f64, d1: f64, d2: f64) -> Jet {
        let g = self.grad;
        let mut hess = [[0.0; 2]; 2];
        for (a, row) in hess.iter_mut().enumerate() {
            for (b, h) in row.iter_mut().enumerate() {
                *h = d2 * g[a] * g[b] + d1 * self.hess[a][b];
            }
        }
        Jet {
            value,
            grad: [d1 * g[0], d1 * g[1]],
            hess,
        }
    }

    fn add(self, o: Jet, sign: f64) -> Jet {
        let mut hess = self.hess;
        for a in 0..2 {
            for b in 0..2 {
                hess[a][b] += sign * o.hess[a][b];
            }
        }
        Jet {
            value: self.value + sign * o.value,
            grad: [
                self.grad[0] + sign * o.grad[0],
                self.grad[1] + sign * o.grad[1],
            ],
            hess,
        }
    }

    fn mul(self, o: Jet) -> Jet {
        let mut hess = [[0.0; 2]; 2];
        for (a, row) in hess.iter_mut().enumerate() {
            for (b, h) in row.iter_mut().enumerate() {
                *h = self.hess[a][b] * o.value
                    + o.hess[a][b] * self.value
                    + self.grad[a] * o.grad[b]
                    + o.grad[a] * self.grad[b];
            }
        }
        Jet {
            value: self.value * o.value,
            grad: [
                self.grad[0] * o.value + o.grad[0] * self.value,
                self.grad[1] * o.value + o.grad[1] * self.value,
            ],
            hess,
        }
    }

    fn recip(self) -> Jet {
        let v = self.value;
        self.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }

    fn is_constant(&self) -> bool {
        self.grad == [0.0; 2] && self.hess == [[0.0; 2]; 2]
    }

    fn powf(self, e: Jet) -> Jet {
        if e.is_constant() {
            let k = e.value;
            let v = self.value;
            if k == 0.0 {
                return Jet::constant(1.0);
            }
            if k == 1.0 {
                return self;
            }
            let d1 = k * v.powf(k - 1.0);
            let d2 = if k == 2.0 {
                2.0
            } else {
                k * (k - 1.0) * v.powf(k - 2.0)
            };
            return self.chain(v.powf(k), d1, d2);
        }
        // general case: exp(e ln b)
        let ln = self.chain(
            self.value.ln(),
            1.0 / self.value,
            -1.0 / (self.value * self.value),
        );
        let p = e.mul(ln);
        let ev = p.value.exp();
        p.chain(ev, ev, ev)
    }
}

/// A parsed expression in the variables `x`, `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr> {
        if source.len() > MAX_LEN {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: format!("expression longer than {MAX_LEN} bytes"),
            });
        }
        let tokens = tokenize(source)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            depth: 0,
        };
        let root = p.expr()?;
        if p.pos < p.tokens.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Expr {
            root,
            source: source.to_string(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Whether the expression mentions `y`.
    pub fn uses_y(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Var(1) => true,
                Node::Const(_) | Node::Var(_) => false,
                Node::Neg(a) => walk(a),
                Node::Add(a, b)
                | Node::Sub(a, b)
                | Node::Mul(a, b)
                | Node::Div(a, b)
                | Node::Pow(a, b) => walk(a) || walk(b),
                Node::Call(_, args) => args.iter().any(walk),
            }
        }
        walk(&self.root)
    }

    pub fn value(&self, p: Point) -> f64 {
        eval_value(&self.root, p)
    }

    pub fn jet(&self, p: Point) -> Jet {
        eval_jet(&self.root, p)
    }
}

fn eval_value(n: &Node, p: Point) -> f64 {
    match n {
        Node::Const(c) => *c,
        Node::Var(i) => p[*i],
        Node::Neg(a) => -eval_value(a, p),
        Node::Add(a, b) => eval_value(a, p) + eval_value(b, p),
        Node::Sub(a, b) => eval_value(a, p) - eval_value(b, p),
        Node::Mul(a, b) => eval_value(a, p) * eval_value(b, p),
        Node::Div(a, b) => eval_value(a, p) / eval_value(b, p),
        Node::Pow(a, b) => eval_value(a, p).powf(eval_value(b, p)),
        Node::Call(f, args) => {
            let a = eval_value(&args[0], p);
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Tan => a.tan(),
                Func::Exp => a.exp(),
                Func::Log => a.ln(),
                Func::Sqrt => a.sqrt(),
                Func::Abs => a.abs(),
                Func::Min => a.min(eval_value(&args[1], p)),
                Func::Max => a.max(eval_value(&args[1], p)),
            }
        }
    }
}

fn eval_jet(n: &Node, p: Point) -> Jet {
    match n {
        Node::Const(c) => Jet::constant(*c),
        Node::Var(i) => Jet::variable(p[*i], *i),
        Node::Neg(a) => Jet::constant(0.0).add(eval_jet(a, p), -1.0),
        Node::Add(a, b) => eval_jet(a, p).add(eval_jet(b, p), 1.0),
        Node::Sub(a, b) => eval_jet(a, p).add(eval_jet(b, p), -1.0),
        Node::Mul(a, b) => eval_jet(a, p).mul(eval_jet(b, p)),
        Node::Div(a, b) => eval_jet(a, p).mul(eval_jet(b, p).recip()),
        Node::Pow(a, b) => eval_jet(a, p).powf(eval_jet(b, p)),
        Node::Call(f, args) => {
            let a = eval_jet(&args[0], p);
            let v = a.value;
            match f {
                Func::Sin => a.chain(v.sin(), v.cos(), -v.sin()),
                Func::Cos => a.chain(v.cos(), -v.sin(), -v.cos()),
                Func::Tan => {
                    let t = v.tan();
                    let s = 1.0 + t * t;
                    a.chain(t, s, 2.0 * t * s)
                }
                Func::Exp => a.chain(v.exp(), v.exp(), v.exp()),
                Func::Log => a.chain(v.ln(), 1.0 / v, -1.0 / (v * v)),
                Func::Sqrt => {
                    let s = v.sqrt();
                    a.chain(s, 0.5 / s, -0.25 / (s * v))
                }
                Func::Abs => {
                    let sgn = if v < 0.0 { -1.0 } else { 1.0 };
                    a.chain(v.abs(), sgn, 0.0)
                }
                Func::Min | Func::Max => {
                    let b = eval_jet(&args[1], p);
                    let take_a = if *f == Func::Min {
                        a.value <= b.value
                    } else {
                        a.value >= b.value
                    };
                    if take_a {
                        a
                    } else {
                        b
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| Error::Parse {
                line: 1,
                column: start + 1,
                message: format!("invalid number `{text}`"),
            })?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len()
                && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
            {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else if "+-*/^(),".contains(c) {
            out.push((Tok::Op(c), i));
            i += 1;
        } else {
            // step over the full UTF-8 character for the column report
            return Err(Error::Parse {
                line: 1,
                column: src[..i].chars().count() + 1,
                message: format!(
                    "unexpected character `{}`",
                    src[i..].chars().next().unwrap_or('?')
                ),
            });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    depth: usize,
}

impl Parser {
    fn error(&self, msg: &str) -> Error {
        let column = self
            .tokens
            .get(self.pos)
            .map(|t| t.1 + 1)
            .unwrap_or_else(|| self.tokens.last().map(|t| t.1 + 2).unwrap_or(1));
        Error::Parse {
            line: 1,
            column,
            message: msg.to_string(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.0)
    }

    fn eat_op(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Op(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn enter(&mut self) -> Result<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.error("expression nested too deeply"));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Node> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            if self.eat_op('+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat_op('-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                break;
            }
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_op('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat_op('/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                break;
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        self.enter()?;
        let out = if self.eat_op('-') {
            Node::Neg(Box::new(self.unary()?))
        } else if self.eat_op('+') {
            self.unary()?
        } else {
            self.power()?
        };
        self.depth -= 1;
        Ok(out)
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat_op('^') {
            let e = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(e)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let tok = self
            .peek()
            .cloned()
            .ok_or_else(|| self.error("unexpected end of expression"))?;
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Node::Const(v))
            }
            Tok::Op('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat_op(')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(e)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                match name.as_str() {
                    "x" => return Ok(Node::Var(0)),
                    "y" => return Ok(Node::Var(1)),
                    "pi" => return Ok(Node::Const(std::f64::consts::PI)),
                    "e" => return Ok(Node::Const(std::f64::consts::E)),
                    _ => {}
                }
                let (func, arity) = Func::lookup(&name).ok_or_else(|| {
                    self.pos -= 1;
                    self.error(&format!("unknown identifier `{name}`"))
                })?;
                if !self.eat_op('(') {
                    return Err(self.error(&format!("expected `(` after `{name}`")));
                }
                let mut args = vec![self.expr()?];
                while self.eat_op(',') {
                    args.push(self.expr()?);
                }
                if !self.eat_op(')') {
                    return Err(self.error("expected `)`"));
                }
                if args.len() != arity {
                    return Err(self.error(&format!(
                        "`{name}` takes {arity} argument(s), got {}",
                        args.len()
                    )));
                }
                Ok(Node::Call(func, args))
            }
            Tok::Op(c) => Err(self.error(&format!("unexpected `{c}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn precedence() {
        let e = Expr::parse("1 + 2 * 3 ^ 2 - -4 / 2").unwrap();
        assert_eq!(e.value([0.0, 0.0]), 1.0 + 18.0 + 2.0);
        let e = Expr::parse("2^3^2").unwrap();
        assert_eq!(e.value([0.0, 0.0]), 512.0);
        let e = Expr::parse("-x^2").unwrap();
        assert_eq!(e.value([3.0, 0.0]), -9.0);
    }

    #[test]
    fn cosine_potential_and_derivatives() {
        let e = Expr::parse("1 - cos(2*pi*x)").unwrap();
        let j = e.jet([0.1, 0.0]);
        let a = 2.0 * PI * 0.1;
        assert!((j.value - (1.0 - a.cos())).abs() < 1e-15);
        assert!((j.grad[0] - 2.0 * PI * a.sin()).abs() < 1e-12);
        assert!((j.hess[0][0] - 4.0 * PI * PI * a.cos()).abs() < 1e-11);
        assert_eq!(j.grad[1], 0.0);
        assert!(!e.uses_y());
    }

    #[test]
    fn jet_matches_finite_differences() {
        let e =
            Expr::parse("sin(3*x)*exp(y) + sqrt(1 + x^2*y^2) / (2 + cos(y)) + (x+2)^y").unwrap();
        let p = [0.3, 0.7];
        let j = e.jet(p);
        let step = 1e-5;
        for a in 0..2 {
            let mut pp = p;
            let mut pm = p;
            pp[a] += step;
            pm[a] -= step;
            let fd = (e.value(pp) - e.value(pm)) / (2.0 * step);
            assert!((fd - j.grad[a]).abs() < 1e-8, "axis {a}");
            let gd = (e.jet(pp).grad[0] - e.jet(pm).grad[0]) / (2.0 * step);
            assert!((gd - j.hess[0][a]).abs() < 1e-6);
        }
    }

    #[test]
    fn min_max_abs() {
        let e = Expr::parse("max(abs(x - 0.5), min(y, 0.1))").unwrap();
        assert_eq!(e.value([0.2, 0.5]), 0.3);
        assert_eq!(e.value([0.5, 0.05]), 0.05);
    }

    #[test]
    fn errors_carry_columns() {
        match Expr::parse("1 + foo(x)") {
            Err(Error::Parse { column, .. }) => assert_eq!(column, 5),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("(1").is_err());
        assert!(Expr::parse("sin(1, 2)").is_err());
        assert!(Expr::parse("x $ 2").is_err());
        assert!(Expr::parse("").is_err());
        let deep = "(".repeat(200) + "x" + &")".repeat(200);
        assert!(Expr::parse(&deep).is_err());
    }
}
