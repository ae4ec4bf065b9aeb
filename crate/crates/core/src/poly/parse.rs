//! Recursive-descent parser for the polynomial text grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary ('*' unary)*
//! unary  := ('+' | '-') unary | power
//! power  := atom ('^' integer)?
//! atom   := number | 'x' index | 't' | '(' expr ')'
//! ```
//!
//! Whitespace is insignificant. Numbers are unsigned decimals with an
//! optional exponent (`1`, `0.25`, `.5`, `3e-4`); signs are unary operators.

use super::{Monomial, PolyError, Polynomial, Var};

/// Parses with the state dimension inferred from the largest `xi` used.
pub fn parse(expr: &str) -> Result<Polynomial, PolyError> {
    let mut p = Parser::new(expr, None);
    let poly = p.parse_all()?;
    Ok(poly)
}

/// Parses in a ring with exactly `nvars` state variables; `xi` with
/// `i > nvars` is an unknown variable.
pub fn parse_with_nvars(expr: &str, nvars: usize) -> Result<Polynomial, PolyError> {
    let mut p = Parser::new(expr, Some(nvars));
    p.parse_all()
}

/// Intermediate tree so the ring dimension can be fixed after a full scan.
enum Node {
    Num(f64),
    Var(Var),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Pow(Box<Node>, u32),
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    nvars: Option<usize>,
    max_state: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, nvars: Option<usize>) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
            nvars,
            max_state: 0,
        }
    }

    fn parse_all(&mut self) -> Result<Polynomial, PolyError> {
        self.skip_ws();
        if self.pos == self.src.len() {
            return Err(self.err("empty expression"));
        }
        let node = self.expr()?;
        self.skip_ws();
        if self.pos != self.src.len() {
            return Err(self.err("unexpected trailing input"));
        }
        let n = self.nvars.unwrap_or(self.max_state);
        Ok(build(&node, n))
    }

    fn err(&self, message: &str) -> PolyError {
        PolyError::Syntax {
            offset: self.pos,
            message: message.to_string(),
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

    fn expr(&mut self) -> Result<Node, PolyError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Node::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Node::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, PolyError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Mul(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, PolyError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, PolyError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.err("expected a nonnegative integer exponent"));
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            let e: u32 = text.parse().map_err(|_| PolyError::Syntax {
                offset: start,
                message: "exponent out of range".into(),
            })?;
            return Ok(Node::Pow(Box::new(base), e));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, PolyError> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.variable(),
            Some(_) => Err(self.err("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, PolyError> {
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            let b = *p;
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
            *p - b
        };
        let mut p = self.pos;
        let mut n = digits(&mut p);
        if p < s.len() && s[p] == b'.' {
            p += 1;
            n += digits(&mut p);
        }
        if n == 0 {
            return Err(self.err("malformed number"));
        }
        if p < s.len() && (s[p] == b'e' || s[p] == b'E') {
            let mut q = p + 1;
            if q < s.len() && (s[q] == b'+' || s[q] == b'-') {
                q += 1;
            }
            if digits(&mut q) == 0 {
                self.pos = q;
                return Err(self.err("malformed exponent in number"));
            }
            p = q;
        }
        self.pos = p;
        let text = std::str::from_utf8(&s[start..p]).unwrap();
        let v: f64 = text.parse().map_err(|_| PolyError::Syntax {
            offset: start,
            message: "malformed number".into(),
        })?;
        Ok(Node::Num(v))
    }

    fn variable(&mut self) -> Result<Node, PolyError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let unknown = || PolyError::UnknownVariable {
            name: name.to_string(),
            offset: start,
        };
        if name == "t" {
            return Ok(Node::Var(Var::Time));
        }
        let index = name
            .strip_prefix('x')
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()) && !d.starts_with('0'))
            .and_then(|d| d.parse::<usize>().ok())
            .ok_or_else(unknown)?;
        if let Some(n) = self.nvars {
            if index > n {
                return Err(unknown());
            }
        }
        self.max_state = self.max_state.max(index);
        Ok(Node::Var(Var::State(index - 1)))
    }
}

fn build(node: &Node, nvars: usize) -> Polynomial {
    match node {
        Node::Num(v) => Polynomial::constant(nvars, *v),
        Node::Var(v) => Polynomial::monomial(nvars, Monomial::var(*v), 1.0),
        Node::Add(a, b) => &build(a, nvars) + &build(b, nvars),
        Node::Sub(a, b) => &build(a, nvars) - &build(b, nvars),
        Node::Mul(a, b) => &build(a, nvars) * &build(b, nvars),
        Node::Neg(a) => -build(a, nvars),
        Node::Pow(a, e) => build(a, nvars).pow(*e),
    }
}
