//! Sparse multivariate polynomials over the state variables `x1..xn` and an
//! optional, distinguished time variable `t`.
//!
//! Coefficients are `f64`. A term is removed only when its coefficient is
//! exactly `0.0`, so identities between integer-coefficient polynomials hold
//! bit-for-bit.

mod parse;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse, parse_with_nvars};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{name}` at byte {offset}")]
    UnknownVariable { name: String, offset: usize },
    #[error("dimension mismatch: expected {expected} state variables, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("time value must be supplied iff the polynomial is time-dependent")]
    TimeMismatch,
}

/// A variable of the polynomial ring. `State(i)` is the zero-based index of
/// `x{i+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Var {
    State(usize),
    Time,
}

/// Sparse exponent vector. Entries are sorted by variable (states first,
/// then time) and never carry a zero exponent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Monomial {
    exps: Vec<(Var, u32)>,
}

impl Monomial {
    pub fn one() -> Self {
        Self::default()
    }

    pub fn var(v: Var) -> Self {
        Self { exps: vec![(v, 1)] }
    }

    /// Builds a monomial from `(variable, exponent)` pairs; zero exponents are
    /// dropped and repeated variables are merged.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Var, u32)>) -> Self {
        let mut map: BTreeMap<Var, u32> = BTreeMap::new();
        for (v, e) in pairs {
            *map.entry(v).or_default() += e;
        }
        Self {
            exps: map.into_iter().filter(|&(_, e)| e > 0).collect(),
        }
    }

    pub fn degree(&self) -> u32 {
        self.exps.iter().map(|&(_, e)| e).sum()
    }

    pub fn exponent(&self, v: Var) -> u32 {
        self.exps
            .iter()
            .find(|&&(w, _)| w == v)
            .map(|&(_, e)| e)
            .unwrap_or(0)
    }

    pub fn pairs(&self) -> &[(Var, u32)] {
        &self.exps
    }

    pub fn is_one(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn has_time(&self) -> bool {
        self.exponent(Var::Time) > 0
    }

    /// Largest state index used, plus one.
    pub fn state_span(&self) -> usize {
        self.exps
            .iter()
            .filter_map(|&(v, _)| match v {
                Var::State(i) => Some(i + 1),
                Var::Time => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.exps.len() + other.exps.len());
        let (mut i, mut j) = (0, 0);
        while i < self.exps.len() && j < other.exps.len() {
            let (a, ea) = self.exps[i];
            let (b, eb) = other.exps[j];
            match a.cmp(&b) {
                Ordering::Less => {
                    out.push((a, ea));
                    i += 1;
                }
                Ordering::Greater => {
                    out.push((b, eb));
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a, ea + eb));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.exps[i..]);
        out.extend_from_slice(&other.exps[j..]);
        Monomial { exps: out }
    }

    /// Formal derivative: returns the multiplicity and the lowered monomial,
    /// or `None` when the variable is absent.
    pub fn derivative(&self, v: Var) -> Option<(u32, Monomial)> {
        let pos = self.exps.iter().position(|&(w, _)| w == v)?;
        let e = self.exps[pos].1;
        let mut exps = self.exps.clone();
        if e == 1 {
            exps.remove(pos);
        } else {
            exps[pos].1 = e - 1;
        }
        Some((e, Monomial { exps }))
    }

    pub fn eval(&self, point: &[f64], t: f64) -> f64 {
        let mut acc = 1.0;
        for &(v, e) in &self.exps {
            let base = match v {
                Var::State(i) => point[i],
                Var::Time => t,
            };
            acc *= base.powi(e as i32);
        }
        acc
    }

    /// Dense exponent vector in the order `x1..xn, t`.
    fn dense_key(&self) -> impl Iterator<Item = (Var, u32)> + '_ {
        self.exps.iter().copied()
    }
}

impl Ord for Monomial {
    /// Graded lexicographic order with `x1 > x2 > ... > xn > t`: lower total
    /// degree first, then the monomial with the larger leading exponent
    /// comes first among equal degrees.
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            o => return o,
        }
        let mut a = self.dense_key();
        let mut b = other.dense_key();
        loop {
            match (a.next(), b.next()) {
                (None, None) => return Ordering::Equal,
                // Same degree: running out first means smaller leading exponents.
                (None, Some(_)) => return Ordering::Greater,
                (Some(_), None) => return Ordering::Less,
                (Some((va, ea)), Some((vb, eb))) => {
                    if va != vb {
                        // The one that uses the earlier variable has a larger
                        // exponent in it.
                        return if va < vb { Ordering::Less } else { Ordering::Greater };
                    }
                    if ea != eb {
                        return eb.cmp(&ea);
                    }
                }
            }
        }
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exps.is_empty() {
            return write!(f, "1");
        }
        for (k, &(v, e)) in self.exps.iter().enumerate() {
            if k > 0 {
                write!(f, "*")?;
            }
            match v {
                Var::State(i) => write!(f, "x{}", i + 1)?,
                Var::Time => write!(f, "t")?,
            }
            if e > 1 {
                write!(f, "^{e}")?;
            }
        }
        Ok(())
    }
}

/// All monomials of total degree `<= degree` in the given variables, in
/// graded lexicographic order.
pub fn monomials_up_to(vars: &[Var], degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    let mut current = vec![0u32; vars.len()];
    fn rec(
        vars: &[Var],
        idx: usize,
        remaining: u32,
        current: &mut Vec<u32>,
        out: &mut Vec<Monomial>,
    ) {
        if idx == vars.len() {
            out.push(Monomial::from_pairs(
                vars.iter().copied().zip(current.iter().copied()),
            ));
            return;
        }
        for e in 0..=remaining {
            current[idx] = e;
            rec(vars, idx + 1, remaining - e, current, out);
        }
        current[idx] = 0;
    }
    rec(vars, 0, degree, &mut current, &mut out);
    out.sort();
    out
}

/// The variables of a ring with `nvars` states and optionally time.
pub fn ring_vars(nvars: usize, has_time: bool) -> Vec<Var> {
    let mut v: Vec<Var> = (0..nvars).map(Var::State).collect();
    if has_time {
        v.push(Var::Time);
    }
    v
}

/// A sparse polynomial. `nvars` counts state variables only; `has_time`
/// records whether the polynomial lives in the ring extended by `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    terms: BTreeMap<Monomial, f64>,
    nvars: usize,
    has_time: bool,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self {
            terms: BTreeMap::new(),
            nvars,
            has_time: false,
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::from_terms(nvars, false, [(Monomial::one(), c)])
    }

    /// The state variable `x{i+1}`.
    pub fn state(nvars: usize, i: usize) -> Self {
        assert!(i < nvars, "state index out of range");
        Self::from_terms(nvars, false, [(Monomial::var(Var::State(i)), 1.0)])
    }

    pub fn time(nvars: usize) -> Self {
        Self::from_terms(nvars, true, [(Monomial::var(Var::Time), 1.0)])
    }

    pub fn monomial(nvars: usize, m: Monomial, c: f64) -> Self {
        let has_time = m.has_time();
        Self::from_terms(nvars, has_time, [(m, c)])
    }

    /// Builds a canonical polynomial, summing duplicate monomials and pruning
    /// exact zeros. `has_time` is forced on when a term mentions `t`.
    pub fn from_terms(
        nvars: usize,
        has_time: bool,
        terms: impl IntoIterator<Item = (Monomial, f64)>,
    ) -> Self {
        let mut map: BTreeMap<Monomial, f64> = BTreeMap::new();
        let mut has_time = has_time;
        for (m, c) in terms {
            assert!(
                m.state_span() <= nvars,
                "monomial {m} uses a state beyond x{nvars}"
            );
            has_time |= m.has_time();
            *map.entry(m).or_insert(0.0) += c;
        }
        map.retain(|_, c| *c != 0.0);
        Self {
            terms: map,
            nvars,
            has_time,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn has_time(&self) -> bool {
        self.has_time
    }

    /// Same polynomial, declared to live in the ring with `t`.
    pub fn with_time(mut self) -> Self {
        self.has_time = true;
        self
    }

    /// Drops the time flag when no term mentions `t`.
    pub fn without_unused_time(mut self) -> Self {
        if !self.terms.keys().any(Monomial::has_time) {
            self.has_time = false;
        }
        self
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(Monomial::is_one)
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Degree in the state variables only.
    pub fn state_degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|m| m.degree() - m.exponent(Var::Time))
            .max()
            .unwrap_or(0)
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    fn check_compatible(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                got: other.nvars,
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_compatible(other)?;
        let mut terms = self.terms.clone();
        for (m, &c) in &other.terms {
            *terms.entry(m.clone()).or_insert(0.0) += c;
        }
        terms.retain(|_, c| *c != 0.0);
        Ok(Polynomial {
            terms,
            nvars: self.nvars,
            has_time: self.has_time || other.has_time,
        })
    }

    pub fn try_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.try_add(&other.scale(-1.0))
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_compatible(other)?;
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                *terms.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
            }
        }
        terms.retain(|_, c| *c != 0.0);
        Ok(Polynomial {
            terms,
            nvars: self.nvars,
            has_time: self.has_time || other.has_time,
        })
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut terms = BTreeMap::new();
        for (m, &c) in &self.terms {
            let v = c * s;
            if v != 0.0 {
                terms.insert(m.clone(), v);
            }
        }
        Polynomial {
            terms,
            nvars: self.nvars,
            has_time: self.has_time,
        }
    }

    pub fn pow(&self, e: u32) -> Polynomial {
        let mut acc = Polynomial::constant(self.nvars, 1.0);
        if self.has_time {
            acc = acc.with_time();
        }
        for _ in 0..e {
            acc = &acc * self;
        }
        acc
    }

    /// Formal partial derivative.
    pub fn differentiate(&self, v: Var) -> Polynomial {
        let terms = self.terms.iter().filter_map(|(m, &c)| {
            m.derivative(v).map(|(mult, lowered)| (lowered, c * mult as f64))
        });
        Polynomial::from_terms(self.nvars, self.has_time, terms)
    }

    /// Checked evaluation: `point` must have `nvars` entries and `t` must be
    /// given exactly when the polynomial is time-dependent.
    pub fn evaluate(&self, point: &[f64], t: Option<f64>) -> Result<f64, PolyError> {
        if point.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                got: point.len(),
            });
        }
        match (self.has_time, t) {
            (true, Some(tv)) => Ok(self.eval(point, tv)),
            (false, None) => Ok(self.eval(point, 0.0)),
            _ => Err(PolyError::TimeMismatch),
        }
    }

    /// Unchecked evaluation; `t` is ignored by time-free polynomials.
    pub fn eval(&self, point: &[f64], t: f64) -> f64 {
        self.terms.iter().map(|(m, &c)| c * m.eval(point, t)).sum()
    }

    /// Substitutes `t = value`, producing a time-free polynomial.
    pub fn substitute_time(&self, value: f64) -> Polynomial {
        let terms = self.terms.iter().map(|(m, &c)| {
            let e = m.exponent(Var::Time);
            let stripped = Monomial::from_pairs(m.pairs().iter().copied().filter(|&(v, _)| v != Var::Time));
            (stripped, c * value.powi(e as i32))
        });
        Polynomial::from_terms(self.nvars, false, terms)
    }

    /// Substitutes the state vector, producing a polynomial in `t` only
    /// (nvars unchanged so it composes with the source ring).
    pub fn substitute_state(&self, point: &[f64]) -> Polynomial {
        let terms = self.terms.iter().map(|(m, &c)| {
            let mut coeff = c;
            let mut rest = Vec::new();
            for &(v, e) in m.pairs() {
                match v {
                    Var::State(i) => coeff *= point[i].powi(e as i32),
                    Var::Time => rest.push((v, e)),
                }
            }
            (Monomial::from_pairs(rest), coeff)
        });
        Polynomial::from_terms(self.nvars, self.has_time, terms)
    }

    /// Variables the polynomial's ring is spanned by.
    pub fn ring_vars(&self) -> Vec<Var> {
        ring_vars(self.nvars, self.has_time)
    }
}

impl fmt::Display for Polynomial {
    /// Canonical text form in graded lexicographic order, lowest degree
    /// first. Coefficients use the shortest round-trip decimal form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (m, &c)) in self.terms.iter().enumerate() {
            let neg = c < 0.0;
            let mag = c.abs();
            if k == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {} ", if neg { '-' } else { '+' })?;
            }
            if m.is_one() {
                write!(f, "{mag}")?;
            } else if mag == 1.0 {
                write!(f, "{m}")?;
            } else {
                write!(f, "{mag}*{m}")?;
            }
        }
        Ok(())
    }
}

impl Serialize for Polynomial {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $checked:ident) => {
        impl $trait<&Polynomial> for &Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                self.$checked(rhs).expect("polynomial dimension mismatch")
            }
        }
        impl $trait<Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: Polynomial) -> Polynomial {
                (&self).$checked(&rhs).expect("polynomial dimension mismatch")
            }
        }
    };
}

binop!(Add, add, try_add);
binop!(Sub, sub, try_sub);
binop!(Mul, mul, try_mul);

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

/// Flattened form of a [`Polynomial`] for tight evaluation loops.
#[derive(Debug, Clone)]
pub struct CompiledPoly {
    coeffs: Vec<f64>,
    // (variable slot, exponent) runs; slot `nvars` is time.
    factors: Vec<(u32, u32)>,
    spans: Vec<u32>,
    nvars: usize,
}

impl CompiledPoly {
    pub fn new(p: &Polynomial) -> Self {
        let mut coeffs = Vec::with_capacity(p.len());
        let mut factors = Vec::new();
        let mut spans = vec![0];
        for (m, c) in p.terms() {
            coeffs.push(c);
            for &(v, e) in m.pairs() {
                let slot = match v {
                    Var::State(i) => i as u32,
                    Var::Time => p.nvars() as u32,
                };
                factors.push((slot, e));
            }
            spans.push(factors.len() as u32);
        }
        Self {
            coeffs,
            factors,
            spans,
            nvars: p.nvars(),
        }
    }

    pub fn eval(&self, point: &[f64], t: f64) -> f64 {
        let mut sum = 0.0;
        for (k, &c) in self.coeffs.iter().enumerate() {
            let mut acc = 1.0;
            for &(slot, e) in &self.factors[self.spans[k] as usize..self.spans[k + 1] as usize] {
                let base = if slot as usize == self.nvars { t } else { point[slot as usize] };
                acc *= if e == 1 { base } else { base.powi(e as i32) };
            }
            sum += c * acc;
        }
        sum
    }
}
