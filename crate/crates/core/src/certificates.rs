//! Barrier-certificate conditions for reachability probabilities and their
//! bound formulas.
//!
//! Each [`CertificateKind`] turns into a [`CertificateProblem`]: polynomial
//! templates `v` (and `w` for the horizon lower bounds) with unknown
//! coefficients, scalars `beta` and `M`, and a list of conditions
//! `expr >= 0 on region`. For fixed `alpha` every expression is affine in
//! the unknowns, so the problem compiles to a single SDP. `alpha` itself is
//! searched over a grid.
//!
//! Regions, with `X = {g_X > 0}` and `Xs = {g_S >= 0}`:
//!
//! | name     | encoding                 | stands for      |
//! |----------|--------------------------|-----------------|
//! | `X\Xs`   | `g_X >= 0, -g_S >= 0`    | `cl(X \ Xs)`    |
//! | `dX`     | `g_X = 0`                | `dX`            |
//! | `dXs`    | `g_S = 0, g_X >= 0`      | `dXs`           |
//! | `cl X`   | `g_X >= 0`               | `cl X`          |
//! | `Xs`     | `g_S >= 0, g_X >= 0`     | `Xs`            |
//!
//! Time-dependent conditions add `t (T - t) >= 0`. Using closures only
//! enlarges the regions, which keeps every certificate sound.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use sdereach_sdp::{SolverOptions, Status};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::apply_generator;
use crate::model::{Problem, QueryKind, ReachQuery, SdeModel, SemialgebraicSet};
use crate::poly::{monomials_up_to, ring_vars, Monomial, PolyError, Polynomial, Var};
use crate::sos::{
    residual_check, solve_program, AffinePoly, Backend, Region, ResidualSummary, SosConstraint,
    SosError, SosProgram,
};

#[derive(Debug, Error)]
pub enum CertError {
    #[error("{kind} certifies {expected} queries, but the query is {got}")]
    KindMismatch {
        kind: CertificateKind,
        expected: &'static str,
        got: &'static str,
    },
    #[error("bad degree: {0}")]
    Degree(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error("deterministic reach sets need zero diffusion")]
    NonzeroDiffusion,
    #[error("{0} is not a lower-bound kind")]
    NotLowerBound(CertificateKind),
    #[error("report carries no certificate")]
    NoCertificate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CertificateKind {
    HU1,
    HU2,
    HU3,
    HL1,
    HL2,
    HL3,
    IU1,
    IU2,
    IU3,
    IL1,
    IL2,
    IL3,
}

use CertificateKind::*;

impl CertificateKind {
    pub const ALL: [CertificateKind; 12] = [HU1, HU2, HU3, HL1, HL2, HL3, IU1, IU2, IU3, IL1, IL2, IL3];

    pub fn query_kind(self) -> QueryKind {
        match self {
            HU1 | HU2 | HU3 | HL1 | HL2 | HL3 => QueryKind::Horizon,
            _ => QueryKind::Instant,
        }
    }

    pub fn is_upper(self) -> bool {
        matches!(self, HU1 | HU2 | HU3 | IU1 | IU2 | IU3)
    }

    pub fn time_dependent(self) -> bool {
        !matches!(self, HU3 | HL3 | IU3 | IL3)
    }

    pub fn uses_alpha(self) -> bool {
        !matches!(self, HU1 | HL1 | IU1 | IL1)
    }

    pub fn has_w(self) -> bool {
        matches!(self, HL1 | HL2 | HL3)
    }

    pub fn for_query(kind: QueryKind) -> Vec<CertificateKind> {
        Self::ALL.into_iter().filter(|k| k.query_kind() == kind).collect()
    }
}

impl fmt::Display for CertificateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for CertificateKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown certificate kind `{s}`"))
    }
}

fn query_name(k: QueryKind) -> &'static str {
    match k {
        QueryKind::Horizon => "horizon",
        QueryKind::Instant => "instant",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Degrees {
    pub v: u32,
    pub w: u32,
    /// Uniform SOS multiplier degree; `None` fills the degree budget.
    pub multiplier: Option<u32>,
}

impl Default for Degrees {
    fn default() -> Self {
        Self {
            v: 4,
            w: 4,
            multiplier: None,
        }
    }
}

/// A polynomial with unknown coefficients `d[offset..offset + len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub name: String,
    pub degree: u32,
    pub monomials: Vec<Monomial>,
    pub offset: usize,
}

impl Template {
    fn new(name: &str, nvars: usize, time: bool, degree: u32, offset: usize) -> Self {
        Self {
            name: name.into(),
            degree,
            monomials: monomials_up_to(&ring_vars(nvars, time), degree),
            offset,
        }
    }

    fn affine(&self, nvars: usize, time: bool) -> AffinePoly {
        let mut a = AffinePoly::zero(nvars);
        for (i, m) in self.monomials.iter().enumerate() {
            let mut p = Polynomial::monomial(nvars, m.clone(), 1.0);
            if time {
                p = p.with_time();
            }
            a = a.add(&AffinePoly::var(nvars, self.offset + i, p));
        }
        a
    }

    pub fn instantiate(&self, nvars: usize, time: bool, d: &[f64]) -> Polynomial {
        let p = Polynomial::from_terms(
            nvars,
            time,
            self.monomials
                .iter()
                .enumerate()
                .map(|(i, m)| (m.clone(), d[self.offset + i])),
        );
        if time {
            p.with_time()
        } else {
            p
        }
    }
}

/// `expr >= 0` on `region`.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub expr: AffinePoly,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub label: String,
    pub pieces: Vec<Piece>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateProblem {
    pub kind: CertificateKind,
    pub alpha: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub nvars: usize,
    pub v: Template,
    pub w: Option<Template>,
    pub beta: Option<usize>,
    pub m: Option<usize>,
    pub n_decision: usize,
    pub conditions: Vec<Condition>,
    /// Bound as an affine function of the unknowns.
    pub objective: BTreeMap<usize, f64>,
    pub objective_offset: f64,
    pub sense: Sense,
    pub multiplier_degree: Option<u32>,
}

impl CertificateProblem {
    /// Fixes decision variables, e.g. `beta = 0` or every coefficient of `w`.
    pub fn pin(&mut self, pins: &BTreeMap<usize, f64>) {
        for c in &mut self.conditions {
            for p in &mut c.pieces {
                p.expr = p.expr.pin(pins);
            }
        }
        for (k, v) in pins {
            if let Some(c) = self.objective.remove(k) {
                self.objective_offset += c * v;
            }
        }
    }

    /// Pins every coefficient of `w` to zero.
    pub fn remove_w(&mut self) {
        if let Some(w) = &self.w {
            let pins = (w.offset..w.offset + w.monomials.len()).map(|k| (k, 0.0)).collect();
            self.pin(&pins);
        }
    }

    pub fn to_program(&self, margin: f64) -> SosProgram {
        let sign = match self.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        SosProgram {
            n_decision: self.n_decision,
            constraints: self
                .conditions
                .iter()
                .flat_map(|c| &c.pieces)
                .map(|p| SosConstraint {
                    target: p.expr.clone(),
                    region: p.region.clone(),
                    multiplier_degree: self.multiplier_degree,
                    order: None,
                })
                .collect(),
            objective: self.objective.iter().map(|(k, c)| (*k, sign * c)).collect(),
            objective_offset: sign * self.objective_offset,
            margin,
        }
    }

    pub fn v_poly(&self, d: &[f64]) -> Polynomial {
        self.v.instantiate(self.nvars, self.kind.time_dependent(), d)
    }

    pub fn w_poly(&self, d: &[f64]) -> Option<Polynomial> {
        self.w
            .as_ref()
            .map(|w| w.instantiate(self.nvars, self.kind.time_dependent(), d))
    }

    pub fn beta_value(&self, d: &[f64]) -> f64 {
        self.beta.map_or(0.0, |k| d[k])
    }

    pub fn m_value(&self, d: &[f64]) -> f64 {
        self.m.map_or(0.0, |k| d[k])
    }

    /// Bound implied by decision values `d`, from `v(0, x0)` directly.
    pub fn bound_of(&self, d: &[f64]) -> f64 {
        let v0 = self.v_poly(d).eval(&self.x0, 0.0);
        bound_formula(self.kind, v0, self.alpha, self.beta_value(d), self.m_value(d), self.horizon)
    }
}

/// Coefficients `(a, b, c)` with `bound = a v0 + b beta + c M`.
fn bound_coefficients(kind: CertificateKind, alpha: f64, t: f64) -> (f64, f64, f64) {
    let small = alpha.abs() < 1e-8;
    match kind {
        HU1 | IU1 | IL1 => (1.0, 0.0, 0.0),
        HL1 => (1.0, 0.0, -2.0 / t),
        HU2 | HU3 | IU2 | IU3 | IL2 | IL3 => {
            if small {
                (1.0, t, 0.0)
            } else {
                let e = (alpha * t).exp_m1();
                (e + 1.0, e / alpha, 0.0)
            }
        }
        HL2 | HL3 => {
            if small {
                (1.0, 0.5 * t, -2.0 / t)
            } else {
                let at = alpha * t;
                let e = at.exp_m1();
                (e / at, (e - at) / (alpha * alpha * t), -2.0 / t)
            }
        }
    }
}

/// Closed-form probability bound of a certificate with `v(0, x0) = v0`.
pub fn bound_formula(kind: CertificateKind, v0: f64, alpha: f64, beta: f64, m: f64, t: f64) -> f64 {
    let (a, b, c) = bound_coefficients(kind, alpha, t);
    a * v0 + b * beta + c * m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompetingBounds {
    pub santoyo: Option<f64>,
    pub gronwall: f64,
}

/// The earlier alpha/beta upper bound (present only in its three regimes)
/// next to the Gronwall-type bound of `HU2`.
pub fn competing_bounds(v0: f64, alpha: f64, beta: f64, t: f64) -> CompetingBounds {
    let santoyo = if alpha < 0.0 && alpha + beta > 0.0 {
        Some((v0 - (beta * t).exp_m1() * beta / alpha) * (-beta * t).exp())
    } else if alpha == 0.0 && beta >= 0.0 {
        Some(v0 + beta * t)
    } else if alpha < 0.0 && alpha + beta <= 0.0 && beta >= 0.0 {
        Some((-beta * t).exp() * (v0 - 1.0) + 1.0)
    } else {
        None
    };
    CompetingBounds {
        santoyo,
        gronwall: bound_formula(HU2, v0, alpha, beta, 0.0, t),
    }
}

/// `{0} U {+-2^j / T : j = -6..3}`, ordered by increasing `|alpha|`.
pub fn default_alpha_grid(t: f64) -> Vec<f64> {
    let mut g = vec![0.0];
    for j in -6..=3 {
        let a = 2f64.powi(j) / t;
        g.push(-a);
        g.push(a);
    }
    g
}

struct Builder<'a> {
    n: usize,
    t: f64,
    gx: &'a Polynomial,
    gs: &'a Polynomial,
    model: &'a SdeModel,
}

impl Builder<'_> {
    fn region(&self, label: &str, ineqs: Vec<Polynomial>, eqs: Vec<Polynomial>, timed: bool) -> Region {
        let mut ineqs = ineqs;
        let mut label = label.to_string();
        if timed {
            let tt = Polynomial::time(self.n);
            let d = &tt * &(&Polynomial::constant(self.n, self.t).with_time() - &tt);
            ineqs.insert(0, d);
            label = format!("[0,T] x {label}");
        }
        Region {
            label,
            ineqs,
            eqs,
            time_horizon: timed.then_some(self.t),
        }
    }

    fn interior_h(&self, timed: bool) -> Region {
        self.region("X\\Xs", vec![self.gx.clone(), -self.gs], vec![], timed)
    }

    fn bx(&self, timed: bool) -> Region {
        self.region("dX", vec![], vec![self.gx.clone()], timed)
    }

    fn bs(&self, timed: bool) -> Region {
        self.region("dXs", vec![self.gx.clone()], vec![self.gs.clone()], timed)
    }

    fn cx(&self, timed: bool) -> Region {
        self.region("cl X", vec![self.gx.clone()], vec![], timed)
    }

    fn xs(&self, timed: bool) -> Region {
        self.region("Xs", vec![self.gs.clone(), self.gx.clone()], vec![], timed)
    }

    fn gen(&self, a: &AffinePoly) -> Result<AffinePoly, PolyError> {
        a.try_map(|p| apply_generator(p, self.model).map(|r| r.full))
    }

    fn one(&self) -> Polynomial {
        Polynomial::constant(self.n, 1.0)
    }
}

fn cond(label: &str, pieces: Vec<(AffinePoly, Region)>) -> Condition {
    Condition {
        label: label.into(),
        pieces: pieces
            .into_iter()
            .map(|(expr, region)| Piece { expr, region })
            .collect(),
    }
}

/// Instantiates the condition of `kind` for a model and query.
pub fn build_condition(
    kind: CertificateKind,
    model: &SdeModel,
    query: &ReachQuery,
    degrees: &Degrees,
    alpha: f64,
) -> Result<CertificateProblem, CertError> {
    if kind.query_kind() != query.kind {
        return Err(CertError::KindMismatch {
            kind,
            expected: query_name(kind.query_kind()),
            got: query_name(query.kind),
        });
    }
    if degrees.v < 2 || degrees.v % 2 == 1 {
        return Err(CertError::Degree(format!("degree of v must be even and >= 2, got {}", degrees.v)));
    }
    if kind.has_w() && degrees.w % 2 == 1 {
        return Err(CertError::Degree(format!("degree of w must be even, got {}", degrees.w)));
    }
    if let Some(m) = degrees.multiplier {
        if m % 2 == 1 {
            return Err(CertError::Degree(format!("multiplier degree must be even, got {m}")));
        }
    }
    if model.n() != query.n() {
        return Err(PolyError::DimensionMismatch {
            expected: model.n(),
            got: query.n(),
        }
        .into());
    }
    let n = model.n();
    let timed = kind.time_dependent();
    let alpha = if kind.uses_alpha() { alpha } else { 0.0 };
    let t = query.horizon;
    let b = Builder {
        n,
        t,
        gx: query.g_x(),
        gs: query.g_s(),
        model,
    };

    let vt = Template::new("v", n, timed, degrees.v, 0);
    let mut next = vt.monomials.len();
    let wt = kind.has_w().then(|| {
        let w = Template::new("w", n, timed, degrees.w, next);
        next += w.monomials.len();
        w
    });
    let beta = kind.uses_alpha().then(|| {
        next += 1;
        next - 1
    });
    let m_idx = kind.has_w().then(|| {
        next += 1;
        next - 1
    });

    let v = vt.affine(n, timed);
    let lv = b.gen(&v)?;
    let dtv = v.map(|p| p.differentiate(Var::Time));
    let v_t = v.map(|p| p.substitute_time(t));
    let one = b.one();
    // alpha v + beta, or the zero expression for the plain kinds.
    let avb = match beta {
        Some(k) => v.scale(alpha).add(&AffinePoly::var(n, k, one.clone())),
        None => AffinePoly::zero(n),
    };

    let mut conditions = Vec::new();
    match kind {
        HU1 | HU2 => {
            conditions.push(cond("Lv <= alpha v + beta on X\\Xs", vec![(avb.sub(&lv), b.interior_h(true))]));
            conditions.push(cond(
                "dv/dt <= alpha v + beta on dX u dXs",
                vec![(avb.sub(&dtv), b.bx(true)), (avb.sub(&dtv), b.bs(true))],
            ));
            conditions.push(cond("v(T) >= 1 on dXs", vec![(v_t.add_poly(&-&one), b.bs(false))]));
            conditions.push(cond("v(T) >= 0 on cl(X\\Xs)", vec![(v_t.clone(), b.interior_h(false))]));
        }
        HU3 => {
            conditions.push(cond("Lv <= alpha v + beta on X\\Xs", vec![(avb.sub(&lv), b.interior_h(false))]));
            conditions.push(cond(
                "0 <= alpha v + beta on dX u dXs",
                vec![(avb.clone(), b.bx(false)), (avb.clone(), b.bs(false))],
            ));
            conditions.push(cond("v >= 1 on dXs", vec![(v.add_poly(&-&one), b.bs(false))]));
            conditions.push(cond("v >= 0 on cl(X\\Xs)", vec![(v.clone(), b.interior_h(false))]));
        }
        HL1 | HL2 | HL3 => {
            let wt_ref = wt.as_ref().unwrap();
            let w = wt_ref.affine(n, timed);
            let lw = b.gen(&w)?;
            let dtw = w.map(|p| p.differentiate(Var::Time));
            let mvar = AffinePoly::var(n, m_idx.unwrap(), one.clone());
            if timed {
                conditions.push(cond("Lv >= alpha v + beta on X\\Xs", vec![(lv.sub(&avb), b.interior_h(true))]));
                conditions.push(cond(
                    "dv/dt >= alpha v + beta on dX u dXs",
                    vec![(dtv.sub(&avb), b.bx(true)), (dtv.sub(&avb), b.bs(true))],
                ));
                conditions.push(cond("v <= 1 + dw/dt on dXs", vec![(dtw.sub(&v).add_poly(&one), b.bs(true))]));
                conditions.push(cond("v <= Lw on X\\Xs", vec![(lw.sub(&v), b.interior_h(true))]));
                conditions.push(cond("v <= dw/dt on dX", vec![(dtw.sub(&v), b.bx(true))]));
            } else {
                conditions.push(cond("Lv >= alpha v + beta on X\\Xs", vec![(lv.sub(&avb), b.interior_h(false))]));
                conditions.push(cond(
                    "0 >= alpha v + beta on dX u dXs",
                    vec![(avb.scale(-1.0), b.bx(false)), (avb.scale(-1.0), b.bs(false))],
                ));
                conditions.push(cond("v <= 1 on dXs", vec![(v.scale(-1.0).add_poly(&one), b.bs(false))]));
                conditions.push(cond("v <= Lw on X\\Xs", vec![(lw.sub(&v), b.interior_h(false))]));
                conditions.push(cond("v <= 0 on dX", vec![(v.scale(-1.0), b.bx(false))]));
            }
            conditions.push(cond("M - w >= 0 on cl X", vec![(mvar.sub(&w), b.cx(timed))]));
            conditions.push(cond("M + w >= 0 on cl X", vec![(mvar.add(&w), b.cx(timed))]));
        }
        IU1 | IU2 => {
            conditions.push(cond("Lv <= alpha v + beta on X", vec![(avb.sub(&lv), b.cx(true))]));
            conditions.push(cond("dv/dt <= alpha v + beta on dX", vec![(avb.sub(&dtv), b.bx(true))]));
            conditions.push(cond("v(T) >= 1 on Xs", vec![(v_t.add_poly(&-&one), b.xs(false))]));
            conditions.push(cond("v(T) >= 0 on cl X", vec![(v_t.clone(), b.cx(false))]));
        }
        IU3 => {
            conditions.push(cond("Lv <= alpha v + beta on X", vec![(avb.sub(&lv), b.cx(false))]));
            conditions.push(cond("0 <= alpha v + beta on dX", vec![(avb.clone(), b.bx(false))]));
            conditions.push(cond("v >= 1 on Xs", vec![(v.add_poly(&-&one), b.xs(false))]));
            conditions.push(cond("v >= 0 on cl X", vec![(v.clone(), b.cx(false))]));
        }
        IL1 | IL2 => {
            conditions.push(cond("Lv >= alpha v + beta on X", vec![(lv.sub(&avb), b.cx(true))]));
            conditions.push(cond("dv/dt >= alpha v + beta on dX", vec![(dtv.sub(&avb), b.bx(true))]));
            conditions.push(cond("v(T) <= 0 on cl(X\\Xs)", vec![(v_t.scale(-1.0), b.interior_h(false))]));
            conditions.push(cond("v(T) <= 1 on Xs", vec![(v_t.scale(-1.0).add_poly(&one), b.xs(false))]));
        }
        IL3 => {
            conditions.push(cond("Lv >= alpha v + beta on X", vec![(lv.sub(&avb), b.cx(false))]));
            conditions.push(cond("0 >= alpha v + beta on dX", vec![(avb.scale(-1.0), b.bx(false))]));
            conditions.push(cond("v <= 0 on cl(X\\Xs)", vec![(v.scale(-1.0), b.interior_h(false))]));
            conditions.push(cond("v <= 1 on Xs", vec![(v.scale(-1.0).add_poly(&one), b.xs(false))]));
        }
    }

    let (ca, cb, cm) = bound_coefficients(kind, alpha, t);
    let mut objective = BTreeMap::new();
    for (i, m) in vt.monomials.iter().enumerate() {
        let val = m.eval(&query.x0, 0.0);
        if val != 0.0 {
            objective.insert(vt.offset + i, ca * val);
        }
    }
    if let Some(k) = beta {
        objective.insert(k, cb);
    }
    if let Some(k) = m_idx {
        objective.insert(k, cm);
    }

    Ok(CertificateProblem {
        kind,
        alpha,
        horizon: t,
        x0: query.x0.clone(),
        nvars: n,
        v: vt,
        w: wt,
        beta,
        m: m_idx,
        n_decision: next,
        conditions,
        objective,
        objective_offset: 0.0,
        sense: if kind.is_upper() { Sense::Minimize } else { Sense::Maximize },
        multiplier_degree: degrees.multiplier,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertStatus {
    /// Solved and residual-checked.
    Certified,
    /// Solved, but sampling found a violation above the margin.
    Unverified,
    /// Every grid point was infeasible at this degree.
    NoCertificate,
    /// The solver failed on every grid point.
    SolverFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub solver_status: String,
    pub raw_bound: Option<f64>,
    pub checked: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub kind: CertificateKind,
    pub status: CertStatus,
    pub bound: Option<f64>,
    pub raw_bound: Option<f64>,
    pub vacuous: bool,
    pub v0: Option<f64>,
    pub v: Option<Polynomial>,
    pub w: Option<Polynomial>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    #[serde(rename = "M")]
    pub m: Option<f64>,
    pub solver_status: String,
    pub reconstruction_residual: Option<f64>,
    pub residual_summary: Option<ResidualSummary>,
    pub degrees: Degrees,
    pub margin: f64,
    pub grid_restricted: bool,
    pub grid: Vec<GridPoint>,
    pub notes: Vec<String>,
}

impl BoundReport {
    /// Certified bound usable for soundness comparisons.
    pub fn certified_bound(&self) -> Option<f64> {
        (self.status == CertStatus::Certified).then_some(self.bound).flatten()
    }
}

#[derive(Debug, Clone)]
pub struct CertifyOptions {
    pub degrees: Degrees,
    /// `None` uses [`default_alpha_grid`].
    pub alpha_grid: Option<Vec<f64>>,
    pub backend: Backend,
    pub margin: f64,
    pub residual_samples: usize,
    pub seed: u64,
    pub solver: SolverOptions,
    /// Forces `w = 0` in the horizon lower-bound kinds.
    pub zero_w: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            degrees: Degrees::default(),
            alpha_grid: None,
            backend: Backend::InProcess,
            margin: 1e-6,
            residual_samples: 200,
            seed: 0,
            solver: SolverOptions::default(),
            zero_w: false,
        }
    }
}

struct Attempt {
    alpha: f64,
    status: Status,
    decision: Vec<f64>,
    raw: f64,
    residual: f64,
    summary: Option<ResidualSummary>,
    problem: CertificateProblem,
}

fn attempt(
    kind: CertificateKind,
    problem: &Problem,
    opts: &CertifyOptions,
    alpha: f64,
    idx: usize,
) -> Result<Attempt, CertError> {
    let mut cp = build_condition(kind, &problem.model, &problem.query, &opts.degrees, alpha)?;
    if opts.zero_w {
        cp.remove_w();
    }
    let program = cp.to_program(opts.margin);
    let name = format!("{kind}-{idx:02}");
    let sol = solve_program(&program, &opts.backend, &name, &opts.solver)?;
    let raw = cp.bound_of(&sol.decision);
    let summary = (sol.status == Status::Optimal).then(|| {
        residual_check(
            &cp,
            &sol.decision,
            &problem.bbox,
            opts.residual_samples,
            opts.margin,
            opts.seed,
        )
    });
    Ok(Attempt {
        alpha,
        status: sol.status,
        decision: sol.decision,
        raw,
        residual: sol.reconstruction_residual,
        summary,
        problem: cp,
    })
}

/// Builds, solves and residual-checks `kind` over the alpha grid and
/// reports the best bound (ties go to the smallest `|alpha|`).
pub fn certify(kind: CertificateKind, problem: &Problem, opts: &CertifyOptions) -> Result<BoundReport, CertError> {
    if kind.query_kind() != problem.query.kind {
        return Err(CertError::KindMismatch {
            kind,
            expected: query_name(kind.query_kind()),
            got: query_name(problem.query.kind),
        });
    }
    let t = problem.query.horizon;
    let grid: Vec<f64> = if kind.uses_alpha() {
        opts.alpha_grid.clone().unwrap_or_else(|| default_alpha_grid(t))
    } else {
        vec![0.0]
    };
    let attempts: Vec<Attempt> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &a)| attempt(kind, problem, opts, a, i))
        .collect::<Result<_, _>>()?;

    let grid_points = attempts
        .iter()
        .map(|a| GridPoint {
            alpha: a.alpha,
            solver_status: a.status.as_str().into(),
            raw_bound: (a.status == Status::Optimal).then_some(a.raw),
            checked: a.summary.as_ref().map(ResidualSummary::is_checked),
        })
        .collect();

    let better = |a: &Attempt, b: &Attempt| -> bool {
        let (x, y) = if kind.is_upper() { (a.raw, b.raw) } else { (-a.raw, -b.raw) };
        x < y || (x == y && a.alpha.abs() < b.alpha.abs())
    };
    let pick = |want_checked: bool| {
        attempts
            .iter()
            .filter(|a| a.status == Status::Optimal && a.raw.is_finite())
            .filter(|a| {
                !want_checked
                    || (a.residual <= opts.margin && a.summary.as_ref().is_some_and(ResidualSummary::is_checked))
            })
            .fold(None::<&Attempt>, |best, a| match best {
                Some(b) if !better(a, b) => Some(b),
                _ => Some(a),
            })
    };
    let chosen = pick(true).map(|a| (a, CertStatus::Certified)).or_else(|| pick(false).map(|a| (a, CertStatus::Unverified)));

    let mut notes = Vec::new();
    if matches!(kind, IL1 | IL2) {
        notes.push("v(T) <= 1_Xs is imposed as v(T) <= 0 on cl(X\\Xs) including dXs, which is stricter than the indicator".into());
    }
    if opts.zero_w && kind.has_w() {
        notes.push("w forced to zero".into());
    }
    let restricted = opts.alpha_grid.is_some() && kind.uses_alpha();
    if restricted {
        notes.push("alpha search restricted to a user grid".into());
    }

    let mut report = BoundReport {
        kind,
        status: CertStatus::NoCertificate,
        bound: None,
        raw_bound: None,
        vacuous: false,
        v0: None,
        v: None,
        w: None,
        alpha: None,
        beta: None,
        m: None,
        solver_status: String::new(),
        reconstruction_residual: None,
        residual_summary: None,
        degrees: opts.degrees,
        margin: opts.margin,
        grid_restricted: restricted,
        grid: grid_points,
        notes,
    };
    match chosen {
        Some((a, status)) => {
            let cp = &a.problem;
            let (bound, vacuous) = if kind.is_upper() {
                (a.raw.clamp(0.0, 1.0), a.raw >= 1.0)
            } else {
                (a.raw.clamp(0.0, 1.0), a.raw <= 0.0)
            };
            if vacuous {
                report.notes.push(format!("raw bound {} is vacuous; clamped to {bound}", a.raw));
            }
            report.status = status;
            report.bound = Some(bound);
            report.raw_bound = Some(a.raw);
            report.vacuous = vacuous;
            report.v0 = Some(cp.v_poly(&a.decision).eval(&cp.x0, 0.0));
            report.v = Some(cp.v_poly(&a.decision));
            report.w = cp.w_poly(&a.decision);
            report.alpha = Some(a.alpha);
            report.beta = cp.beta.map(|k| a.decision[k]);
            report.m = cp.m.map(|k| a.decision[k]);
            report.solver_status = a.status.as_str().into();
            report.reconstruction_residual = Some(a.residual);
            report.residual_summary = a.summary.clone();
        }
        None => {
            let any_infeasible = attempts
                .iter()
                .any(|a| matches!(a.status, Status::PrimalInfeasible | Status::DualInfeasible));
            report.status = if any_infeasible {
                CertStatus::NoCertificate
            } else {
                CertStatus::SolverFailure
            };
            report.solver_status = if any_infeasible { "infeasible" } else { "numerical_trouble" }.into();
            report.notes.push(format!(
                "no certificate found at degree v = {}{}",
                opts.degrees.v,
                if kind.has_w() { format!(", w = {}", opts.degrees.w) } else { String::new() }
            ));
        }
    }
    Ok(report)
}

/// Initial states certified by a lower-bound certificate of a deterministic
/// model: `{x in X \ Xs : bound(v(0, x)) > 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachSet {
    pub certificate: SemialgebraicSet,
    pub domain: SemialgebraicSet,
    pub target: SemialgebraicSet,
}

impl ReachSet {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.certificate.contains(x) && self.domain.contains(x) && !self.target.contains(x)
    }
}

pub fn retrieve_deterministic_reach_set(
    report: &BoundReport,
    model: &SdeModel,
    query: &ReachQuery,
) -> Result<ReachSet, CertError> {
    if !model.has_zero_diffusion() {
        return Err(CertError::NonzeroDiffusion);
    }
    if report.kind.is_upper() {
        return Err(CertError::NotLowerBound(report.kind));
    }
    let v = report.v.as_ref().ok_or(CertError::NoCertificate)?;
    let v0x = v.substitute_time(0.0);
    let (a, b, c) = bound_coefficients(report.kind, report.alpha.unwrap_or(0.0), query.horizon);
    let shift = b * report.beta.unwrap_or(0.0) + c * report.m.unwrap_or(0.0);
    let g = &v0x.scale(a) + &Polynomial::constant(query.n(), shift);
    Ok(ReachSet {
        certificate: SemialgebraicSet::open(g),
        domain: query.domain.clone(),
        target: query.target.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::parse_with_nvars as p;

    fn bm() -> (SdeModel, ReachQuery) {
        let m = SdeModel::new(vec![p("0", 1).unwrap()], vec![vec![p("1", 1).unwrap()]]).unwrap();
        let q = ReachQuery::new(
            p("(x1 + 2)*(1 - x1)", 1).unwrap(),
            p("x1 - 0.9", 1).unwrap(),
            1.0,
            vec![0.0],
            QueryKind::Horizon,
        )
        .unwrap();
        (m, q)
    }

    #[test]
    fn bound_formula_examples() {
        assert!((bound_formula(HU2, 0.3, 0.0, 0.2, 0.0, 2.0) - 0.7).abs() < 1e-15);
        assert!((bound_formula(HU2, 0.25, 1.0, 0.0, 0.0, 2f64.ln()) - 0.5).abs() < 1e-15);
        assert!((bound_formula(HL2, 0.9, 0.0, -0.1, 0.05, 1.0) - 0.75).abs() < 1e-15);
        assert!((bound_formula(HL1, 0.8, 0.0, 0.0, 0.1, 2.0) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn competing_bound_examples() {
        let c = competing_bounds(0.2, 0.0, 0.1, 1.0);
        assert!((c.gronwall - 0.3).abs() < 1e-15);
        assert!((c.santoyo.unwrap() - 0.3).abs() < 1e-15);
        let c = competing_bounds(0.2, -1e-8, 0.1, 1.0);
        assert!((c.gronwall - 0.3).abs() < 1e-6);
        assert!(c.santoyo.unwrap() > c.gronwall);
        assert_eq!(competing_bounds(0.2, 1.0, 0.1, 1.0).santoyo, None);
    }

    #[test]
    fn condition_counts() {
        let (m, q) = bm();
        let d = Degrees { v: 2, ..Default::default() };
        let hu1 = build_condition(HU1, &m, &q, &d, 0.0).unwrap();
        assert_eq!(hu1.conditions.len(), 4);
        assert_eq!(hu1.conditions.iter().map(|c| c.pieces.len()).sum::<usize>(), 5);
        let hl1 = build_condition(HL1, &m, &q, &d, 0.0).unwrap();
        assert_eq!(hl1.conditions.len(), 7);
        assert!(hl1.w.is_some() && hl1.m.is_some() && hl1.beta.is_none());
    }

    #[test]
    fn kind_mismatch_and_degrees() {
        let (m, q) = bm();
        assert!(matches!(
            build_condition(IU1, &m, &q, &Degrees::default(), 0.0),
            Err(CertError::KindMismatch { .. })
        ));
        let odd = Degrees { v: 3, ..Default::default() };
        assert!(matches!(build_condition(HU1, &m, &q, &odd, 0.0), Err(CertError::Degree(_))));
    }

    #[test]
    fn iu2_at_zero_alpha() {
        let (m, q) = bm();
        let q = q.with_kind(QueryKind::Instant);
        let cp = build_condition(IU2, &m, &q, &Degrees { v: 2, ..Default::default() }, 0.0).unwrap();
        let beta = cp.beta.unwrap();
        // Lv <= beta: expression beta - Lv has beta with coefficient 1.
        let e = &cp.conditions[0].pieces[0].expr;
        assert_eq!(e.linear[&beta], Polynomial::constant(1, 1.0));
        assert_eq!(cp.conditions[1].pieces[0].expr.linear[&beta], Polynomial::constant(1, 1.0));
    }

    #[test]
    fn alpha_grid_shape() {
        let g = default_alpha_grid(2.0);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.0);
        assert!(g.contains(&(8.0 / 2.0)) && g.contains(&(-1.0 / 128.0)));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("hl2".parse::<CertificateKind>().unwrap(), HL2);
        assert!("HX1".parse::<CertificateKind>().is_err());
    }
}
