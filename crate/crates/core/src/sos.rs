//! Sum-of-squares compilation of set-constrained polynomial inequalities.
//!
//! A constraint `target >= 0 on {g_i >= 0, h_j = 0}` is certified by the
//! identity
//!
//! ```text
//! target - margin = s0 + sum_i s_i g_i + sum_j lambda_j h_j
//! ```
//!
//! with SOS polynomials `s0, s_i` (PSD Gram matrices over a dense monomial
//! basis) and free polynomials `lambda_j`. Coefficients of every monomial up
//! to the degree budget are matched, one SDP row each.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::process::Command;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdereach_sdp::{sdpa, LinearForm, SdpInstance, Solution, SolverOptions, Status};
use serde::Serialize;
use thiserror::Error;

use crate::certificates::CertificateProblem;
use crate::model::BoundingBox;
use crate::poly::{monomials_up_to, ring_vars, Monomial, Polynomial};

#[derive(Debug, Error)]
pub enum SosError {
    #[error("multiplier of degree {mult} times constraint of degree {g} exceeds the degree budget {budget} in `{region}`; raise the certificate degree")]
    DegreeBudget {
        region: String,
        mult: u32,
        g: u32,
        budget: u32,
    },
    #[error("multiplier degree {0} is odd; SOS multipliers need even degree")]
    OddMultiplier(u32),
    #[error("SDP backend failed: {0}")]
    Backend(String),
    #[error(transparent)]
    Sdp(#[from] sdereach_sdp::SdpError),
}

/// `constant + sum_k d_k * linear[k]` for decision variables `d_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePoly {
    pub constant: Polynomial,
    pub linear: BTreeMap<usize, Polynomial>,
}

impl AffinePoly {
    pub fn constant(p: Polynomial) -> Self {
        Self {
            constant: p,
            linear: BTreeMap::new(),
        }
    }

    /// `d_k * p`
    pub fn var(nvars: usize, k: usize, p: Polynomial) -> Self {
        let mut linear = BTreeMap::new();
        if !p.is_zero() {
            linear.insert(k, p);
        }
        Self {
            constant: Polynomial::zero(nvars),
            linear,
        }
    }

    pub fn zero(nvars: usize) -> Self {
        Self::constant(Polynomial::zero(nvars))
    }

    pub fn nvars(&self) -> usize {
        self.constant.nvars()
    }

    pub fn add(&self, other: &AffinePoly) -> AffinePoly {
        let mut out = self.clone();
        out.constant = &out.constant + &other.constant;
        for (k, p) in &other.linear {
            let sum = match out.linear.get(k) {
                Some(q) => q + p,
                None => p.clone(),
            };
            if sum.is_zero() {
                out.linear.remove(k);
            } else {
                out.linear.insert(*k, sum);
            }
        }
        out
    }

    pub fn sub(&self, other: &AffinePoly) -> AffinePoly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> AffinePoly {
        self.map(|p| p.scale(s))
    }

    pub fn add_poly(&self, p: &Polynomial) -> AffinePoly {
        let mut out = self.clone();
        out.constant = &out.constant + p;
        out
    }

    /// Applies a linear map to every part.
    pub fn map(&self, f: impl Fn(&Polynomial) -> Polynomial) -> AffinePoly {
        AffinePoly {
            constant: f(&self.constant),
            linear: self
                .linear
                .iter()
                .map(|(k, p)| (*k, f(p)))
                .filter(|(_, p)| !p.is_zero())
                .collect(),
        }
    }

    pub fn try_map<E>(&self, f: impl Fn(&Polynomial) -> Result<Polynomial, E>) -> Result<AffinePoly, E> {
        let mut linear = BTreeMap::new();
        for (k, p) in &self.linear {
            let q = f(p)?;
            if !q.is_zero() {
                linear.insert(*k, q);
            }
        }
        Ok(AffinePoly {
            constant: f(&self.constant)?,
            linear,
        })
    }

    pub fn degree(&self) -> u32 {
        self.linear
            .values()
            .map(Polynomial::degree)
            .fold(self.constant.degree(), u32::max)
    }

    pub fn has_time(&self) -> bool {
        self.constant.has_time() || self.linear.values().any(Polynomial::has_time)
    }

    pub fn variables(&self) -> impl Iterator<Item = usize> + '_ {
        self.linear.keys().copied()
    }

    /// Substitutes decision values.
    pub fn instantiate(&self, values: &[f64]) -> Polynomial {
        let mut p = self.constant.clone();
        for (k, q) in &self.linear {
            p = &p + &q.scale(values[*k]);
        }
        p
    }

    /// Fixes some decision variables to constants.
    pub fn pin(&self, pins: &BTreeMap<usize, f64>) -> AffinePoly {
        let mut out = AffinePoly::constant(self.constant.clone());
        for (k, q) in &self.linear {
            match pins.get(k) {
                Some(v) => out.constant = &out.constant + &q.scale(*v),
                None => {
                    out.linear.insert(*k, q.clone());
                }
            }
        }
        out
    }
}

/// A basic semialgebraic region `{g_i >= 0, h_j = 0}`, optionally over
/// `t in [0, T]` (the builder adds `t(T - t) >= 0` to `ineqs`).
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub label: String,
    pub ineqs: Vec<Polynomial>,
    pub eqs: Vec<Polynomial>,
    pub time_horizon: Option<f64>,
}

impl Region {
    pub fn has_time(&self) -> bool {
        self.time_horizon.is_some()
            || self.ineqs.iter().chain(&self.eqs).any(Polynomial::has_time)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SosConstraint {
    pub target: AffinePoly,
    pub region: Region,
    /// Degree of every inequality multiplier; `None` uses the largest even
    /// degree that fits the budget.
    pub multiplier_degree: Option<u32>,
    /// Fixed degree budget; `None` derives it from the data.
    pub order: Option<u32>,
}

fn even_ceil(d: u32) -> u32 {
    d + d % 2
}

#[derive(Debug, Clone)]
struct GramBlock {
    block: usize,
    basis: Vec<Monomial>,
    /// Multiplied polynomial; `None` for `s0`.
    g: Option<Polynomial>,
}

#[derive(Debug, Clone)]
struct FreeMultiplier {
    first: usize,
    basis: Vec<Monomial>,
    h: Polynomial,
}

#[derive(Debug, Clone)]
struct ConstraintLayout {
    nvars: usize,
    has_time: bool,
    budget: u32,
    grams: Vec<GramBlock>,
    frees: Vec<FreeMultiplier>,
}

/// A set of SOS constraints sharing decision variables, with a linear
/// objective `sum_k c_k d_k + offset` to minimize.
#[derive(Debug, Clone, Default)]
pub struct SosProgram {
    pub n_decision: usize,
    pub constraints: Vec<SosConstraint>,
    pub objective: BTreeMap<usize, f64>,
    pub objective_offset: f64,
    /// Each target is encoded as `target - margin`.
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct CompiledProgram {
    pub instance: SdpInstance,
    decision_map: Vec<Option<usize>>,
    n_decision: usize,
    layouts: Vec<ConstraintLayout>,
}

impl CompiledProgram {
    pub fn num_rows(&self) -> usize {
        self.instance.rows.len()
    }
}

/// Adds one constraint to `inst`. `dec` maps decision variables to free
/// SDP variables.
fn compile_into(
    c: &SosConstraint,
    dec: &[Option<usize>],
    margin: f64,
    inst: &mut SdpInstance,
) -> Result<ConstraintLayout, SosError> {
    let nvars = c.target.nvars();
    let has_time = c.target.has_time() || c.region.has_time();
    let vars = ring_vars(nvars, has_time);

    if let Some(m) = c.multiplier_degree {
        if m % 2 == 1 {
            return Err(SosError::OddMultiplier(m));
        }
    }
    let mut need = c.target.degree();
    for h in &c.region.eqs {
        need = need.max(h.degree());
    }
    for g in &c.region.ineqs {
        need = need.max(g.degree() + c.multiplier_degree.unwrap_or(0));
    }
    let budget = match c.order {
        Some(order) => {
            for g in &c.region.ineqs {
                let mult = c.multiplier_degree.unwrap_or(0);
                if mult + g.degree() > order {
                    return Err(SosError::DegreeBudget {
                        region: c.region.label.clone(),
                        mult,
                        g: g.degree(),
                        budget: order,
                    });
                }
            }
            even_ceil(order.max(c.target.degree()))
        }
        None => even_ceil(need),
    };

    let rows_monos = monomials_up_to(&vars, budget);
    let index: HashMap<Monomial, usize> = rows_monos
        .iter()
        .enumerate()
        .map(|(i, m)| (m.clone(), i))
        .collect();
    let mut forms: Vec<LinearForm> = vec![LinearForm::new(); rows_monos.len()];
    let mut rhs = vec![0.0; rows_monos.len()];

    // target - margin on the right: -linear part goes left.
    for (m, coef) in c.target.constant.terms() {
        rhs[index[m]] += coef;
    }
    rhs[index[&Monomial::one()]] -= margin;
    for (k, p) in &c.target.linear {
        let col = dec[*k].expect("decision variable not mapped");
        for (m, coef) in p.terms() {
            forms[index[m]].add_free(col, -coef);
        }
    }

    let mut grams = Vec::new();
    let mut add_gram = |g: Option<&Polynomial>, deg: u32, inst: &mut SdpInstance, forms: &mut [LinearForm]| {
        let basis = monomials_up_to(&vars, deg / 2);
        let block = inst.add_block(basis.len());
        let one = Polynomial::constant(nvars, 1.0);
        let mult = g.unwrap_or(&one);
        for a in 0..basis.len() {
            for b in a..basis.len() {
                let ab = basis[a].mul(&basis[b]);
                for (gm, gc) in mult.terms() {
                    forms[index[&ab.mul(gm)]].add_entry(block, a, b, gc);
                }
            }
        }
        grams.push(GramBlock {
            block,
            basis,
            g: g.cloned(),
        });
    };
    add_gram(None, budget, inst, &mut forms);
    for g in &c.region.ineqs {
        let deg = match c.multiplier_degree {
            Some(m) => m,
            None => (budget - g.degree()) / 2 * 2,
        };
        add_gram(Some(g), deg, inst, &mut forms);
    }

    let mut frees = Vec::new();
    for h in &c.region.eqs {
        let basis = monomials_up_to(&vars, budget - h.degree());
        let first = inst.add_free(basis.len());
        for (q, bm) in basis.iter().enumerate() {
            for (hm, hc) in h.terms() {
                forms[index[&bm.mul(hm)]].add_free(first + q, hc);
            }
        }
        frees.push(FreeMultiplier {
            first,
            basis,
            h: h.clone(),
        });
    }

    for (form, r) in forms.into_iter().zip(rhs) {
        inst.add_row(form, r);
    }
    Ok(ConstraintLayout {
        nvars,
        has_time,
        budget,
        grams,
        frees,
    })
}

/// Compiles a single constraint with its own decision variables.
pub fn compile(c: &SosConstraint, n_decision: usize, margin: f64) -> Result<CompiledProgram, SosError> {
    compile_program(&SosProgram {
        n_decision,
        constraints: vec![c.clone()],
        objective: BTreeMap::new(),
        objective_offset: 0.0,
        margin,
    })
}

pub fn compile_program(p: &SosProgram) -> Result<CompiledProgram, SosError> {
    let mut used = BTreeSet::new();
    for c in &p.constraints {
        used.extend(c.target.variables());
    }
    used.extend(p.objective.iter().filter(|(_, v)| **v != 0.0).map(|(k, _)| *k));
    let mut inst = SdpInstance::new();
    let mut decision_map = vec![None; p.n_decision];
    for k in used {
        decision_map[k] = Some(inst.add_free(1));
    }
    for (k, &v) in &p.objective {
        if let Some(col) = decision_map[*k] {
            inst.objective.add_free(col, v);
        }
    }
    inst.objective_offset = p.objective_offset;
    let mut layouts = Vec::with_capacity(p.constraints.len());
    for c in &p.constraints {
        layouts.push(compile_into(c, &decision_map, p.margin, &mut inst)?);
    }
    inst.canonicalize();
    Ok(CompiledProgram {
        instance: inst,
        decision_map,
        n_decision: p.n_decision,
        layouts,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    InProcess,
    /// Writes `<dir>/<name>.dat-s` and reads `<dir>/<name>.out`. With a
    /// command, runs `command <in> <out>` (an SDPA-compatible solver);
    /// otherwise the built-in solver processes the files.
    FileExchange { dir: PathBuf, command: Option<String> },
}

impl Backend {
    /// `inprocess`, `sdpa:<dir>` or `sdpa:<dir>:<command>`.
    pub fn parse(s: &str) -> Result<Self, String> {
        if s == "inprocess" {
            return Ok(Backend::InProcess);
        }
        let rest = s
            .strip_prefix("sdpa:")
            .ok_or_else(|| format!("unknown backend `{s}`; use `inprocess` or `sdpa:<dir>`"))?;
        let (dir, command) = match rest.split_once(':') {
            Some((d, c)) => (d, Some(c.to_string())),
            None => (rest, None),
        };
        if dir.is_empty() {
            return Err("sdpa backend needs a directory".into());
        }
        Ok(Backend::FileExchange {
            dir: PathBuf::from(dir),
            command,
        })
    }
}

/// Solves an SDP with the chosen backend. `name` keys exchange files.
pub fn solve(
    inst: &SdpInstance,
    backend: &Backend,
    name: &str,
    opts: &SolverOptions,
) -> Result<Solution, SosError> {
    match backend {
        Backend::InProcess => Ok(sdereach_sdp::solve(inst, opts)?),
        Backend::FileExchange { dir, command } => {
            std::fs::create_dir_all(dir).map_err(sdereach_sdp::SdpError::from)?;
            let input = dir.join(format!("{name}.dat-s"));
            let output = dir.join(format!("{name}.out"));
            std::fs::write(&input, sdpa::write_sdpa(inst)).map_err(sdereach_sdp::SdpError::from)?;
            match command {
                Some(cmd) => {
                    let mut parts = cmd.split_whitespace();
                    let prog = parts
                        .next()
                        .ok_or_else(|| SosError::Backend("empty solver command".into()))?;
                    let status = Command::new(prog)
                        .args(parts)
                        .arg(&input)
                        .arg(&output)
                        .status()
                        .map_err(|e| SosError::Backend(format!("cannot run `{prog}`: {e}")))?;
                    if !status.success() {
                        return Err(SosError::Backend(format!("`{cmd}` exited with {status}")));
                    }
                }
                None => {
                    sdpa::solve_file(&input, &output, opts)?;
                }
            }
            let text = std::fs::read_to_string(&output).map_err(sdereach_sdp::SdpError::from)?;
            Ok(sdpa::parse_solution(inst, &text)?)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SosSolution {
    pub status: Status,
    /// Values of all decision variables; unused ones are zero.
    pub decision: Vec<f64>,
    pub objective: f64,
    /// Largest coefficient of the reassembled identity minus its target.
    pub reconstruction_residual: f64,
    pub sdp: Solution,
}

fn gram_poly(basis: &[Monomial], x: &DMatrix<f64>, nvars: usize, has_time: bool) -> Polynomial {
    let mut terms = Vec::new();
    for a in 0..basis.len() {
        for b in 0..basis.len() {
            terms.push((basis[a].mul(&basis[b]), x[(a, b)]));
        }
    }
    Polynomial::from_terms(nvars, has_time, terms)
}

impl CompiledProgram {
    pub fn decision_values(&self, sol: &Solution) -> Vec<f64> {
        self.decision_map
            .iter()
            .map(|m| m.map_or(0.0, |c| sol.y[c]))
            .collect()
    }

    /// Reassembles `s0 + sum s_i g_i + sum lambda_j h_j - (target - margin)`
    /// for every constraint and returns the largest coefficient.
    pub fn reconstruction_residual(&self, program: &SosProgram, sol: &Solution) -> f64 {
        let values = self.decision_values(sol);
        let mut worst: f64 = 0.0;
        for (c, lay) in program.constraints.iter().zip(&self.layouts) {
            let mut acc = Polynomial::zero(lay.nvars);
            for g in &lay.grams {
                let s = gram_poly(&g.basis, &sol.x[g.block], lay.nvars, lay.has_time);
                acc = match &g.g {
                    Some(gp) => &acc + &(&s * gp),
                    None => &acc + &s,
                };
            }
            for f in &lay.frees {
                let lam = Polynomial::from_terms(
                    lay.nvars,
                    lay.has_time,
                    f.basis.iter().enumerate().map(|(q, m)| (m.clone(), sol.y[f.first + q])),
                );
                acc = &acc + &(&lam * &f.h);
            }
            let target = c.target.instantiate(&values).try_sub(&Polynomial::constant(lay.nvars, program.margin));
            let diff = &acc - &target.expect("ring mismatch");
            worst = worst.max(diff.max_abs_coefficient());
        }
        worst
    }

    /// Degree budget of each constraint, in order.
    pub fn budgets(&self) -> Vec<u32> {
        self.layouts.iter().map(|l| l.budget).collect()
    }

    pub fn n_decision(&self) -> usize {
        self.n_decision
    }
}

/// Compiles, solves and post-processes a program.
pub fn solve_program(
    program: &SosProgram,
    backend: &Backend,
    name: &str,
    opts: &SolverOptions,
) -> Result<SosSolution, SosError> {
    let compiled = compile_program(program)?;
    let mut sol = solve(&compiled.instance, backend, name, opts)?;
    if sol.status == Status::Optimal {
        sdereach_sdp::polish(&compiled.instance, &mut sol);
    }
    let decision = compiled.decision_values(&sol);
    let residual = compiled.reconstruction_residual(program, &sol);
    let objective = program.objective_offset
        + program
            .objective
            .iter()
            .map(|(k, c)| c * decision[*k])
            .sum::<f64>();
    Ok(SosSolution {
        status: sol.status,
        decision,
        objective,
        reconstruction_residual: residual,
        sdp: sol,
    })
}

/// A sampled point of a region: state and time.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPoint {
    pub x: Vec<f64>,
    pub t: f64,
}

fn satisfies_ineqs(region: &Region, x: &[f64], t: f64, tol: f64) -> bool {
    region.ineqs.iter().all(|g| g.eval(x, t) >= -tol)
}

/// Roots of `h` along the line `p + s u` inside (a 1% enlargement of) the
/// box, found by a sign scan and bisection to `tol`.
fn line_roots(h: &Polynomial, p: &[f64], u: &[f64], bbox: &BoundingBox, tol: f64) -> Vec<Vec<f64>> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for ((&pi, &ui), &(a, b)) in p.iter().zip(u).zip(bbox) {
        let pad = 0.01 * (b - a);
        if ui.abs() < 1e-14 {
            continue;
        }
        let (s1, s2) = ((a - pad - pi) / ui, (b + pad - pi) / ui);
        lo = lo.max(s1.min(s2));
        hi = hi.min(s1.max(s2));
    }
    if !(lo < hi) {
        return Vec::new();
    }
    let at = |s: f64| -> Vec<f64> { p.iter().zip(u).map(|(pi, ui)| pi + s * ui).collect() };
    let f = |s: f64| h.eval(&at(s), 0.0);
    let steps = 400;
    let ds = (hi - lo) / steps as f64;
    let mut roots = Vec::new();
    let mut s0 = lo;
    let mut f0 = f(s0);
    for k in 1..=steps {
        let s1 = lo + k as f64 * ds;
        let f1 = f(s1);
        if f0 == 0.0 {
            roots.push(at(s0));
        } else if f0 * f1 < 0.0 {
            let (mut a, mut b, mut fa) = (s0, s1, f0);
            while b - a > tol {
                let m = 0.5 * (a + b);
                let fm = f(m);
                if fm == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if fa * fm < 0.0 {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
            }
            roots.push(at(0.5 * (a + b)));
        }
        s0 = s1;
        f0 = f1;
    }
    if f0 == 0.0 {
        roots.push(at(s0));
    }
    roots
}

/// Draws up to `count` points of a region: rejection sampling in the box
/// for inequality regions, root finding along random lines for equality
/// regions. Time is uniform on `[0, T]` when the region is time-dependent.
pub fn sample_region(
    region: &Region,
    bbox: &BoundingBox,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<RegionPoint> {
    let n = bbox.len();
    let tol = 1e-8;
    let horizon = region.time_horizon.unwrap_or(0.0);
    let draw_t = |rng: &mut ChaCha8Rng| {
        if horizon > 0.0 {
            rng.gen_range(0.0..=horizon)
        } else {
            0.0
        }
    };
    let mut out = Vec::new();
    if region.eqs.is_empty() {
        for _ in 0..count.saturating_mul(200) {
            if out.len() == count {
                break;
            }
            let x: Vec<f64> = bbox.iter().map(|&(a, b)| rng.gen_range(a..=b)).collect();
            let t = draw_t(rng);
            if satisfies_ineqs(region, &x, t, 0.0) {
                out.push(RegionPoint { x, t });
            }
        }
        return out;
    }
    let h = &region.eqs[0];
    for _ in 0..count.saturating_mul(50) {
        if out.len() >= count {
            break;
        }
        let p: Vec<f64> = bbox.iter().map(|&(a, b)| rng.gen_range(a..=b)).collect();
        let mut u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        u.iter_mut().for_each(|v| *v /= norm);
        for x in line_roots(h, &p, &u, bbox, tol) {
            let t = draw_t(rng);
            let on_rest = region.eqs[1..].iter().all(|e| e.eval(&x, t).abs() <= 1e-6);
            if on_rest && satisfies_ineqs(region, &x, t, 1e-9) && out.len() < count {
                out.push(RegionPoint { x, t });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionResidual {
    pub condition: String,
    pub region: String,
    pub samples: usize,
    pub worst_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSummary {
    /// `checked` or `violated`.
    pub status: String,
    pub margin: f64,
    pub worst_violation: f64,
    pub regions: Vec<RegionResidual>,
    pub warnings: Vec<String>,
}

impl ResidualSummary {
    pub fn is_checked(&self) -> bool {
        self.status == "checked"
    }
}

/// Evaluates every condition of `problem` at sampled points of its region,
/// with the decision variables fixed to `decision`. The certificate is
/// `checked` iff no sampled violation exceeds `margin`.
pub fn residual_check(
    problem: &CertificateProblem,
    decision: &[f64],
    bbox: &BoundingBox,
    samples: usize,
    margin: f64,
    seed: u64,
) -> ResidualSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut regions = Vec::new();
    let mut warnings = Vec::new();
    let mut worst: f64 = 0.0;
    for cond in &problem.conditions {
        for piece in &cond.pieces {
            let expr = piece.expr.instantiate(decision);
            let pts = sample_region(&piece.region, bbox, samples, &mut rng);
            if pts.is_empty() {
                warnings.push(format!(
                    "{}: no points found in region {}; unchecked",
                    cond.label, piece.region.label
                ));
            }
            let w = pts
                .iter()
                .map(|p| (-expr.eval(&p.x, p.t)).max(0.0))
                .fold(0.0, f64::max);
            worst = worst.max(w);
            regions.push(RegionResidual {
                condition: cond.label.clone(),
                region: piece.region.label.clone(),
                samples: pts.len(),
                worst_violation: w,
            });
        }
    }
    ResidualSummary {
        status: if worst <= margin { "checked" } else { "violated" }.into(),
        margin,
        worst_violation: worst,
        regions,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::parse_with_nvars as p;

    fn constraint(target: &str, ineqs: &[&str], eqs: &[&str], n: usize) -> SosConstraint {
        SosConstraint {
            target: AffinePoly::constant(p(target, n).unwrap()),
            region: Region {
                label: "test".into(),
                ineqs: ineqs.iter().map(|s| p(s, n).unwrap()).collect(),
                eqs: eqs.iter().map(|s| p(s, n).unwrap()).collect(),
                time_horizon: None,
            },
            multiplier_degree: None,
            order: None,
        }
    }

    fn run(c: &SosConstraint) -> SosSolution {
        let prog = SosProgram {
            n_decision: 0,
            constraints: vec![c.clone()],
            margin: 0.0,
            ..Default::default()
        };
        solve_program(&prog, &Backend::InProcess, "t", &SolverOptions::default()).unwrap()
    }

    #[test]
    fn square_has_expected_gram() {
        let c = constraint("x1^2", &[], &[], 1);
        let compiled = compile(&c, 0, 0.0).unwrap();
        assert_eq!(compiled.instance.blocks, vec![2]);
        assert_eq!(compiled.num_rows(), 3);
        let s = run(&c);
        assert_eq!(s.status, Status::Optimal);
        let x = &s.sdp.x[0];
        assert!((x[(1, 1)] - 1.0).abs() < 1e-6 && x[(0, 0)].abs() < 1e-6 && x[(0, 1)].abs() < 1e-6);
        assert!(s.reconstruction_residual < 1e-8);
    }

    #[test]
    fn interval_constraint_uses_multiplier() {
        let mut c = constraint("1 - x1^2", &["1 - x1^2"], &[], 1);
        c.multiplier_degree = Some(0);
        let s = run(&c);
        assert_eq!(s.status, Status::Optimal);
        assert!(s.reconstruction_residual < 1e-8);
    }

    #[test]
    fn negative_square_infeasible() {
        assert_eq!(run(&constraint("-x1^2", &[], &[], 1)).status, Status::PrimalInfeasible);
    }

    #[test]
    fn motzkin_infeasible() {
        let c = constraint("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", &[], &[], 2);
        assert_eq!(compile(&c, 0, 0.0).unwrap().budgets(), vec![6]);
        assert_eq!(run(&c).status, Status::PrimalInfeasible);
    }

    #[test]
    fn equality_region() {
        // x1 >= 0 on {x1 - 1 = 0}: target - 0 = lambda (x1 - 1) + 1.
        let s = run(&constraint("x1", &[], &["x1 - 1"], 1));
        assert_eq!(s.status, Status::Optimal);
    }

    #[test]
    fn degree_budget_error() {
        let mut c = constraint("1 - x1^2", &["1 - x1^2"], &[], 1);
        c.multiplier_degree = Some(2);
        c.order = Some(2);
        assert!(matches!(compile(&c, 0, 0.0), Err(SosError::DegreeBudget { .. })));
        c.multiplier_degree = Some(1);
        c.order = None;
        assert!(matches!(compile(&c, 0, 0.0), Err(SosError::OddMultiplier(1))));
    }

    #[test]
    fn boundary_sampling_finds_roots() {
        let region = Region {
            label: "dX".into(),
            ineqs: vec![],
            eqs: vec![p("4 - x1^2", 1).unwrap()],
            time_horizon: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = sample_region(&region, &vec![(-2.0, 2.0)], 10, &mut rng);
        assert!(!pts.is_empty());
        for q in &pts {
            assert!((q.x[0].abs() - 2.0).abs() < 1e-7, "{q:?}");
        }
        assert!(pts.iter().any(|q| q.x[0] < 0.0) && pts.iter().any(|q| q.x[0] > 0.0));
    }

    #[test]
    fn decision_variables_and_objective() {
        // min d0 s.t. d0 - x1^2 >= 0 on [-1, 1]  -> d0 = 1.
        let n = 1;
        let target = AffinePoly::var(n, 0, Polynomial::constant(n, 1.0))
            .add(&AffinePoly::constant(p("-x1^2", n).unwrap()));
        let prog = SosProgram {
            n_decision: 2,
            constraints: vec![SosConstraint {
                target,
                region: Region {
                    label: "I".into(),
                    ineqs: vec![p("1 - x1^2", n).unwrap()],
                    eqs: vec![],
                    time_horizon: None,
                },
                multiplier_degree: None,
                order: None,
            }],
            objective: [(0, 1.0)].into_iter().collect(),
            objective_offset: 0.0,
            margin: 1e-6,
        };
        let s = solve_program(&prog, &Backend::InProcess, "t", &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.decision[0] - 1.0).abs() < 1e-5, "{}", s.decision[0]);
        assert_eq!(s.decision[1], 0.0);
        assert!(s.reconstruction_residual < 1e-7);
    }

    #[test]
    fn file_exchange_matches_in_process() {
        let dir = tempfile::tempdir().unwrap();
        let c = constraint("x1^2 - 2*x1 + 1", &[], &[], 1);
        let compiled = compile(&c, 0, 0.0).unwrap();
        let opts = SolverOptions::default();
        let a = solve(&compiled.instance, &Backend::InProcess, "q", &opts).unwrap();
        let fx = Backend::FileExchange {
            dir: dir.path().to_path_buf(),
            command: None,
        };
        let b = solve(&compiled.instance, &fx, "q", &opts).unwrap();
        assert_eq!(a.status, b.status);
        assert!(dir.path().join("q.dat-s").exists());
        for (xa, xb) in a.x.iter().zip(&b.x) {
            assert!((xa - xb).abs().max() < 1e-12);
        }
    }

    #[test]
    fn backend_parsing() {
        assert_eq!(Backend::parse("inprocess").unwrap(), Backend::InProcess);
        assert_eq!(
            Backend::parse("sdpa:/tmp/x").unwrap(),
            Backend::FileExchange {
                dir: "/tmp/x".into(),
                command: None
            }
        );
        assert!(Backend::parse("mosek").is_err());
    }
}
