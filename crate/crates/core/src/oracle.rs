//! Monte-Carlo and finite-difference ground truth for reachability
//! probabilities.
//!
//! [`estimate_probability`] simulates the stopped processes with
//! Euler-Maruyama. Every path draws from its own ChaCha stream keyed by
//! `(seed, path_index)`, so results do not depend on the number of worker
//! threads. [`fd_solve_1d`] solves the backward Kolmogorov equation of a
//! 1-D model with Crank-Nicolson.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::model::{QueryKind, ReachQuery, SdeModel};
use crate::poly::{CompiledPoly, Polynomial};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("finite differences need a 1-D model, got n = {0}")]
    NotOneDimensional(usize),
    #[error("the domain around x0 is not a bounded interval")]
    UnboundedDomain,
    #[error("grid needs at least 3 nodes and steps at least 1, got grid = {grid}, steps = {steps}")]
    Grid { grid: usize, steps: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub step_h: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// A state with `g_S >= -boundary_tol` counts as reached and one with
    /// `g_X <= boundary_tol` as exited.
    pub boundary_tol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            step_h: 1e-3,
            n_paths: 10_000,
            seed: 0,
            boundary_tol: 0.0,
        }
    }
}

impl SimConfig {
    pub fn check(&self, horizon: f64) -> Result<(), OracleError> {
        if !(self.step_h.is_finite() && self.step_h > 0.0) {
            return Err(OracleError::Config(format!("step must be positive, got {}", self.step_h)));
        }
        if self.step_h > horizon {
            return Err(OracleError::Config(format!("step {} exceeds T = {horizon}", self.step_h)));
        }
        if self.n_paths == 0 {
            return Err(OracleError::Config("need at least one path".into()));
        }
        if !(self.boundary_tol >= 0.0) {
            return Err(OracleError::Config("boundary_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Hit,
    Miss,
    /// The state became non-finite.
    Overflow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_success: usize,
    /// Paths entering the estimate (excluded overflow paths are not counted).
    pub n_paths: usize,
    pub n_overflow: usize,
    pub step_h: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl McEstimate {
    /// Binomial standard error of `p_hat`.
    pub fn std_err(&self) -> f64 {
        if self.n_paths == 0 {
            return f64::NAN;
        }
        (self.p_hat * (1.0 - self.p_hat) / self.n_paths as f64).sqrt()
    }
}

/// Compiled model and sets shared by all paths.
struct Simulator {
    n: usize,
    k: usize,
    drift: Vec<CompiledPoly>,
    /// `(row, column, entry)` of the nonzero diffusion entries.
    diffusion: Vec<(usize, usize, CompiledPoly)>,
    g_x: CompiledPoly,
    g_s: CompiledPoly,
    kind: QueryKind,
    horizon: f64,
    x0: Vec<f64>,
    cfg: SimConfig,
}

impl Simulator {
    fn new(model: &SdeModel, query: &ReachQuery, cfg: SimConfig) -> Self {
        let mut diffusion = Vec::new();
        for (i, row) in model.diffusion().iter().enumerate() {
            for (l, s) in row.iter().enumerate() {
                if !s.is_zero() {
                    diffusion.push((i, l, CompiledPoly::new(s)));
                }
            }
        }
        Self {
            n: model.n(),
            k: model.k(),
            drift: model.drift().iter().map(CompiledPoly::new).collect(),
            diffusion,
            g_x: CompiledPoly::new(query.g_x()),
            g_s: CompiledPoly::new(query.g_s()),
            kind: query.kind,
            horizon: query.horizon,
            x0: query.x0.clone(),
            cfg,
        }
    }

    fn reached(&self, x: &[f64]) -> bool {
        self.g_s.eval(x, 0.0) >= -self.cfg.boundary_tol
    }

    fn exited(&self, x: &[f64]) -> bool {
        self.g_x.eval(x, 0.0) <= self.cfg.boundary_tol
    }

    /// Runs one path, calling `trace(t, x, stopped)` on every visited state.
    fn run(&self, path_index: u64, mut trace: impl FnMut(f64, &[f64], bool)) -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(path_index);
        let mut x = self.x0.clone();
        let mut next = vec![0.0; self.n];
        let mut xi = vec![0.0; self.k];
        let mut t = 0.0;
        let h = self.cfg.step_h;
        let steps = (self.horizon / h - 1e-9).ceil().max(1.0) as usize;

        if self.kind == QueryKind::Horizon && self.reached(&x) {
            trace(t, &x, true);
            return Outcome::Hit;
        }
        if self.exited(&x) {
            trace(t, &x, true);
            return Outcome::Miss;
        }
        trace(t, &x, false);
        for m in 0..steps {
            let dt = if m + 1 == steps { self.horizon - t } else { h };
            let sq = dt.sqrt();
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for i in 0..self.n {
                next[i] = x[i] + self.drift[i].eval(&x, t) * dt;
            }
            for (i, l, s) in &self.diffusion {
                next[*i] += s.eval(&x, t) * sq * xi[*l];
            }
            std::mem::swap(&mut x, &mut next);
            t = if m + 1 == steps { self.horizon } else { t + dt };
            if x.iter().any(|v| !v.is_finite()) {
                trace(t, &x, true);
                return Outcome::Overflow;
            }
            let last = m + 1 == steps;
            match self.kind {
                QueryKind::Horizon => {
                    if self.reached(&x) {
                        trace(t, &x, true);
                        return Outcome::Hit;
                    }
                    if self.exited(&x) {
                        trace(t, &x, true);
                        return Outcome::Miss;
                    }
                }
                QueryKind::Instant => {
                    if last {
                        trace(t, &x, true);
                        return if self.reached(&x) { Outcome::Hit } else { Outcome::Miss };
                    }
                    if self.exited(&x) {
                        trace(t, &x, true);
                        return Outcome::Miss;
                    }
                }
            }
            trace(t, &x, false);
        }
        Outcome::Miss
    }
}

/// Simulates path `path_index`; deterministic in `(cfg.seed, path_index)`.
pub fn simulate_path(model: &SdeModel, query: &ReachQuery, cfg: &SimConfig, path_index: u64) -> Outcome {
    Simulator::new(model, query, *cfg).run(path_index, |_, _, _| {})
}

/// Like [`simulate_path`], writing the trajectory as CSV with columns
/// `t, x1..xn, stopped_flag`.
pub fn simulate_path_csv(
    model: &SdeModel,
    query: &ReachQuery,
    cfg: &SimConfig,
    path_index: u64,
    out: &mut impl Write,
) -> Result<Outcome, OracleError> {
    let sim = Simulator::new(model, query, *cfg);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=sim.n).map(|i| format!("x{i}")))
        .chain(std::iter::once("stopped_flag".to_string()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    let mut err = None;
    let outcome = sim.run(path_index, |t, x, stopped| {
        if err.is_some() {
            return;
        }
        let mut line = format!("{t}");
        for v in x {
            line.push_str(&format!(",{v}"));
        }
        line.push_str(if stopped { ",1" } else { ",0" });
        if let Err(e) = writeln!(out, "{line}") {
            err = Some(e);
        }
    });
    match err {
        Some(e) => Err(e.into()),
        None => Ok(outcome),
    }
}

/// Monte-Carlo estimate with a 95% Clopper-Pearson interval.
///
/// Overflowing paths count as misses for horizon queries and are excluded
/// (with a warning) for instant queries.
pub fn estimate_probability(model: &SdeModel, query: &ReachQuery, cfg: &SimConfig) -> Result<McEstimate, OracleError> {
    cfg.check(query.horizon)?;
    let sim = Simulator::new(model, query, *cfg);
    let (hits, overflow) = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| match sim.run(i, |_, _, _| {}) {
            Outcome::Hit => (1usize, 0usize),
            Outcome::Miss => (0, 0),
            Outcome::Overflow => (0, 1),
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let mut warnings = Vec::new();
    let n = match query.kind {
        QueryKind::Horizon => {
            if overflow > 0 {
                warnings.push(format!("{overflow} paths overflowed and were counted as misses"));
            }
            cfg.n_paths
        }
        QueryKind::Instant => {
            if overflow > 0 {
                warnings.push(format!("{overflow} paths overflowed and were excluded"));
            }
            cfg.n_paths - overflow
        }
    };
    let (p_hat, (ci_low, ci_high)) = if n == 0 {
        warnings.push("no usable paths".into());
        (0.0, (0.0, 1.0))
    } else {
        (hits as f64 / n as f64, clopper_pearson(hits, n, 0.95))
    };
    Ok(McEstimate {
        p_hat,
        ci_low,
        ci_high,
        n_success: hits,
        n_paths: n,
        n_overflow: overflow,
        step_h: cfg.step_h,
        seed: cfg.seed,
        warnings,
    })
}

/// Exact binomial interval for `k` successes out of `n` at the given
/// confidence level.
pub fn clopper_pearson(k: usize, n: usize, confidence: f64) -> (f64, f64) {
    assert!(k <= n && n > 0, "need 0 <= k <= n and n > 0");
    let a = (1.0 - confidence) / 2.0;
    let nf = n as f64;
    let kf = k as f64;
    let low = if k == 0 {
        0.0
    } else if k == n {
        a.powf(1.0 / nf)
    } else {
        beta_quantile(kf, nf - kf + 1.0, a)
    };
    let high = if k == n {
        1.0
    } else if k == 0 {
        1.0 - a.powf(1.0 / nf)
    } else {
        beta_quantile(kf + 1.0, nf - kf, 1.0 - a)
    };
    (low, high)
}

/// Inverse of the regularized incomplete beta function by bisection.
fn beta_quantile(a: f64, b: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Estimates `(E[v(t+h, X(t+h))] - v(t, x)) / h` with one Euler-Maruyama
/// step per path; returns the mean and its standard error. Converges to
/// `Lv(t, x)` as `h -> 0`.
pub fn generator_fd_estimate(
    model: &SdeModel,
    v: &Polynomial,
    t: f64,
    x: &[f64],
    h: f64,
    n_paths: usize,
    seed: u64,
) -> (f64, f64) {
    let n = model.n();
    let vc = CompiledPoly::new(v);
    let drift: Vec<CompiledPoly> = model.drift().iter().map(CompiledPoly::new).collect();
    let b: Vec<f64> = drift.iter().map(|d| d.eval(x, t)).collect();
    let sigma: Vec<Vec<f64>> = model
        .diffusion()
        .iter()
        .map(|row| row.iter().map(|s| s.eval(x, t)).collect())
        .collect();
    let v0 = vc.eval(x, t);
    let sq = h.sqrt();
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let xi: Vec<f64> = (0..model.k()).map(|_| rng.sample(StandardNormal)).collect();
            let y: Vec<f64> = (0..n)
                .map(|r| x[r] + b[r] * h + sq * sigma[r].iter().zip(&xi).map(|(s, z)| s * z).sum::<f64>())
                .collect();
            (vc.eval(&y, t + h) - v0) / h
        })
        .collect();
    let nf = n_paths as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (nf - 1.0).max(1.0);
    (mean, (var / nf).sqrt())
}

/// Real roots of a univariate polynomial in `x1`, sorted.
fn real_roots(p: &Polynomial) -> Vec<f64> {
    use crate::poly::{Monomial, Var};
    let d = p.state_degree() as usize;
    let coeff = |e: usize| {
        if e == 0 {
            p.coefficient(&Monomial::one())
        } else {
            p.coefficient(&Monomial::from_pairs([(Var::State(0), e as u32)]))
        }
    };
    let mut deg = d;
    while deg > 0 && coeff(deg) == 0.0 {
        deg -= 1;
    }
    if deg == 0 {
        return Vec::new();
    }
    let lead = coeff(deg);
    let mut companion = nalgebra::DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        companion[(i, deg - 1)] = -coeff(i) / lead;
    }
    let dp = p.differentiate(Var::State(0));
    let mut roots: Vec<f64> = companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-7 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut r = z.re;
            for _ in 0..20 {
                let d = dp.eval(&[r], 0.0);
                if d == 0.0 {
                    break;
                }
                let step = p.eval(&[r], 0.0) / d;
                r -= step;
                if step.abs() < 1e-15 * (1.0 + r.abs()) {
                    break;
                }
            }
            r
        })
        .collect();
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-10);
    roots
}

/// Value at `x0` of the solution of the backward equation
/// `v_t + b v_x + (1/2) sum_l sigma_l^2 v_xx = 0` for a 1-D model.
///
/// Horizon queries solve on the component of `X \ Xs` around `x0` with
/// `v = 1` on the target boundary and `v = 0` on the domain boundary.
/// Instant queries solve on the component of `X` around `x0` with `v = 0`
/// on its boundary and terminal data `1_Xs`. Crank-Nicolson with a few
/// implicit Euler start-up steps; advection switches to upwind differences
/// in cells where it dominates diffusion.
pub fn fd_solve_1d(model: &SdeModel, query: &ReachQuery, grid: usize, steps: usize) -> Result<f64, OracleError> {
    if model.n() != 1 {
        return Err(OracleError::NotOneDimensional(model.n()));
    }
    if grid < 3 || steps == 0 {
        return Err(OracleError::Grid { grid, steps });
    }
    let x0 = query.x0[0];
    let side = |roots: &[f64]| {
        let left = roots.iter().copied().filter(|&r| r < x0).fold(f64::NEG_INFINITY, f64::max);
        let right = roots.iter().copied().filter(|&r| r > x0).fold(f64::INFINITY, f64::min);
        (left, right)
    };
    let (xl, xr) = side(&real_roots(query.g_x()));
    if !(xl.is_finite() && xr.is_finite()) {
        return Err(OracleError::UnboundedDomain);
    }
    let (lo, hi, v_lo, v_hi) = match query.kind {
        QueryKind::Horizon => {
            let (sl, sr) = side(&real_roots(query.g_s()));
            let (lo, v_lo) = if sl > xl { (sl, 1.0) } else { (xl, 0.0) };
            let (hi, v_hi) = if sr < xr { (sr, 1.0) } else { (xr, 0.0) };
            (lo, hi, v_lo, v_hi)
        }
        QueryKind::Instant => (xl, xr, 0.0, 0.0),
    };

    let dx = (hi - lo) / (grid - 1) as f64;
    let xs: Vec<f64> = (0..grid).map(|i| lo + i as f64 * dx).collect();
    let drift = CompiledPoly::new(&model.drift()[0]);
    let diff: Vec<CompiledPoly> = model.diffusion()[0].iter().map(CompiledPoly::new).collect();
    // Tridiagonal generator rows (sub, diag, super) at interior nodes.
    let ops: Vec<(f64, f64, f64)> = xs
        .iter()
        .map(|&x| {
            let b = drift.eval(&[x], 0.0);
            let a = 0.5 * diff.iter().map(|s| s.eval(&[x], 0.0).powi(2)).sum::<f64>();
            let mut l = a / (dx * dx);
            let mut c = -2.0 * a / (dx * dx);
            let mut u = a / (dx * dx);
            if b.abs() * dx <= 2.0 * a {
                l -= b / (2.0 * dx);
                u += b / (2.0 * dx);
            } else if b > 0.0 {
                c -= b / dx;
                u += b / dx;
            } else {
                c += b / dx;
                l -= b / dx;
            }
            (l, c, u)
        })
        .collect();

    let mut v: Vec<f64> = xs
        .iter()
        .map(|&x| match query.kind {
            QueryKind::Horizon => 0.0,
            QueryKind::Instant => {
                if query.g_s().eval(&[x], 0.0) >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect();
    v[0] = v_lo;
    v[grid - 1] = v_hi;

    let dt = query.horizon / steps as f64;
    // theta = 1 is implicit Euler, theta = 1/2 Crank-Nicolson.
    let advance = |v: &mut Vec<f64>, dt: f64, theta: f64| {
        let m = grid - 2;
        let mut sub = vec![0.0; m];
        let mut dia = vec![0.0; m];
        let mut sup = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        for j in 0..m {
            let i = j + 1;
            let (l, c, u) = ops[i];
            let explicit = l * v[i - 1] + c * v[i] + u * v[i + 1];
            rhs[j] = v[i] + (1.0 - theta) * dt * explicit;
            sub[j] = -theta * dt * l;
            dia[j] = 1.0 - theta * dt * c;
            sup[j] = -theta * dt * u;
        }
        rhs[0] -= sub[0] * v_lo;
        rhs[m - 1] -= sup[m - 1] * v_hi;
        // Thomas algorithm.
        for j in 1..m {
            let w = sub[j] / dia[j - 1];
            dia[j] -= w * sup[j - 1];
            rhs[j] -= w * rhs[j - 1];
        }
        v[m] = rhs[m - 1] / dia[m - 1];
        for j in (0..m - 1).rev() {
            v[j + 1] = (rhs[j] - sup[j] * v[j + 2]) / dia[j];
        }
    };
    let startup = steps.min(2);
    for _ in 0..startup {
        advance(&mut v, dt / 2.0, 1.0);
        advance(&mut v, dt / 2.0, 1.0);
    }
    for _ in startup..steps {
        advance(&mut v, dt, 0.5);
    }

    let pos = ((x0 - lo) / dx).clamp(0.0, (grid - 1) as f64);
    let i = (pos.floor() as usize).min(grid - 2);
    let f = pos - i as f64;
    Ok(v[i] * (1.0 - f) + v[i + 1] * f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::parse_with_nvars as p;

    fn setup(drift: &str, sigma: &str, g_x: &str, g_s: &str, t: f64, x0: f64, kind: QueryKind) -> (SdeModel, ReachQuery) {
        let model = SdeModel::new(vec![p(drift, 1).unwrap()], vec![vec![p(sigma, 1).unwrap()]]).unwrap();
        let query = ReachQuery::new(p(g_x, 1).unwrap(), p(g_s, 1).unwrap(), t, vec![x0], kind).unwrap();
        (model, query)
    }

    #[test]
    fn deterministic_paths() {
        let cfg = SimConfig::default();
        let (m, q) = setup("1", "0", "4 - x1^2", "x1 - 1", 2.0, 0.0, QueryKind::Horizon);
        assert_eq!(simulate_path(&m, &q, &cfg, 0), Outcome::Hit);
        let (m, q) = setup("0", "0", "4 - x1^2", "x1 - 1", 2.0, 0.0, QueryKind::Horizon);
        assert_eq!(simulate_path(&m, &q, &cfg, 0), Outcome::Miss);
        // x(3) = e^-3 ~ 0.0498 lies in {x1 <= 0.1}.
        let (m, q) = setup("-x1", "0", "4 - x1^2", "0.1 - x1", 3.0, 1.0, QueryKind::Instant);
        assert_eq!(simulate_path(&m, &q, &cfg, 0), Outcome::Hit);
        // Too short to get there.
        let (m, q) = setup("-x1", "0", "4 - x1^2", "0.1 - x1", 2.0, 1.0, QueryKind::Instant);
        assert_eq!(simulate_path(&m, &q, &cfg, 0), Outcome::Miss);
    }

    #[test]
    fn instant_exit_is_a_miss_even_if_target_is_reached_later() {
        // Exits X = (-2, 0.5) at t ~ 0.5, would reach x >= 0.9 only afterwards.
        let (m, q) = setup("1", "0", "(x1 + 2)*(0.5 - x1)", "x1 - 0.9", 1.0, 0.0, QueryKind::Instant);
        assert_eq!(simulate_path(&m, &q, &SimConfig::default(), 0), Outcome::Miss);
    }

    #[test]
    fn clopper_pearson_closed_forms() {
        let (lo, hi) = clopper_pearson(0, 100, 0.95);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.0362).abs() < 1e-4, "{hi}");
        let (lo, hi) = clopper_pearson(1000, 1000, 0.95);
        assert!((lo - 0.99632).abs() < 1e-5, "{lo}");
        assert_eq!(hi, 1.0);
        // Tabulated: 5 of 10 -> (0.187086, 0.812914).
        let (lo, hi) = clopper_pearson(5, 10, 0.95);
        assert!((lo - 0.187086).abs() < 1e-6 && (hi - 0.812914).abs() < 1e-6, "{lo} {hi}");
    }

    #[test]
    fn deterministic_hit_estimate() {
        let (m, q) = setup("1", "0", "4 - x1^2", "x1 - 1", 2.0, 0.0, QueryKind::Horizon);
        let cfg = SimConfig { n_paths: 1000, ..Default::default() };
        let e = estimate_probability(&m, &q, &cfg).unwrap();
        assert_eq!((e.p_hat, e.n_success), (1.0, 1000));
        assert!((e.ci_low - 0.99632).abs() < 1e-5);
    }

    #[test]
    fn estimates_ignore_thread_count() {
        let (m, q) = setup("0", "1", "(x1 + 2)*(1 - x1)", "x1 - 0.9", 1.0, 0.0, QueryKind::Horizon);
        let cfg = SimConfig { n_paths: 500, step_h: 1e-2, seed: 7, ..Default::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_probability(&m, &q, &cfg).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn config_errors() {
        let (m, q) = setup("0", "1", "(x1 + 2)*(1 - x1)", "x1 - 0.9", 1.0, 0.0, QueryKind::Horizon);
        for cfg in [
            SimConfig { step_h: 2.0, ..Default::default() },
            SimConfig { step_h: 0.0, ..Default::default() },
            SimConfig { n_paths: 0, ..Default::default() },
        ] {
            assert!(estimate_probability(&m, &q, &cfg).is_err());
        }
    }

    #[test]
    fn csv_trace() {
        let (m, q) = setup("1", "0", "4 - x1^2", "x1 - 1", 2.0, 0.0, QueryKind::Horizon);
        let cfg = SimConfig { step_h: 0.25, ..Default::default() };
        let mut buf = Vec::new();
        assert_eq!(simulate_path_csv(&m, &q, &cfg, 0, &mut buf).unwrap(), Outcome::Hit);
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,stopped_flag");
        assert_eq!(lines[1], "0,0,0");
        assert_eq!(*lines.last().unwrap(), "1,1,1");
        assert_eq!(lines.len(), 6);
    }

    #[test]
    fn fd_trivial_cases() {
        let (m, q) = setup("1", "0", "4 - x1^2", "x1 - 1", 2.0, 0.0, QueryKind::Horizon);
        assert!((fd_solve_1d(&m, &q, 2001, 2000).unwrap() - 1.0).abs() < 1e-6);
        let (m, q) = setup("0", "0", "4 - x1^2", "x1 - 1", 2.0, 0.0, QueryKind::Horizon);
        assert_eq!(fd_solve_1d(&m, &q, 101, 10).unwrap(), 0.0);
        let (m, q) = setup("0", "0", "4 - x1^2", "x1 + 0.5", 2.0, -1.0, QueryKind::Instant);
        assert_eq!(fd_solve_1d(&m, &q, 101, 10).unwrap(), 0.0);
        assert!(matches!(fd_solve_1d(&m, &q, 2, 10), Err(OracleError::Grid { .. })));
    }

    #[test]
    fn fd_rejects_unbounded_and_planar() {
        let (m, q) = setup("0", "1", "1 - x1", "x1 - 0.9", 1.0, 0.0, QueryKind::Horizon);
        assert!(matches!(fd_solve_1d(&m, &q, 101, 10), Err(OracleError::UnboundedDomain)));
        let m2 = SdeModel::new(
            vec![p("0", 2).unwrap(), p("0", 2).unwrap()],
            vec![vec![p("1", 2).unwrap()], vec![p("1", 2).unwrap()]],
        )
        .unwrap();
        let q2 = ReachQuery::new(p("1 - x1^2 - x2^2", 2).unwrap(), p("x1 - 0.5", 2).unwrap(), 1.0, vec![0.0, 0.0], QueryKind::Horizon).unwrap();
        assert!(matches!(fd_solve_1d(&m2, &q2, 101, 10), Err(OracleError::NotOneDimensional(2))));
    }

    #[test]
    fn brownian_exit_probability_without_time_limit() {
        // For large T the horizon probability of Brownian motion tends to the
        // gambler's-ruin value (x0 + 2) / (0.9 + 2).
        let (m, q) = setup("0", "1", "(x1 + 2)*(1 - x1)", "x1 - 0.9", 60.0, 0.0, QueryKind::Horizon);
        let v = fd_solve_1d(&m, &q, 801, 3000).unwrap();
        assert!((v - 2.0 / 2.9).abs() < 1e-4, "{v}");
    }

    #[test]
    fn generator_estimate_matches_symbolic() {
        let (m, _) = setup("-x1", "0.5", "4 - x1^2", "x1 - 1", 1.0, 0.0, QueryKind::Horizon);
        let v = p("x1^2", 1).unwrap();
        // Lv = 0.25 - 2 x1^2 at x1 = 0.5 gives -0.25.
        let (mean, se) = generator_fd_estimate(&m, &v, 0.0, &[0.5], 1e-3, 100_000, 3);
        assert!((mean + 0.25).abs() < 4.0 * se + 2e-3, "{mean} {se}");
    }
}
