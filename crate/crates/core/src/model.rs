//! SDE models, semialgebraic sets and reachability queries.
//!
//! A model file is one JSON document:
//!
//! ```json
//! {
//!   "n": 1, "k": 1,
//!   "drift": ["-x1"],
//!   "diffusion": [["0.5"]],
//!   "domain_g": "(x1 + 2)*(1 - x1)",
//!   "target_g": "x1 - 0.9",
//!   "T": 1.0,
//!   "x0": [0.0],
//!   "kind": "horizon",
//!   "bounding_box": [[-2.0, 1.0]]
//! }
//! ```
//!
//! The domain is `X = {domain_g > 0}`, the target `Xs = {target_g >= 0}`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{parse_with_nvars, PolyError, Polynomial};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("field `{field}`: {source}")]
    Poly {
        field: String,
        #[source]
        source: PolyError,
    },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("x0 inside target: g_S(x0) = {0}")]
    X0InTarget(f64),
    #[error("x0 outside domain: g_X(x0) = {0}")]
    X0OutsideDomain(f64),
    #[error("target not contained in domain: g_S >= 0 but g_X <= 0 at {0:?}")]
    TargetEscapesDomain(Vec<f64>),
}

/// `dx = b(x) dt + sigma(x) dW` with `n` states and `k` noise channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeModel {
    n: usize,
    k: usize,
    drift: Vec<Polynomial>,
    diffusion: Vec<Vec<Polynomial>>,
}

impl SdeModel {
    pub fn new(drift: Vec<Polynomial>, diffusion: Vec<Vec<Polynomial>>) -> Result<Self, ModelError> {
        let n = drift.len();
        if n == 0 {
            return Err(ModelError::Invalid("state dimension must be at least 1".into()));
        }
        if diffusion.len() != n {
            return Err(ModelError::Invalid(format!(
                "diffusion has {} rows, expected {n}",
                diffusion.len()
            )));
        }
        let k = diffusion[0].len();
        if diffusion.iter().any(|r| r.len() != k) {
            return Err(ModelError::Invalid("diffusion rows differ in length".into()));
        }
        for p in drift.iter().chain(diffusion.iter().flatten()) {
            if p.nvars() != n {
                return Err(ModelError::Invalid(format!(
                    "entry `{p}` lives in {} variables, expected {n}",
                    p.nvars()
                )));
            }
            if p.terms().any(|(m, _)| m.has_time()) {
                return Err(ModelError::Invalid(format!(
                    "entry `{p}` depends on t; dynamics must be autonomous"
                )));
            }
        }
        let drift = drift.into_iter().map(Polynomial::without_unused_time).collect();
        let diffusion = diffusion
            .into_iter()
            .map(|r| r.into_iter().map(Polynomial::without_unused_time).collect())
            .collect();
        Ok(Self { n, k, drift, diffusion })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn drift(&self) -> &[Polynomial] {
        &self.drift
    }

    pub fn diffusion(&self) -> &[Vec<Polynomial>] {
        &self.diffusion
    }

    pub fn has_zero_diffusion(&self) -> bool {
        self.diffusion.iter().flatten().all(Polynomial::is_zero)
    }

    /// The same drift with every diffusion entry replaced by zero.
    pub fn deterministic(&self) -> Self {
        let zero = Polynomial::zero(self.n);
        Self {
            diffusion: vec![vec![zero; self.k]; self.n],
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    /// `g > 0`
    Open,
    /// `g >= 0`
    Closed,
}

/// `{x : g(x) > 0}` or `{x : g(x) >= 0}`; the boundary is `{g = 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemialgebraicSet {
    pub g: Polynomial,
    pub sense: Sense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    Inside,
    BoundaryTolerant,
    Outside,
}

impl SemialgebraicSet {
    pub fn open(g: Polynomial) -> Self {
        Self { g, sense: Sense::Open }
    }

    pub fn closed(g: Polynomial) -> Self {
        Self { g, sense: Sense::Closed }
    }

    /// Classifies by the sign of `g`, treating `|g| <= tol` as the boundary.
    pub fn membership(&self, point: &[f64], tol: f64) -> Membership {
        let v = self.g.eval(point, 0.0);
        if v.abs() <= tol {
            Membership::BoundaryTolerant
        } else if v > 0.0 {
            Membership::Inside
        } else {
            Membership::Outside
        }
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        let v = self.g.eval(point, 0.0);
        match self.sense {
            Sense::Open => v > 0.0,
            Sense::Closed => v >= 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    /// Reach the target at some time in `[0, T]`.
    Horizon,
    /// Be in the target exactly at `T`.
    Instant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachQuery {
    pub domain: SemialgebraicSet,
    pub target: SemialgebraicSet,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub kind: QueryKind,
}

impl ReachQuery {
    pub fn new(
        domain_g: Polynomial,
        target_g: Polynomial,
        horizon: f64,
        x0: Vec<f64>,
        kind: QueryKind,
    ) -> Result<Self, ModelError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ModelError::Invalid(format!("T must be positive and finite, got {horizon}")));
        }
        if domain_g.nvars() != x0.len() || target_g.nvars() != x0.len() {
            return Err(ModelError::Invalid("set polynomials and x0 disagree on dimension".into()));
        }
        if domain_g.has_time() || target_g.has_time() {
            return Err(ModelError::Invalid("set polynomials must not depend on t".into()));
        }
        let q = Self {
            domain: SemialgebraicSet::open(domain_g.without_unused_time()),
            target: SemialgebraicSet::closed(target_g.without_unused_time()),
            horizon,
            x0,
            kind,
        };
        q.check_x0()?;
        Ok(q)
    }

    pub fn g_x(&self) -> &Polynomial {
        &self.domain.g
    }

    pub fn g_s(&self) -> &Polynomial {
        &self.target.g
    }

    pub fn n(&self) -> usize {
        self.x0.len()
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        Self { horizon, ..self.clone() }
    }

    pub fn with_kind(&self, kind: QueryKind) -> Self {
        Self { kind, ..self.clone() }
    }

    fn check_x0(&self) -> Result<(), ModelError> {
        let gx = self.g_x().eval(&self.x0, 0.0);
        if gx <= 0.0 {
            return Err(ModelError::X0OutsideDomain(gx));
        }
        let gs = self.g_s().eval(&self.x0, 0.0);
        if gs >= 0.0 {
            return Err(ModelError::X0InTarget(gs));
        }
        Ok(())
    }
}

/// Axis-aligned box used for sampling; one `(lo, hi)` pair per state.
pub type BoundingBox = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub in_domain: usize,
    pub in_target: usize,
    pub in_target_interior: usize,
    pub warnings: Vec<String>,
}

/// Spot-checks the standing assumptions by uniform sampling of `bbox`.
/// `x0` membership is checked exactly and a sampled point of `Xs` outside
/// `X` is a hard error; everything else is reported as a warning.
pub fn validate(
    model: &SdeModel,
    query: &ReachQuery,
    bbox: &BoundingBox,
    samples: usize,
    seed: u64,
    needs_interior: bool,
) -> Result<ValidationReport, ModelError> {
    if model.n() != query.n() || bbox.len() != query.n() {
        return Err(ModelError::Invalid(format!(
            "dimension mismatch: model {}, query {}, box {}",
            model.n(),
            query.n(),
            bbox.len()
        )));
    }
    if samples == 0 {
        return Err(ModelError::Invalid("validation needs at least one sample".into()));
    }
    if bbox.iter().any(|&(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(ModelError::Invalid("bounding box must have finite lo < hi".into()));
    }
    query.check_x0()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ValidationReport {
        samples,
        in_domain: 0,
        in_target: 0,
        in_target_interior: 0,
        warnings: Vec::new(),
    };
    let mut x = vec![0.0; query.n()];
    for _ in 0..samples {
        for (xi, &(lo, hi)) in x.iter_mut().zip(bbox) {
            *xi = rng.gen_range(lo..hi);
        }
        let gx = query.g_x().eval(&x, 0.0);
        let gs = query.g_s().eval(&x, 0.0);
        if gx > 0.0 {
            report.in_domain += 1;
        }
        if gs >= 0.0 {
            report.in_target += 1;
            if gx <= 0.0 {
                return Err(ModelError::TargetEscapesDomain(x));
            }
            if gs > 0.0 {
                report.in_target_interior += 1;
            }
        }
    }
    if report.in_target == 0 {
        report
            .warnings
            .push("empty target: no sampled point satisfies g_S >= 0".into());
    }
    if needs_interior && report.in_target_interior == 0 {
        report
            .warnings
            .push("no sampled point with g_S > 0; target interior may be empty".into());
    }
    if report.in_domain == 0 {
        report.warnings.push("no sampled point satisfies g_X > 0".into());
    }
    Ok(report)
}

/// Serialized layout of a model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub n: usize,
    pub k: usize,
    pub drift: Vec<String>,
    pub diffusion: Vec<Vec<String>>,
    pub domain_g: String,
    pub target_g: String,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub kind: QueryKind,
    pub bounding_box: Vec<[f64; 2]>,
}

/// A parsed and checked model file.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: SdeModel,
    pub query: ReachQuery,
    pub bbox: BoundingBox,
}

impl ModelFile {
    pub fn into_problem(self) -> Result<Problem, ModelError> {
        let n = self.n;
        let poly = |field: String, s: &str| {
            parse_with_nvars(s, n).map_err(|source| ModelError::Poly { field, source })
        };
        if self.drift.len() != n {
            return Err(ModelError::Invalid(format!(
                "drift has {} entries, expected n = {n}",
                self.drift.len()
            )));
        }
        if self.diffusion.len() != n || self.diffusion.iter().any(|r| r.len() != self.k) {
            return Err(ModelError::Invalid(format!("diffusion must be {n} x {}", self.k)));
        }
        if self.x0.len() != n || self.bounding_box.len() != n {
            return Err(ModelError::Invalid(format!(
                "x0 and bounding_box need {n} entries"
            )));
        }
        let drift = self
            .drift
            .iter()
            .enumerate()
            .map(|(i, s)| poly(format!("drift[{i}]"), s))
            .collect::<Result<Vec<_>, _>>()?;
        let mut diffusion = Vec::with_capacity(n);
        for (i, row) in self.diffusion.iter().enumerate() {
            diffusion.push(
                row.iter()
                    .enumerate()
                    .map(|(j, s)| poly(format!("diffusion[{i}][{j}]"), s))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        let model = SdeModel::new(drift, diffusion)?;
        let query = ReachQuery::new(
            poly("domain_g".into(), &self.domain_g)?,
            poly("target_g".into(), &self.target_g)?,
            self.horizon,
            self.x0,
            self.kind,
        )?;
        let bbox: BoundingBox = self.bounding_box.iter().map(|b| (b[0], b[1])).collect();
        if bbox.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(ModelError::Invalid("bounding box must have lo < hi".into()));
        }
        Ok(Problem { model, query, bbox })
    }
}

impl Problem {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_problem()
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            n: self.model.n(),
            k: self.model.k(),
            drift: self.model.drift().iter().map(|p| p.to_string()).collect(),
            diffusion: self
                .model
                .diffusion()
                .iter()
                .map(|r| r.iter().map(|p| p.to_string()).collect())
                .collect(),
            domain_g: self.query.g_x().to_string(),
            target_g: self.query.g_s().to_string(),
            horizon: self.query.horizon,
            x0: self.query.x0.clone(),
            kind: self.query.kind,
            bounding_box: self.bbox.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }
}
