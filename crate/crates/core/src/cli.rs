//! Command implementations behind the `sdereach` binary.
//!
//! Each command returns a [`RunReport`]; the binary prints a summary, writes
//! the JSON report and maps [`CliError`] and solver failures to exit codes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::certificates::{
    certify, competing_bounds, BoundReport, CertError, CertStatus, CertificateKind, CertifyOptions, Degrees,
};
use crate::model::{validate, ModelError, Problem, QueryKind};
use crate::oracle::{estimate_probability, fd_solve_1d, simulate_path_csv, McEstimate, OracleError, SimConfig};
use crate::sos::{Backend, SosError};

#[derive(Debug, Parser)]
#[command(name = "sdereach", version, about = "Certified bounds on reachability probabilities of polynomial SDEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize barrier certificates and report the bounds.
    Certify(CertifyArgs),
    /// Monte-Carlo estimate of the reachability probability.
    Estimate(EstimateArgs),
    /// Certify, estimate and check the bounds against the estimate.
    Compare(CompareArgs),
    /// Solve an SDPA sparse file and write an SDPA-style solution file.
    SdpaSolve {
        input: PathBuf,
        output: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON model file.
    pub model: PathBuf,
    /// Override the query kind of the model file (horizon or instant).
    #[arg(long)]
    pub query: Option<String>,
    /// Override the time horizon T of the model file.
    #[arg(long = "horizon")]
    pub horizon: Option<f64>,
    /// Random seed for simulation and residual sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON report here (timings are left out so reruns compare
    /// byte for byte).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CertArgs {
    /// Certificate kinds, comma separated (HU1..IL3), or `all` for every
    /// kind matching the query.
    #[arg(long, default_value = "all")]
    pub kind: String,
    #[arg(long, default_value_t = 4)]
    pub deg_v: u32,
    #[arg(long, default_value_t = 4)]
    pub deg_w: u32,
    /// Uniform SOS multiplier degree (even); defaults to the degree budget.
    #[arg(long)]
    pub deg_mult: Option<u32>,
    /// Comma-separated alpha values; defaults to {0, +-2^j/T, j = -6..3}.
    #[arg(long)]
    pub alpha_grid: Option<String>,
    /// `inprocess` or `sdpa:<dir>[:<command>]`.
    #[arg(long, default_value = "inprocess")]
    pub backend: String,
    /// Strictness margin added to every SOS condition.
    #[arg(long, default_value_t = 1e-6)]
    pub margin: f64,
    /// Force the auxiliary function w to zero.
    #[arg(long)]
    pub zero_w: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
}

#[derive(Debug, Clone, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub cert: CertArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Dump one trajectory as CSV (t, x1..xn, stopped_flag).
    #[arg(long)]
    pub trace_csv: Option<PathBuf>,
    /// Path index of the dumped trajectory.
    #[arg(long, default_value_t = 0)]
    pub trace_path: u64,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub cert: CertArgs,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Io(e) => CliError::Io(e),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<CertError> for CliError {
    fn from(e: CertError) -> Self {
        match e {
            CertError::Sos(SosError::Backend(m)) => CliError::Solver(m),
            CertError::Sos(SosError::Sdp(e)) => CliError::Solver(e.to_string()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryEcho {
    pub kind: QueryKind,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub drift: Vec<String>,
    pub diffusion: Vec<Vec<String>>,
    pub domain_g: String,
    pub target_g: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degrees: Option<Degrees>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

/// One bound checked against the Monte-Carlo interval.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub kind: CertificateKind,
    /// `upper >= ci_low` or `lower <= ci_high`.
    pub test: String,
    pub bound: f64,
    pub reference: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompetingRow {
    pub kind: CertificateKind,
    pub v0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gronwall: f64,
    /// `None` outside the regimes where the earlier bound is defined.
    pub santoyo: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub model_file: String,
    pub query: QueryEcho,
    pub settings: Settings,
    pub bounds: Vec<BoundReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<McEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd_value: Option<f64>,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
    pub competing: Vec<CompetingRow>,
    /// Wall-clock seconds; the only nondeterministic part of a report.
    pub timings: BTreeMap<String, f64>,
}

impl RunReport {
    /// Pretty JSON, optionally without the timings.
    pub fn to_json(&self, with_timings: bool) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if !with_timings {
            v.as_object_mut().expect("object").remove("timings");
        }
        serde_json::to_string_pretty(&v).expect("report serializes") + "\n"
    }

    /// True when some requested kind failed in the solver on every grid point.
    pub fn solver_failed(&self) -> bool {
        self.bounds.iter().any(|b| b.status == CertStatus::SolverFailure)
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} {} ({:?}, T = {}, x0 = {:?})\n",
            self.command, self.model_file, self.query.kind, self.query.horizon, self.query.x0
        );
        for b in &self.bounds {
            let status = serde_json::to_value(b.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            match b.bound {
                Some(v) => s += &format!(
                    "  {:<4} {:<16} bound {:.6}{}  alpha {}  residual {:.1e}\n",
                    b.kind.to_string(),
                    status,
                    v,
                    if b.vacuous { " (vacuous)" } else { "" },
                    b.alpha.map_or("-".into(), |a| format!("{a}")),
                    b.reconstruction_residual.unwrap_or(f64::NAN),
                ),
                None => s += &format!("  {:<4} {status}\n", b.kind.to_string()),
            }
        }
        if let Some(o) = &self.oracle {
            s += &format!(
                "  monte carlo p = {:.6}  95% CI [{:.6}, {:.6}]  ({} of {} paths, h = {})\n",
                o.p_hat, o.ci_low, o.ci_high, o.n_success, o.n_paths, o.step_h
            );
            for w in &o.warnings {
                s += &format!("  warning: {w}\n");
            }
        }
        if let Some(v) = self.fd_value {
            s += &format!("  finite differences p = {v:.6}\n");
        }
        for r in &self.competing {
            s += &format!(
                "  {:<4} gronwall {:.6}  santoyo {}\n",
                r.kind.to_string(),
                r.gronwall,
                r.santoyo.map_or("n/a".into(), |v| format!("{v:.6}"))
            );
        }
        if let Some(v) = &self.verdict {
            s += &format!("  verdict: {v}\n");
        }
        s
    }
}

fn load(common: &CommonArgs) -> Result<Problem, CliError> {
    let mut problem = Problem::load(&common.model)?;
    if let Some(q) = &common.query {
        let kind = match q.to_ascii_lowercase().as_str() {
            "horizon" => QueryKind::Horizon,
            "instant" => QueryKind::Instant,
            other => return Err(CliError::Validation(format!("unknown query kind `{other}`"))),
        };
        problem.query = problem.query.with_kind(kind);
    }
    if let Some(t) = common.horizon {
        if !(t.is_finite() && t > 0.0) {
            return Err(CliError::Validation(format!("horizon must be positive, got {t}")));
        }
        problem.query = problem.query.with_horizon(t);
    }
    let report = validate(&problem.model, &problem.query, &problem.bbox, 2000, common.seed, false)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(problem)
}

fn echo(problem: &Problem) -> QueryEcho {
    let q = &problem.query;
    QueryEcho {
        kind: q.kind,
        horizon: q.horizon,
        x0: q.x0.clone(),
        drift: problem.model.drift().iter().map(|p| p.to_string()).collect(),
        diffusion: problem
            .model
            .diffusion()
            .iter()
            .map(|r| r.iter().map(|p| p.to_string()).collect())
            .collect(),
        domain_g: q.g_x().to_string(),
        target_g: q.g_s().to_string(),
    }
}

/// Parses `all` or a comma-separated kind list; every kind must match the
/// query.
pub fn parse_kinds(list: &str, query: QueryKind) -> Result<Vec<CertificateKind>, CliError> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(CertificateKind::for_query(query).to_vec());
    }
    list.split(',')
        .map(|s| {
            let k: CertificateKind = s.trim().parse().map_err(|e: String| CliError::Validation(e))?;
            if k.query_kind() != query {
                return Err(CliError::Validation(format!(
                    "{k} certifies {:?} queries, but the query is {:?}",
                    k.query_kind(),
                    query
                )));
            }
            Ok(k)
        })
        .collect()
}

pub fn parse_alpha_grid(list: &str) -> Result<Vec<f64>, CliError> {
    let grid: Vec<f64> = list
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Validation(format!("bad alpha value `{s}`")))
        })
        .collect::<Result<_, _>>()?;
    if grid.is_empty() {
        return Err(CliError::Validation("empty alpha grid".into()));
    }
    Ok(grid)
}

fn cert_options(args: &CertArgs, seed: u64) -> Result<CertifyOptions, CliError> {
    if !(args.margin.is_finite() && args.margin >= 0.0) {
        return Err(CliError::Validation(format!("margin must be nonnegative, got {}", args.margin)));
    }
    Ok(CertifyOptions {
        degrees: Degrees {
            v: args.deg_v,
            w: args.deg_w,
            multiplier: args.deg_mult,
        },
        alpha_grid: args.alpha_grid.as_deref().map(parse_alpha_grid).transpose()?,
        backend: Backend::parse(&args.backend).map_err(CliError::Validation)?,
        margin: args.margin,
        seed,
        zero_w: args.zero_w,
        ..CertifyOptions::default()
    })
}

fn run_certify(
    problem: &Problem,
    args: &CertArgs,
    seed: u64,
    timings: &mut BTreeMap<String, f64>,
) -> Result<(Vec<BoundReport>, CertifyOptions), CliError> {
    let kinds = parse_kinds(&args.kind, problem.query.kind)?;
    let opts = cert_options(args, seed)?;
    let mut reports = Vec::new();
    for k in kinds {
        let start = Instant::now();
        reports.push(certify(k, problem, &opts)?);
        timings.insert(format!("certify_{k}"), start.elapsed().as_secs_f64());
    }
    Ok((reports, opts))
}

fn settings(seed: u64, cert: Option<(&CertArgs, &CertifyOptions)>, sim: Option<&SimArgs>) -> Settings {
    Settings {
        seed,
        degrees: cert.map(|(_, o)| o.degrees),
        margin: cert.map(|(_, o)| o.margin),
        alpha_grid: cert.and_then(|(_, o)| o.alpha_grid.clone()),
        backend: cert.map(|(a, _)| a.backend.clone()),
        paths: sim.map(|s| s.paths),
        step: sim.map(|s| s.step),
    }
}

fn competing_rows(problem: &Problem, reports: &[BoundReport]) -> Vec<CompetingRow> {
    reports
        .iter()
        .filter(|r| r.kind.is_upper() && r.kind.uses_alpha() && r.status == CertStatus::Certified)
        .filter_map(|r| {
            let (v0, alpha, beta) = (r.v0?, r.alpha?, r.beta?);
            let c = competing_bounds(v0, alpha, beta, problem.query.horizon);
            Some(CompetingRow {
                kind: r.kind,
                v0,
                alpha,
                beta,
                gronwall: c.gronwall,
                santoyo: c.santoyo,
            })
        })
        .collect()
}

/// Checks every certified bound against the Monte-Carlo interval.
pub fn consistency(reports: &[BoundReport], mc: &McEstimate) -> (Vec<Check>, String) {
    let checks: Vec<Check> = reports
        .iter()
        .filter(|r| r.status == CertStatus::Certified)
        .filter_map(|r| {
            let bound = r.bound?;
            Some(if r.kind.is_upper() {
                Check {
                    kind: r.kind,
                    test: "upper >= ci_low".into(),
                    bound,
                    reference: mc.ci_low,
                    ok: bound >= mc.ci_low,
                }
            } else {
                Check {
                    kind: r.kind,
                    test: "lower <= ci_high".into(),
                    bound,
                    reference: mc.ci_high,
                    ok: bound <= mc.ci_high,
                }
            })
        })
        .collect();
    let verdict = if checks.iter().all(|c| c.ok) { "OK" } else { "INCONSISTENT" };
    (checks, verdict.into())
}

fn sim_config(sim: &SimArgs, seed: u64) -> SimConfig {
    SimConfig {
        step_h: sim.step,
        n_paths: sim.paths,
        seed,
        boundary_tol: 0.0,
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

pub fn cmd_certify(args: &CertifyArgs) -> Result<RunReport, CliError> {
    let total = Instant::now();
    let problem = load(&args.common)?;
    let mut timings = BTreeMap::new();
    let (bounds, opts) = run_certify(&problem, &args.cert, args.common.seed, &mut timings)?;
    timings.insert("total".into(), total.elapsed().as_secs_f64());
    Ok(RunReport {
        command: "certify".into(),
        model_file: display(&args.common.model),
        query: echo(&problem),
        settings: settings(args.common.seed, Some((&args.cert, &opts)), None),
        competing: competing_rows(&problem, &bounds),
        bounds,
        oracle: None,
        fd_value: None,
        checks: Vec::new(),
        verdict: None,
        timings,
    })
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<RunReport, CliError> {
    let total = Instant::now();
    let problem = load(&args.common)?;
    let cfg = sim_config(&args.sim, args.common.seed);
    let mc = estimate_probability(&problem.model, &problem.query, &cfg)?;
    if let Some(path) = &args.trace_csv {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        simulate_path_csv(&problem.model, &problem.query, &cfg, args.trace_path, &mut f)?;
    }
    let mut timings = BTreeMap::new();
    timings.insert("total".into(), total.elapsed().as_secs_f64());
    Ok(RunReport {
        command: "estimate".into(),
        model_file: display(&args.common.model),
        query: echo(&problem),
        settings: settings(args.common.seed, None, Some(&args.sim)),
        bounds: Vec::new(),
        oracle: Some(mc),
        fd_value: None,
        checks: Vec::new(),
        verdict: None,
        competing: Vec::new(),
        timings,
    })
}

pub fn cmd_compare(args: &CompareArgs) -> Result<RunReport, CliError> {
    let total = Instant::now();
    let problem = load(&args.common)?;
    let mut timings = BTreeMap::new();
    let (bounds, opts) = run_certify(&problem, &args.cert, args.common.seed, &mut timings)?;
    let start = Instant::now();
    let mc = estimate_probability(&problem.model, &problem.query, &sim_config(&args.sim, args.common.seed))?;
    timings.insert("monte_carlo".into(), start.elapsed().as_secs_f64());
    let fd_value = if problem.model.n() == 1 {
        let start = Instant::now();
        let v = fd_solve_1d(&problem.model, &problem.query, 2001, 2000).ok();
        timings.insert("finite_differences".into(), start.elapsed().as_secs_f64());
        v
    } else {
        None
    };
    let (checks, verdict) = consistency(&bounds, &mc);
    timings.insert("total".into(), total.elapsed().as_secs_f64());
    Ok(RunReport {
        command: "compare".into(),
        model_file: display(&args.common.model),
        query: echo(&problem),
        settings: settings(args.common.seed, Some((&args.cert, &opts)), Some(&args.sim)),
        competing: competing_rows(&problem, &bounds),
        bounds,
        oracle: Some(mc),
        fd_value,
        checks,
        verdict: Some(verdict),
        timings,
    })
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Certify(a) => cmd_certify(a).map(|r| (r, a.common.out.clone())),
        Command::Estimate(a) => cmd_estimate(a).map(|r| (r, a.common.out.clone())),
        Command::Compare(a) => cmd_compare(a).map(|r| (r, a.common.out.clone())),
        Command::SdpaSolve { input, output } => {
            return match sdereach_sdp::sdpa::solve_file(input, output, &Default::default()) {
                Ok(status) => {
                    println!("{}", status.as_str());
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    2
                }
            };
        }
    };
    match result {
        Ok((report, out)) => {
            print!("{}", report.summary());
            for (k, t) in &report.timings {
                eprintln!("time {k}: {t:.2}s");
            }
            if let Some(path) = out {
                if let Err(e) = std::fs::write(&path, report.to_json(false)) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return 1;
                }
            }
            if report.solver_failed() {
                3
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
