//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdereach::certificates::{
    bound_formula, certify, competing_bounds, retrieve_deterministic_reach_set, CertStatus, CertificateKind,
    CertifyOptions, Degrees,
};
use sdereach::cli::{cmd_compare, consistency, CertArgs, CommonArgs, CompareArgs, SimArgs};
use sdereach::model::{Problem, QueryKind, ReachQuery};
use sdereach::oracle::{estimate_probability, fd_solve_1d, SimConfig};
use sdereach::poly::parse_with_nvars;
use sdereach::sos::{solve_program, AffinePoly, Backend, Region, SosConstraint, SosProgram};
use sdereach_sdp::sdpa::{parse_sdpa, write_sdpa};
use sdereach_sdp::{SolverOptions, Status};

type Outcome = Result<String, String>;

fn model_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models").join(name)
}

fn load(name: &str) -> Problem {
    Problem::load(&model_path(name)).expect("shipped model loads")
}

fn with_query(p: &Problem, kind: QueryKind, horizon: Option<f64>) -> Problem {
    let mut q: ReachQuery = p.query.with_kind(kind);
    if let Some(t) = horizon {
        q = q.with_horizon(t);
    }
    Problem {
        model: p.model.clone(),
        query: q,
        bbox: p.bbox.clone(),
    }
}

fn opts(degree: u32) -> CertifyOptions {
    CertifyOptions {
        degrees: Degrees {
            v: degree,
            w: degree,
            multiplier: None,
        },
        ..CertifyOptions::default()
    }
}

const BENCHMARKS: [&str; 3] = ["brownian.json", "ou.json", "planar.json"];

/// Soundness against Monte Carlo; also collects reconstruction residuals.
fn soundness(residuals: &mut Vec<(String, f64)>) -> Outcome {
    let mut failures = Vec::new();
    let mut certified = 0;
    for name in BENCHMARKS {
        let base = load(name);
        for kind in [QueryKind::Horizon, QueryKind::Instant] {
            let problem = with_query(&base, kind, None);
            let reports: Vec<_> = CertificateKind::for_query(kind)
                .into_iter()
                .map(|k| certify(k, &problem, &opts(4)).map_err(|e| format!("{name} {k}: {e}")))
                .collect::<Result<_, _>>()?;
            let cfg = SimConfig {
                step_h: 1e-3,
                n_paths: 100_000,
                seed: 1,
                boundary_tol: 0.0,
            };
            let mc = estimate_probability(&problem.model, &problem.query, &cfg).map_err(|e| e.to_string())?;
            for r in &reports {
                if r.status == CertStatus::Certified {
                    certified += 1;
                    residuals.push((format!("{name} {}", r.kind), r.reconstruction_residual.unwrap_or(f64::INFINITY)));
                } else if r.kind.is_upper() {
                    failures.push(format!("{name} {} not certified ({:?})", r.kind, r.status));
                }
            }
            let (checks, _) = consistency(&reports, &mc);
            for c in checks.iter().filter(|c| !c.ok) {
                failures.push(format!("{name} {}: {} fails ({} vs {})", c.kind, c.test, c.bound, c.reference));
            }
        }
    }
    if failures.is_empty() {
        Ok(format!("{certified} certified bounds consistent with 1e5-path intervals"))
    } else {
        Err(failures.join("; "))
    }
}

fn pde_agreement() -> Outcome {
    let base = load("brownian.json");
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for kind in [QueryKind::Horizon, QueryKind::Instant] {
        for t in [0.25, 1.0, 4.0] {
            let p = with_query(&base, kind, Some(t));
            let fd = fd_solve_1d(&p.model, &p.query, 2001, 2000).map_err(|e| e.to_string())?;
            let cfg = SimConfig {
                step_h: 1e-4,
                n_paths: 10_000,
                seed: 2,
                boundary_tol: 0.0,
            };
            let mc = estimate_probability(&p.model, &p.query, &cfg).map_err(|e| e.to_string())?;
            let z = (mc.p_hat - fd).abs() / mc.std_err().max(1e-12);
            worst = worst.max(z);
            if z > 3.0 {
                failures.push(format!("{kind:?} T={t}: fd {fd:.5} vs mc {:.5} ({z:.2} se)", mc.p_hat));
            }
        }
    }
    if failures.is_empty() {
        Ok(format!("finite differences within {worst:.2} standard errors of Monte Carlo"))
    } else {
        Err(failures.join("; "))
    }
}

fn monotonicity() -> Outcome {
    let base = load("brownian.json");
    let mut est = Vec::new();
    for t in [0.25, 0.5, 1.0, 2.0, 4.0] {
        let p = with_query(&base, QueryKind::Horizon, Some(t));
        let cfg = SimConfig {
            step_h: 1e-3,
            n_paths: 20_000,
            seed: 3,
            boundary_tol: 0.0,
        };
        est.push((t, estimate_probability(&p.model, &p.query, &cfg).map_err(|e| e.to_string())?));
    }
    for (i, (t1, a)) in est.iter().enumerate() {
        for (t2, b) in &est[i + 1..] {
            let width = a.ci_high - a.ci_low;
            if a.p_hat > b.p_hat + 3.0 * width {
                return Err(format!("p({t1}) = {} > p({t2}) = {}", a.p_hat, b.p_hat));
            }
        }
    }
    let ps: Vec<String> = est.iter().map(|(_, e)| format!("{:.4}", e.p_hat)).collect();
    Ok(format!("p_hat over T = 0.25..4: {}", ps.join(", ")))
}

fn alpha_continuity() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        let v0 = i as f64 / 4.0;
        for j in 0..5 {
            let beta = -1.0 + j as f64 / 2.0;
            for k in 0..4 {
                let t = 0.1 + k as f64 * 9.9 / 3.0;
                for kind in [CertificateKind::HU2, CertificateKind::HL2] {
                    let at0 = bound_formula(kind, v0, 0.0, beta, 0.5, t);
                    for a in [1e-8, -1e-8] {
                        worst = worst.max((bound_formula(kind, v0, a, beta, 0.5, t) - at0).abs());
                    }
                }
            }
        }
    }
    if worst <= 1e-6 {
        Ok(format!("max deviation {worst:.2e} over 100 grid points"))
    } else {
        Err(format!("max deviation {worst:.2e} exceeds 1e-6"))
    }
}

fn tightness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut min_gap = f64::INFINITY;
    for _ in 0..1000 {
        let alpha = -2.0 * (1.0 - rng.gen::<f64>());
        let v0: f64 = rng.gen();
        let ratio = 1.0 + 4.0 * (1.0 - rng.gen::<f64>());
        let beta = -alpha * ratio;
        let t = 0.1 + 9.9 * rng.gen::<f64>();
        let c = competing_bounds(v0, alpha, beta, t);
        let s = c.santoyo.ok_or_else(|| format!("no comparison bound at alpha={alpha} beta={beta}"))?;
        if c.gronwall >= s {
            return Err(format!("alpha={alpha} beta={beta} T={t} v0={v0}: {} >= {s}", c.gronwall));
        }
        min_gap = min_gap.min(s - c.gronwall);
    }
    Ok(format!("strictly tighter in 1000/1000 samples (min gap {min_gap:.2e})"))
}

fn zero_w() -> Outcome {
    let mut values = Vec::new();
    for name in BENCHMARKS {
        let p = with_query(&load(name), QueryKind::Horizon, None);
        let o = CertifyOptions {
            zero_w: true,
            ..opts(4)
        };
        let r = certify(CertificateKind::HL1, &p, &o).map_err(|e| e.to_string())?;
        let v0 = r.v0.ok_or_else(|| format!("{name}: no certificate ({:?})", r.status))?;
        if v0 > 1e-6 {
            return Err(format!("{name}: v(0, x0) = {v0:.3e} with w = 0"));
        }
        values.push(format!("{v0:.1e}"));
    }
    Ok(format!("v(0, x0) with w = 0: {}", values.join(", ")))
}

fn rk4(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let add = |a: &[f64], b: &[f64], s: f64| a.iter().zip(b).map(|(p, q)| p + s * q).collect::<Vec<_>>();
    let k1 = f(x);
    let k2 = f(&add(x, &k1, h / 2.0));
    let k3 = f(&add(x, &k2, h / 2.0));
    let k4 = f(&add(x, &k3, h));
    (0..x.len()).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

fn deterministic_reach() -> Outcome {
    let base = load("planar.json");
    let model = base.model.deterministic();
    let mut done = Vec::new();
    for (kind, qk) in [(CertificateKind::HL1, QueryKind::Horizon), (CertificateKind::IL1, QueryKind::Instant)] {
        let p = Problem {
            model: model.clone(),
            query: base.query.with_kind(qk),
            bbox: base.bbox.clone(),
        };
        let report = certify(kind, &p, &opts(4)).map_err(|e| e.to_string())?;
        if report.status != CertStatus::Certified || report.raw_bound.unwrap_or(0.0) <= 0.0 {
            continue;
        }
        let set = retrieve_deterministic_reach_set(&report, &p.model, &p.query).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut points = Vec::new();
        for _ in 0..2_000_000 {
            let x: Vec<f64> = p.bbox.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
            if set.contains(&x) {
                points.push(x);
                if points.len() == 20 {
                    break;
                }
            }
        }
        if points.len() < 20 {
            return Err(format!("{kind}: only {} points found in the certified set", points.len()));
        }
        let drift = p.model.drift().to_vec();
        let f = |x: &[f64]| drift.iter().map(|b| b.eval(x, 0.0)).collect::<Vec<_>>();
        let steps = 10_000;
        let h = p.query.horizon / steps as f64;
        let mut ok = 0;
        for x0 in &points {
            let mut x = x0.clone();
            let mut good = false;
            for s in 0..=steps {
                if s > 0 {
                    x = rk4(&f, &x, h);
                }
                if !p.query.domain.contains(&x) {
                    break;
                }
                let in_target = p.query.target.contains(&x);
                if qk == QueryKind::Horizon && in_target {
                    good = true;
                    break;
                }
                if qk == QueryKind::Instant && s == steps {
                    good = in_target;
                }
            }
            ok += usize::from(good);
        }
        if ok != 20 {
            return Err(format!("{kind}: {ok}/20 sampled points reach-avoid"));
        }
        done.push(format!("{kind} 20/20"));
    }
    if done.is_empty() {
        Err("no positive HL1/IL1 certificate on the noise-free model".into())
    } else {
        Ok(format!("reach-avoid confirmed by RK4: {}", done.join(", ")))
    }
}

fn sos_layer(residuals: &[(String, f64)]) -> Outcome {
    let constraint = |target: &str, ineqs: &[&str], n: usize| SosConstraint {
        target: AffinePoly::constant(parse_with_nvars(target, n).unwrap()),
        region: Region {
            label: "acceptance".into(),
            ineqs: ineqs.iter().map(|s| parse_with_nvars(s, n).unwrap()).collect(),
            eqs: vec![],
            time_horizon: None,
        },
        multiplier_degree: None,
        order: None,
    };
    let run = |c: SosConstraint| {
        let prog = SosProgram {
            constraints: vec![c],
            ..Default::default()
        };
        solve_program(&prog, &Backend::InProcess, "acceptance", &SolverOptions::default()).unwrap()
    };
    for (target, ineqs) in [("x1^2 - 2*x1 + 1", vec![]), ("1 - x1^2", vec!["1 - x1^2"]), ("2 + x1^3", vec!["1 - x1^2"])] {
        let s = run(constraint(target, &ineqs, 1));
        if s.status != Status::Optimal {
            return Err(format!("`{target}` should be feasible, got {:?}", s.status));
        }
        if s.reconstruction_residual > 1e-6 {
            return Err(format!("`{target}` residual {:.2e}", s.reconstruction_residual));
        }
    }
    let motzkin = run(constraint("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", &[], 2));
    if motzkin.status != Status::PrimalInfeasible {
        return Err(format!("Motzkin polynomial reported {:?}", motzkin.status));
    }
    let compiled = sdereach::sos::compile(&constraint("1 - x1^2*x2^2", &["1 - x1^2", "1 - x2^2"], 2), 0, 1e-6)
        .map_err(|e| e.to_string())?;
    let text = write_sdpa(&compiled.instance);
    let back = parse_sdpa(&text).map_err(|e| e.to_string())?;
    if back != compiled.instance || write_sdpa(&back) != text {
        return Err("SDPA write/parse is not the identity".into());
    }
    let worst = residuals.iter().cloned().fold(("none".to_string(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    if worst.1 > 1e-6 {
        return Err(format!("reconstruction residual {:.2e} on {}", worst.1, worst.0));
    }
    Ok(format!(
        "feasible/infeasible instances, SDPA round trip, max residual {:.1e} over {} certificates",
        worst.1,
        residuals.len()
    ))
}

fn reproducibility() -> Outcome {
    let args = CompareArgs {
        common: CommonArgs {
            model: model_path("ou.json"),
            query: None,
            horizon: None,
            seed: 11,
            out: None,
        },
        cert: CertArgs {
            kind: "all".into(),
            deg_v: 4,
            deg_w: 4,
            deg_mult: None,
            alpha_grid: None,
            backend: "inprocess".into(),
            margin: 1e-6,
            zero_w: false,
        },
        sim: SimArgs {
            paths: 20_000,
            step: 1e-3,
        },
    };
    let a = cmd_compare(&args).map_err(|e| e.to_string())?.to_json(false);
    let b = cmd_compare(&args).map_err(|e| e.to_string())?.to_json(false);
    if a == b {
        Ok(format!("two compare runs give identical {}-byte reports", a.len()))
    } else {
        Err("compare reports differ between runs".into())
    }
}

fn main() {
    let start = Instant::now();
    let mut residuals = Vec::new();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n, name, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = f();
        let line = match &r {
            Ok(d) => format!("criterion {n} {name}: PASS ({d}) [{:.1}s]", t.elapsed().as_secs_f64()),
            Err(d) => format!("criterion {n} {name}: FAIL ({d}) [{:.1}s]", t.elapsed().as_secs_f64()),
        };
        println!("{line}");
        results.push((n, name, r));
    };
    record(1, "bound soundness", &mut || soundness(&mut residuals));
    record(2, "pde agreement", &mut pde_agreement);
    record(3, "monotonicity in T", &mut monotonicity);
    record(4, "alpha -> 0 continuity", &mut alpha_continuity);
    record(5, "tightness vs earlier bound", &mut tightness);
    record(6, "zero auxiliary function", &mut zero_w);
    record(7, "deterministic reach sets", &mut deterministic_reach);
    record(8, "sos layer", &mut || sos_layer(&residuals));
    record(9, "reproducibility", &mut reproducibility);
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
