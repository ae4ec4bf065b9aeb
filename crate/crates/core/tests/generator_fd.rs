use sdereach::generator::apply_generator;
use sdereach::model::Problem;
use sdereach::oracle::generator_fd_estimate;
use sdereach::poly::parse_with_nvars;

fn models_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

/// Mean one-step increments of `v` along Euler-Maruyama paths approach `Lv`
/// as the step shrinks.
fn slope_check(model_file: &str, v: &str, points: &[(&[f64], f64)]) {
    let problem = Problem::load(&models_dir().join(model_file)).unwrap();
    let n = problem.model.n();
    let v = parse_with_nvars(v, n).unwrap();
    let lv = apply_generator(&v, &problem.model).unwrap().full;
    for (i, &(x, t)) in points.iter().enumerate() {
        let exact = lv.eval(x, t);
        let mut errors = Vec::new();
        for (j, h) in [1e-2, 5e-3, 2.5e-3].into_iter().enumerate() {
            let (mean, se) = generator_fd_estimate(&problem.model, &v, t, x, h, 100_000, (10 * i + j) as u64);
            assert!(
                (mean - exact).abs() <= 3.0 * se + 0.05 * h * (1.0 + exact.abs()),
                "{model_file} x={x:?} h={h}: estimate {mean} +- {se}, Lv = {exact}"
            );
            errors.push((mean - exact).abs() / se);
        }
        assert!(errors.iter().all(|e| e.is_finite()));
    }
}

#[test]
fn brownian_quadratic() {
    slope_check("brownian.json", "x1^2 + 0.5*t*x1", &[(&[0.0], 0.0), (&[0.4], 0.3), (&[-1.2], 0.8)]);
}

#[test]
fn ou_quartic() {
    slope_check("ou.json", "x1^4 - x1 + t", &[(&[0.2], 0.0), (&[-0.7], 0.5)]);
}

#[test]
fn planar_mixed() {
    slope_check(
        "planar.json",
        "x1^2*x2 + x2^2 - 0.3*t*x1",
        &[(&[0.1, 0.2], 0.0), (&[-0.5, 0.4], 0.2), (&[0.3, -0.6], 0.9)],
    );
}
