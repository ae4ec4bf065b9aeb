//! Post-solve cleanup of a primal point.
//!
//! Interior-point iterates satisfy the equality rows only up to the solver
//! tolerance. [`polish`] alternates a least-norm projection onto the affine
//! rows with an eigenvalue clip onto the PSD cone, which typically drives the
//! row residual to rounding level while keeping every block PSD.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{SdpInstance, Solution};

/// Largest absolute row residual `|rhs - form(X, y)|`.
pub fn row_residual(inst: &SdpInstance, x: &[DMatrix<f64>], y: &[f64]) -> f64 {
    residuals(inst, x, y).amax()
}

fn residuals(inst: &SdpInstance, x: &[DMatrix<f64>], y: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        inst.rows.len(),
        inst.rows.iter().map(|r| {
            let mut v = 0.0;
            for e in &r.form.entries {
                let w = if e.i == e.j { 1.0 } else { 2.0 };
                v += w * e.value * x[e.block][(e.i, e.j)];
            }
            for &(f, a) in &r.form.free {
                v += a * y[f];
            }
            r.rhs - v
        }),
    )
}

/// Projects `sol` onto the rows and back onto the cone a few times. Keeps the
/// original point when polishing does not reduce the residual.
pub fn polish(inst: &SdpInstance, sol: &mut Solution) {
    let m = inst.rows.len();
    if m == 0 || sol.x.len() != inst.blocks.len() {
        return;
    }
    // Row coefficients on the upper-triangle entries and free scalars.
    let coeffs: Vec<Vec<(usize, usize, usize, f64)>> = inst
        .rows
        .iter()
        .map(|r| {
            r.form
                .entries
                .iter()
                .map(|e| (e.block, e.i, e.j, if e.i == e.j { e.value } else { 2.0 * e.value }))
                .collect()
        })
        .collect();
    let mut gram = DMatrix::<f64>::zeros(m, m);
    {
        use std::collections::BTreeMap;
        let mut by_var: BTreeMap<(usize, usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
        for (r, row) in coeffs.iter().enumerate() {
            for &(b, i, j, c) in row {
                by_var.entry((b, i, j)).or_default().push((r, c));
            }
        }
        let mut by_free: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for (r, row) in inst.rows.iter().enumerate() {
            for &(f, a) in &row.form.free {
                by_free.entry(f).or_default().push((r, a));
            }
        }
        for list in by_var.values().chain(by_free.values()) {
            for &(r1, c1) in list {
                for &(r2, c2) in list {
                    gram[(r1, r2)] += c1 * c2;
                }
            }
        }
    }
    let scale = gram.diagonal().amax().max(1e-300);
    for i in 0..m {
        gram[(i, i)] += 1e-14 * scale;
    }
    let Some(chol) = gram.clone().cholesky() else {
        return;
    };

    let mut x = sol.x.clone();
    let mut y = sol.y.clone();
    let start = row_residual(inst, &x, &y);
    let mut best = (start, x.clone(), y.clone());
    for _ in 0..8 {
        let r = residuals(inst, &x, &y);
        let z = chol.solve(&r);
        for (row, zr) in coeffs.iter().zip(z.iter()) {
            for &(b, i, j, c) in row {
                let d = c * zr;
                if i == j {
                    x[b][(i, i)] += d;
                } else {
                    x[b][(i, j)] += d;
                    x[b][(j, i)] += d;
                }
            }
        }
        for (row, zr) in inst.rows.iter().zip(z.iter()) {
            for &(f, a) in &row.form.free {
                y[f] += a * zr;
            }
        }
        for xb in x.iter_mut() {
            let eig = SymmetricEigen::new(xb.clone());
            if eig.eigenvalues.iter().any(|&l| l < 0.0) {
                let l = eig.eigenvalues.map(|v| v.max(0.0));
                *xb = &eig.eigenvectors * DMatrix::from_diagonal(&l) * eig.eigenvectors.transpose();
            }
        }
        let res = row_residual(inst, &x, &y);
        if !res.is_finite() {
            break;
        }
        if res < best.0 {
            best = (res, x.clone(), y.clone());
        }
        if res <= 1e-13 * (1.0 + start) {
            break;
        }
    }
    if best.0 < start {
        sol.x = best.1;
        sol.y = best.2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{solve, LinearForm, SolverOptions, Status};

    fn instance() -> SdpInstance {
        let mut inst = SdpInstance::new();
        let b = inst.add_block(2);
        let y = inst.add_free(1);
        for (i, j, rhs) in [(0, 0, 1.0), (1, 1, 2.0), (0, 1, 0.5)] {
            let mut f = LinearForm::new();
            f.add_entry(b, i, j, if i == j { 1.0 } else { 0.5 });
            f.add_free(y, 1.0);
            inst.add_row(f, rhs);
        }
        inst
    }

    #[test]
    fn restores_rows_and_keeps_psd() {
        let inst = instance();
        let mut sol = solve(&inst, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        sol.x[0][(0, 1)] += 1e-5;
        sol.x[0][(1, 0)] += 1e-5;
        sol.x[0][(1, 1)] -= 3e-5;
        let before = row_residual(&inst, &sol.x, &sol.y);
        polish(&inst, &mut sol);
        let after = row_residual(&inst, &sol.x, &sol.y);
        assert!(before > 1e-6 && after < 1e-12, "{before} -> {after}");
        let eig = SymmetricEigen::new(sol.x[0].clone());
        assert!(eig.eigenvalues.min() >= -1e-12);
    }

    #[test]
    fn keeps_point_when_nothing_to_gain() {
        let inst = instance();
        let mut sol = solve(&inst, &SolverOptions::default()).unwrap();
        polish(&inst, &mut sol);
        let x = sol.x.clone();
        polish(&inst, &mut sol);
        assert!(row_residual(&inst, &sol.x, &sol.y) <= 1e-12);
        assert!((&sol.x[0] - &x[0]).amax() <= 1e-12);
    }
}
