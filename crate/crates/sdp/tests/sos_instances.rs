use std::collections::BTreeMap;

use sdereach_sdp::{solve, LinearForm, SdpInstance, SolverOptions, Status};

type Exp = (u32, u32);

/// Gram feasibility problem `p = m' X m` over monomials of degree <= half.
fn gram_problem(p: &[(Exp, f64)], half: u32) -> SdpInstance {
    let basis: Vec<Exp> = (0..=half)
        .flat_map(|d| (0..=d).map(move |a| (a, d - a)))
        .collect();
    let mut inst = SdpInstance::new();
    let blk = inst.add_block(basis.len());
    let mut rows: BTreeMap<Exp, LinearForm> = BTreeMap::new();
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate().skip(i) {
            let e = (a.0 + b.0, a.1 + b.1);
            // Entry values are matrix entries, so off-diagonals count twice.
            rows.entry(e).or_default().add_entry(blk, i, j, 1.0);
        }
    }
    let target: BTreeMap<Exp, f64> = p.iter().copied().collect();
    for (e, form) in rows {
        inst.add_row(form, target.get(&e).copied().unwrap_or(0.0));
    }
    for e in target.keys() {
        assert!(e.0 + e.1 <= 2 * half, "target degree too high");
    }
    inst
}

#[test]
fn square_is_sos() {
    let inst = gram_problem(&[((2, 0), 1.0), ((0, 2), 1.0), ((1, 1), -2.0)], 1);
    let sol = solve(&inst, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
}

#[test]
fn negative_square_is_not_sos() {
    let inst = gram_problem(&[((2, 0), -1.0)], 1);
    let sol = solve(&inst, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, Status::PrimalInfeasible);
}

#[test]
fn motzkin_is_not_sos() {
    let motzkin = [((4, 2), 1.0), ((2, 4), 1.0), ((2, 2), -3.0), ((0, 0), 1.0)];
    let inst = gram_problem(&motzkin, 3);
    let sol = solve(&inst, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, Status::PrimalInfeasible);
}

#[test]
fn lower_bound_of_quartic() {
    // max gamma s.t. x^4 - 2x^2 + 1 + 0.5 - gamma is SOS in (x, y) with y unused.
    // The minimum of x^4 - 2x^2 + 1.5 is 0.5.
    let mut inst = gram_problem(&[((4, 0), 1.0), ((2, 0), -2.0), ((0, 0), 1.5)], 2);
    let g = inst.add_free(1);
    let const_row = inst
        .rows
        .iter()
        .position(|r| r.form.entries.iter().any(|e| e.i == 0 && e.j == 0))
        .unwrap();
    inst.rows[const_row].form.add_free(g, 1.0);
    inst.objective.add_free(g, -1.0);
    let sol = solve(&inst, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.y[g] - 0.5).abs() < 1e-6, "gamma = {}", sol.y[g]);
}
