//! Infeasible primal-dual path-following method for [`SdpInstance`].
//!
//! Primal: `min <C,X> + c'y  s.t.  A(X) + B y = b,  X PSD,  y free`.
//! Dual:   `max b'z          s.t.  A*(z) + S = C,  B'z = c,  S PSD`.
//!
//! Each iteration forms the HKM Schur complement `M_ij = tr(A_i X A_j S^-1)`,
//! which is block diagonal over groups of rows that share a PSD block, and
//! eliminates the free variables through `K = B' M^-1 B`. Steps follow
//! Mehrotra's predictor-corrector scheme.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::instance::SdpInstance;
use crate::SdpError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    /// The equality-form problem has no PSD solution (a Farkas ray for the
    /// dual was found).
    PrimalInfeasible,
    /// The objective is unbounded below on the feasible set.
    DualInfeasible,
    NumericalTrouble,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::PrimalInfeasible => "infeasible",
            Status::DualInfeasible => "unbounded",
            Status::NumericalTrouble => "numerical_trouble",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Target for relative gap and relative residuals.
    pub tol: f64,
    /// Threshold on the normalized Farkas residual for infeasibility claims.
    pub infeas_tol: f64,
    pub max_iter: usize,
    /// A run that stalls is still reported optimal when its best iterate has
    /// residuals within `tol.sqrt()` and a relative gap within this value.
    pub fallback_gap: f64,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            infeas_tol: 1e-8,
            max_iter: 150,
            fallback_gap: 1e-4,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<DMatrix<f64>>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<DMatrix<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    /// Relative primal residual, dual residual and gap at termination.
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

/// Full (both triangles) sparse entries of one row restricted to one block.
type BlockCoeffs = Vec<(usize, usize, f64)>;

struct Scaled {
    dims: Vec<usize>,
    m: usize,
    p: usize,
    b: DVector<f64>,
    c_blocks: Vec<DMatrix<f64>>,
    c_free: DVector<f64>,
    /// Per block: rows touching it with their coefficients.
    a: Vec<Vec<(usize, BlockCoeffs)>>,
    /// Per row: free-variable coefficients.
    b_rows: Vec<Vec<(usize, f64)>>,
    /// Connected components of rows under "shares a PSD block".
    components: Vec<Vec<usize>>,
    /// Position of each row inside its component.
    local: Vec<(usize, usize)>,
    row_norm: Vec<f64>,
    kept_rows: Vec<usize>,
    b_scale: f64,
    c_scale: f64,
    /// Some row touches no PSD block, so `M` is singular and the full KKT
    /// system must be factored instead of the Schur complement.
    has_linear_rows: bool,
}

fn frob(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

impl Scaled {
    fn build(inst: &SdpInstance) -> Result<Self, Option<Solution>> {
        let nb = inst.blocks.len();
        let dims = inst.blocks.clone();
        let p = inst.n_free;

        let mut kept_rows = Vec::new();
        for (r, row) in inst.rows.iter().enumerate() {
            let mut f = row.form.clone();
            f.canonicalize();
            if f.is_empty() {
                if row.rhs != 0.0 {
                    // 0 = rhs with rhs nonzero: trivially infeasible.
                    return Err(None);
                }
                continue;
            }
            kept_rows.push(r);
        }
        let m = kept_rows.len();

        let mut row_norm = vec![0.0; m];
        for (k, &r) in kept_rows.iter().enumerate() {
            let f = &inst.rows[r].form;
            let mut s = 0.0;
            for e in &f.entries {
                s += if e.i == e.j { e.value * e.value } else { 2.0 * e.value * e.value };
            }
            for &(_, v) in &f.free {
                s += v * v;
            }
            row_norm[k] = s.sqrt();
        }

        let b_raw: Vec<f64> = kept_rows
            .iter()
            .enumerate()
            .map(|(k, &r)| inst.rows[r].rhs / row_norm[k])
            .collect();
        let b_scale = b_raw.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let b = DVector::from_iterator(m, b_raw.iter().map(|v| v / b_scale));

        let mut c_blocks: Vec<DMatrix<f64>> = dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
        let mut c_free = DVector::zeros(p);
        for e in &inst.objective.entries {
            c_blocks[e.block][(e.i, e.j)] += e.value;
            if e.i != e.j {
                c_blocks[e.block][(e.j, e.i)] += e.value;
            }
        }
        for &(k, v) in &inst.objective.free {
            c_free[k] += v;
        }
        let c_scale = c_blocks
            .iter()
            .flat_map(|c| c.iter())
            .chain(c_free.iter())
            .fold(1.0f64, |a, v| a.max(v.abs()));
        for c in &mut c_blocks {
            *c /= c_scale;
        }
        c_free /= c_scale;

        let mut a: Vec<Vec<(usize, BlockCoeffs)>> = vec![Vec::new(); nb];
        let mut b_rows = vec![Vec::new(); m];
        for (k, &r) in kept_rows.iter().enumerate() {
            let f = &inst.rows[r].form;
            let n = row_norm[k];
            let mut per_block: std::collections::BTreeMap<usize, BlockCoeffs> = Default::default();
            for e in &f.entries {
                let list = per_block.entry(e.block).or_default();
                list.push((e.i, e.j, e.value / n));
                if e.i != e.j {
                    list.push((e.j, e.i, e.value / n));
                }
            }
            for (blk, list) in per_block {
                a[blk].push((k, list));
            }
            b_rows[k] = f.free.iter().map(|&(v, c)| (v, c / n)).collect();
        }

        // Union-find over rows sharing blocks.
        let mut parent: Vec<usize> = (0..m).collect();
        fn find(parent: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while parent[r] != r {
                r = parent[r];
            }
            let mut c = x;
            while parent[c] != r {
                let n = parent[c];
                parent[c] = r;
                c = n;
            }
            r
        }
        for rows in &a {
            if let Some(&(first, _)) = rows.first() {
                for &(r, _) in rows.iter().skip(1) {
                    let (ra, rb) = (find(&mut parent, first), find(&mut parent, r));
                    if ra != rb {
                        parent[ra] = rb;
                    }
                }
            }
        }
        let mut comp_of_root = std::collections::BTreeMap::new();
        let mut components: Vec<Vec<usize>> = Vec::new();
        let mut local = vec![(0, 0); m];
        for r in 0..m {
            let root = find(&mut parent, r);
            let c = *comp_of_root.entry(root).or_insert_with(|| {
                components.push(Vec::new());
                components.len() - 1
            });
            local[r] = (c, components[c].len());
            components[c].push(r);
        }

        let mut touched = vec![false; m];
        for rows in &a {
            for (r, _) in rows {
                touched[*r] = true;
            }
        }
        let has_linear_rows = touched.iter().any(|t| !t);

        Ok(Self {
            has_linear_rows,
            dims,
            m,
            p,
            b,
            c_blocks,
            c_free,
            a,
            b_rows,
            components,
            local,
            row_norm,
            kept_rows,
            b_scale,
            c_scale,
        })
    }

    /// Factor of `A A* + B B'`, used to project search directions back onto
    /// the linearized rows.
    fn row_gram(&self) -> Option<Cholesky<f64, nalgebra::Dyn>> {
        let mut g = DMatrix::<f64>::zeros(self.m, self.m);
        for rows in &self.a {
            let mut by_entry: std::collections::BTreeMap<(usize, usize), Vec<(usize, f64)>> = Default::default();
            for (r, coeffs) in rows {
                for &(i, j, v) in coeffs {
                    by_entry.entry((i, j)).or_default().push((*r, v));
                }
            }
            for list in by_entry.values() {
                for &(r1, v1) in list {
                    for &(r2, v2) in list {
                        g[(r1, r2)] += v1 * v2;
                    }
                }
            }
        }
        let mut by_free: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.p];
        for (r, row) in self.b_rows.iter().enumerate() {
            for &(v, c) in row {
                by_free[v].push((r, c));
            }
        }
        for list in &by_free {
            for &(r1, c1) in list {
                for &(r2, c2) in list {
                    g[(r1, r2)] += c1 * c2;
                }
            }
        }
        for i in 0..self.m {
            g[(i, i)] += 1e-12;
        }
        Cholesky::new(g)
    }

    fn apply_a(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (k, rows) in self.a.iter().enumerate() {
            for (r, coeffs) in rows {
                out[*r] += coeffs.iter().map(|&(i, j, v)| v * x[k][(i, j)]).sum::<f64>();
            }
        }
        out
    }

    fn apply_at(&self, z: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self.dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
        for (k, rows) in self.a.iter().enumerate() {
            for (r, coeffs) in rows {
                let zr = z[*r];
                if zr == 0.0 {
                    continue;
                }
                for &(i, j, v) in coeffs {
                    out[k][(i, j)] += zr * v;
                }
            }
        }
        out
    }

    fn apply_b(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.m,
            self.b_rows
                .iter()
                .map(|row| row.iter().map(|&(v, c)| c * y[v]).sum::<f64>()),
        )
    }

    fn apply_bt(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.p);
        for (r, row) in self.b_rows.iter().enumerate() {
            for &(v, c) in row {
                out[v] += c * z[r];
            }
        }
        out
    }
}

/// Factorized Newton system for one iteration.
struct Newton {
    chol: Vec<Option<Cholesky<f64, nalgebra::Dyn>>>,
    lu: Vec<Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>>,
    minv_b: DMatrix<f64>,
    k_chol: Option<Cholesky<f64, nalgebra::Dyn>>,
    k_lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    full: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    /// Unregularized per-component blocks of `M`, for refinement residuals.
    mats: Vec<DMatrix<f64>>,
    /// Jacobi scalings applied before factoring each block of `M`.
    dscale: Vec<DVector<f64>>,
    k_scale: DVector<f64>,
}

/// `1/sqrt(diag)` scaling, with 1 for empty diagonal entries.
fn equilibrate(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        m.nrows(),
        (0..m.nrows()).map(|i| {
            let v = m[(i, i)];
            if v > 0.0 && v.is_finite() {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        }),
    )
}

impl Newton {
    fn build(pb: &Scaled, x: &[DMatrix<f64>], sinv: &[DMatrix<f64>]) -> Option<Self> {
        let mut mats: Vec<DMatrix<f64>> = pb
            .components
            .iter()
            .map(|c| DMatrix::zeros(c.len(), c.len()))
            .collect();
        for (k, rows) in pb.a.iter().enumerate() {
            let n = pb.dims[k];
            let xk = &x[k];
            let sk = &sinv[k];
            let mut f = DMatrix::zeros(n, n);
            for (jdx, (rj, cj)) in rows.iter().enumerate() {
                f.fill(0.0);
                // F = X A_j S^-1 = sum v X[:,p] S^-1[q,:]
                for &(pp, qq, v) in cj {
                    for col in 0..n {
                        let s = v * sk[(qq, col)];
                        if s == 0.0 {
                            continue;
                        }
                        for row in 0..n {
                            f[(row, col)] += xk[(row, pp)] * s;
                        }
                    }
                }
                let (comp, lj) = pb.local[*rj];
                for (ri, ci) in rows.iter().take(jdx + 1) {
                    let (_, li) = pb.local[*ri];
                    let val: f64 = ci.iter().map(|&(pp, qq, v)| v * f[(qq, pp)]).sum();
                    mats[comp][(li, lj)] += val;
                    if li != lj {
                        mats[comp][(lj, li)] += val;
                    }
                }
            }
        }

        if pb.has_linear_rows || pb.p > 0 {
            let n = pb.m + pb.p;
            let mut kkt = DMatrix::zeros(n, n);
            for (c, rows) in pb.components.iter().enumerate() {
                for (li, &ri) in rows.iter().enumerate() {
                    for (lj, &rj) in rows.iter().enumerate() {
                        kkt[(ri, rj)] = mats[c][(li, lj)];
                    }
                }
            }
            for (r, row) in pb.b_rows.iter().enumerate() {
                for &(v, c) in row {
                    kkt[(r, pb.m + v)] += c;
                    kkt[(pb.m + v, r)] += c;
                }
            }
            let d = DVector::from_iterator(
                n,
                (0..n).map(|i| {
                    let v = kkt.row(i).iter().fold(0.0f64, |a, x| a.max(x.abs()));
                    if v > 0.0 && v.is_finite() {
                        1.0 / v.sqrt()
                    } else {
                        1.0
                    }
                }),
            );
            let kkt = DMatrix::from_fn(n, n, |i, j| kkt[(i, j)] * d[i] * d[j]);
            return Some(Newton {
                chol: Vec::new(),
                lu: Vec::new(),
                minv_b: DMatrix::zeros(0, 0),
                k_chol: None,
                k_lu: None,
                full: Some(kkt.lu()),
                mats,
                dscale: Vec::new(),
                k_scale: d,
            });
        }

        let mut chol = Vec::with_capacity(mats.len());
        let mut lu = Vec::with_capacity(mats.len());
        let mut dscale = Vec::with_capacity(mats.len());
        for mc in &mats {
            let d = equilibrate(mc);
            let mut mc = DMatrix::from_fn(mc.nrows(), mc.ncols(), |i, j| mc[(i, j)] * d[i] * d[j]);
            let mut factored = None;
            for reg in [0.0, 1e-14, 1e-12, 1e-10] {
                if reg > 0.0 {
                    for i in 0..mc.nrows() {
                        mc[(i, i)] += reg;
                    }
                }
                if let Some(c) = Cholesky::new(mc.clone()) {
                    factored = Some(c);
                    break;
                }
            }
            match factored {
                Some(c) => {
                    chol.push(Some(c));
                    lu.push(None);
                }
                None => {
                    chol.push(None);
                    lu.push(Some(mc.lu()));
                }
            }
            dscale.push(d);
        }

        let mut nt = Newton {
            chol,
            lu,
            minv_b: DMatrix::zeros(pb.m, pb.p),
            k_chol: None,
            k_lu: None,
            full: None,
            mats,
            dscale,
            k_scale: DVector::zeros(0),
        };
        if pb.p > 0 {
            let mut bmat = DMatrix::zeros(pb.m, pb.p);
            for (r, row) in pb.b_rows.iter().enumerate() {
                for &(v, c) in row {
                    bmat[(r, v)] += c;
                }
            }
            for col in 0..pb.p {
                let rhs = bmat.column(col).into_owned();
                if rhs.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let sol = nt.solve_m(pb, &rhs)?;
                nt.minv_b.set_column(col, &sol);
            }
            let mut k = bmat.transpose() * &nt.minv_b;
            let k = {
                let kk = sym(&k);
                k.copy_from(&kk);
                k
            };
            let d = equilibrate(&k);
            let ks = DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| k[(i, j)] * d[i] * d[j]);
            let mut kreg = ks.clone();
            for reg in [0.0, 1e-13, 1e-11, 1e-9] {
                if reg > 0.0 {
                    for i in 0..kreg.nrows() {
                        kreg[(i, i)] = ks[(i, i)] + reg;
                    }
                }
                if let Some(c) = Cholesky::new(kreg.clone()) {
                    nt.k_chol = Some(c);
                    break;
                }
            }
            nt.k_scale = d;
            if nt.k_chol.is_none() {
                nt.k_lu = Some(kreg.lu());
            }
        }
        Some(nt)
    }

    fn solve_m(&self, pb: &Scaled, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let mut out = DVector::zeros(pb.m);
        for (c, rows) in pb.components.iter().enumerate() {
            let local = DVector::from_iterator(rows.len(), rows.iter().map(|&r| rhs[r]));
            if local.iter().all(|&v| v == 0.0) {
                continue;
            }
            let d = &self.dscale[c];
            let local = local.component_mul(d);
            let sol = if let Some(ch) = &self.chol[c] {
                ch.solve(&local)
            } else {
                self.lu[c].as_ref()?.solve(&local)?
            };
            let sol = sol.component_mul(d);
            for (li, &r) in rows.iter().enumerate() {
                out[r] = sol[li];
            }
        }
        Some(out)
    }

    fn apply_m(&self, pb: &Scaled, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(pb.m);
        for (c, rows) in pb.components.iter().enumerate() {
            let local = DVector::from_iterator(rows.len(), rows.iter().map(|&r| v[r]));
            let prod = &self.mats[c] * local;
            for (li, &r) in rows.iter().enumerate() {
                out[r] = prod[li];
            }
        }
        out
    }

    /// Solves `[M B; B' 0] [dz; dy] = [r1; r2]` with a few rounds of
    /// iterative refinement against the unregularized system.
    fn solve(
        &self,
        pb: &Scaled,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let (mut dz, mut dy) = self.solve_once(pb, r1, r2)?;
        let size = r1.norm() + r2.norm();
        let mut res = f64::INFINITY;
        for _ in 0..20 {
            let e1 = r1 - self.apply_m(pb, &dz) - pb.apply_b(&dy);
            let e2 = r2 - pb.apply_bt(&dz);
            let norm = e1.norm() + e2.norm();
            if !(norm < res) || norm <= 1e-15 * size {
                break;
            }
            res = norm;
            let (cz, cy) = self.solve_once(pb, &e1, &e2)?;
            dz += cz;
            dy += cy;
        }
        Some((dz, dy))
    }

    fn solve_once(
        &self,
        pb: &Scaled,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        if let Some(lu) = &self.full {
            let rhs = DVector::from_iterator(pb.m + pb.p, r1.iter().chain(r2.iter()).copied())
                .component_mul(&self.k_scale);
            let sol = lu.solve(&rhs)?.component_mul(&self.k_scale);
            if sol.iter().any(|v| !v.is_finite()) {
                return None;
            }
            return Some((sol.rows(0, pb.m).into_owned(), sol.rows(pb.m, pb.p).into_owned()));
        }
        let u = self.solve_m(pb, r1)?;
        if pb.p == 0 {
            return Some((u, DVector::zeros(0)));
        }
        let rhs = (pb.apply_bt(&u) - r2).component_mul(&self.k_scale);
        let dy = if let Some(ch) = &self.k_chol {
            ch.solve(&rhs)
        } else {
            self.k_lu.as_ref()?.solve(&rhs)?
        };
        let dy = dy.component_mul(&self.k_scale);
        let dz = u - &self.minv_b * &dy;
        Some((dz, dy))
    }
}

/// Largest step `a` with `X + a dX` PSD (infinity when unbounded).
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(ch) = Cholesky::new(x.clone()) else {
        return 0.0;
    };
    let l = ch.l();
    let Some(linv) = l.clone().try_inverse() else {
        return 0.0;
    };
    let w = sym(&(&linv * dx * linv.transpose()));
    let eig = SymmetricEigen::new(w);
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !lmin.is_finite() {
        0.0
    } else if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(m.clone()).map(|c| c.inverse())
}

struct Iterate {
    x: Vec<DMatrix<f64>>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: Vec<DMatrix<f64>>,
}

/// Solves the instance. Malformed instances are rejected with an error;
/// every other outcome, including failure to converge, is a [`Status`].
pub fn solve(inst: &SdpInstance, opts: &SolverOptions) -> Result<Solution, SdpError> {
    inst.validate()?;
    let pb = match Scaled::build(inst) {
        Ok(pb) => pb,
        Err(_) => {
            return Ok(Solution {
                status: Status::PrimalInfeasible,
                x: inst.blocks.iter().map(|&d| DMatrix::zeros(d, d)).collect(),
                y: vec![0.0; inst.n_free],
                z: vec![0.0; inst.rows.len()],
                s: inst.blocks.iter().map(|&d| DMatrix::zeros(d, d)).collect(),
                primal_objective: f64::NAN,
                dual_objective: f64::NAN,
                iterations: 0,
                primal_residual: f64::INFINITY,
                dual_residual: f64::INFINITY,
                gap: f64::INFINITY,
            })
        }
    };

    let total_dim: usize = pb.dims.iter().sum::<usize>().max(1);
    let nbar = total_dim as f64;

    // Starting point following the usual scale-aware identity choice.
    let mut it = {
        let mut x = Vec::new();
        let mut s = Vec::new();
        for (k, &n) in pb.dims.iter().enumerate() {
            let nf = n as f64;
            let mut anorm_max: f64 = 0.0;
            let mut xi: f64 = 10f64.max(nf.sqrt());
            for (r, coeffs) in &pb.a[k] {
                let an = coeffs.iter().map(|&(_, _, v)| v * v).sum::<f64>().sqrt();
                anorm_max = anorm_max.max(an);
                xi = xi.max(nf * (1.0 + pb.b[*r].abs()) / (1.0 + an));
            }
            let eta = 10f64.max(nf.sqrt()).max(frob(&pb.c_blocks[k])).max(anorm_max);
            x.push(DMatrix::identity(n, n) * xi);
            s.push(DMatrix::identity(n, n) * eta);
        }
        Iterate {
            x,
            y: DVector::zeros(pb.p),
            z: DVector::zeros(pb.m),
            s,
        }
    };

    let bnorm = pb.b.norm();
    let cnorm = pb.c_blocks.iter().map(|c| c.norm_squared()).sum::<f64>().sqrt() + pb.c_free.norm();

    let mut status = Status::NumericalTrouble;
    let mut iterations = 0;
    let mut measures = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut best: Option<(f64, Iterate, (f64, f64, f64))> = None;
    let mut stall = 0;
    let mut since_best = 0;
    let row_gram = pb.row_gram();
    let feas_tol = opts.tol.sqrt().min(1e-6);

    for iter in 0..opts.max_iter {
        iterations = iter;
        let ax = pb.apply_a(&it.x);
        let by = pb.apply_b(&it.y);
        let rp = &pb.b - &ax - &by;
        let atz = pb.apply_at(&it.z);
        let rd: Vec<DMatrix<f64>> = (0..pb.dims.len())
            .map(|k| &pb.c_blocks[k] - &atz[k] - &it.s[k])
            .collect();
        let btz = pb.apply_bt(&it.z);
        let ry = &pb.c_free - &btz;

        let pobj: f64 = (0..pb.dims.len())
            .map(|k| inner(&pb.c_blocks[k], &it.x[k]))
            .sum::<f64>()
            + pb.c_free.dot(&it.y);
        let dobj = pb.b.dot(&it.z);
        let xs: f64 = (0..pb.dims.len()).map(|k| inner(&it.x[k], &it.s[k])).sum();
        let mu = xs / nbar;

        let rd_norm = (rd.iter().map(|m| m.norm_squared()).sum::<f64>() + ry.norm_squared()).sqrt();
        let pinf = rp.norm() / (1.0 + bnorm);
        let dinf = rd_norm / (1.0 + cnorm);
        let denom = 1.0 + pobj.abs() + dobj.abs();
        let gap = ((pobj - dobj).abs() / denom).max(xs.abs() / denom);
        measures = (pinf, dinf, gap);

        if opts.verbose {
            eprintln!(
                "it {iter:3} pobj {pobj:+.6e} dobj {dobj:+.6e} pinf {pinf:.2e} dinf {dinf:.2e} gap {gap:.2e} mu {mu:.2e}"
            );
        }

        // Feasible iterates rank by gap and always beat infeasible ones.
        let infeas = pinf.max(dinf);
        let merit = if infeas <= feas_tol { gap } else { 1.0 + infeas };
        if best.as_ref().is_some_and(|(b, _, _)| merit >= *b) {
            since_best += 1;
            if since_best > 8 && best.as_ref().is_some_and(|(b, _, _)| *b <= opts.fallback_gap) {
                break;
            }
            if since_best > 25 {
                break;
            }
        } else {
            since_best = 0;
        }
        if merit.is_finite() && best.as_ref().is_none_or(|(b, _, _)| merit < *b) {
            best = Some((
                merit,
                Iterate {
                    x: it.x.clone(),
                    y: it.y.clone(),
                    z: it.z.clone(),
                    s: it.s.clone(),
                },
                measures,
            ));
        }

        if pinf <= opts.tol && dinf <= opts.tol && gap <= opts.tol {
            status = Status::Optimal;
            break;
        }

        // Farkas rays. A*(z) + S = C - R_d and B'z = c - r_y, so the
        // normalized residuals of the rays come straight from the iterate.
        if dobj > 0.0 && pinf > opts.tol {
            let cr: f64 = ((0..pb.dims.len())
                .map(|k| (&pb.c_blocks[k] - &rd[k]).norm_squared())
                .sum::<f64>()
                + (&pb.c_free - &ry).norm_squared())
            .sqrt();
            if cr / dobj < opts.infeas_tol {
                status = Status::PrimalInfeasible;
                break;
            }
        }
        if pobj < 0.0 && dinf > opts.tol {
            let ar = (&ax + &by).norm();
            if ar / (-pobj) < opts.infeas_tol {
                status = Status::DualInfeasible;
                break;
            }
        }

        let Some(sinv) = it.s.iter().map(spd_inverse).collect::<Option<Vec<_>>>() else {
            break;
        };
        let Some(newton) = Newton::build(&pb, &it.x, &sinv) else {
            break;
        };

        // Predictor.
        let xrd: Vec<DMatrix<f64>> = (0..pb.dims.len())
            .map(|k| &it.x[k] * &rd[k] * &sinv[k])
            .collect();
        let h: Vec<DMatrix<f64>> = (0..pb.dims.len()).map(|k| -&it.x[k] - &xrd[k]).collect();
        let r1 = &rp - pb.apply_a(&h);
        let Some((dz_a, _dy_a)) = newton.solve(&pb, &r1, &ry) else {
            break;
        };
        let atdz = pb.apply_at(&dz_a);
        let ds_a: Vec<DMatrix<f64>> = (0..pb.dims.len()).map(|k| &rd[k] - &atdz[k]).collect();
        let dx_a: Vec<DMatrix<f64>> = (0..pb.dims.len())
            .map(|k| -&it.x[k] - sym(&(&it.x[k] * &ds_a[k] * &sinv[k])))
            .collect();
        let ap = (0..pb.dims.len())
            .map(|k| max_step(&it.x[k], &dx_a[k]))
            .fold(f64::INFINITY, f64::min)
            .min(1.0);
        let ad = (0..pb.dims.len())
            .map(|k| max_step(&it.s[k], &ds_a[k]))
            .fold(f64::INFINITY, f64::min)
            .min(1.0);
        let mu_aff: f64 = (0..pb.dims.len())
            .map(|k| inner(&(&it.x[k] + &dx_a[k] * ap), &(&it.s[k] + &ds_a[k] * ad)))
            .sum::<f64>()
            / nbar;
        let sigma = if mu > 0.0 {
            (mu_aff / mu).max(0.0).powi(3).min(1.0)
        } else {
            0.0
        };

        // Corrector.
        let h: Vec<DMatrix<f64>> = (0..pb.dims.len())
            .map(|k| {
                -&it.x[k] + &sinv[k] * (sigma * mu) - &xrd[k] - &dx_a[k] * &ds_a[k] * &sinv[k]
            })
            .collect();
        let r1 = &rp - pb.apply_a(&h);
        let Some((dz, dy)) = newton.solve(&pb, &r1, &ry) else {
            break;
        };
        let atdz = pb.apply_at(&dz);
        let ds: Vec<DMatrix<f64>> = (0..pb.dims.len()).map(|k| &rd[k] - &atdz[k]).collect();
        let dx: Vec<DMatrix<f64>> = (0..pb.dims.len())
            .map(|k| {
                -&it.x[k] + &sinv[k] * (sigma * mu)
                    - sym(&((&it.x[k] * &ds[k] + &dx_a[k] * &ds_a[k]) * &sinv[k]))
            })
            .collect();
        // Rounding in dX grows with the conditioning of S; restore
        // A dX + B dy = rp by a least-norm correction.
        let (dx, dy) = match &row_gram {
            Some(g) => {
                let e = &rp - pb.apply_a(&dx) - pb.apply_b(&dy);
                let w = g.solve(&e);
                let cx = pb.apply_at(&w);
                let dx: Vec<DMatrix<f64>> = dx.iter().zip(&cx).map(|(a, b)| sym(&(a + b))).collect();
                (dx, dy + pb.apply_bt(&w))
            }
            None => (dx, dy),
        };
        let apmax = (0..pb.dims.len())
            .map(|k| max_step(&it.x[k], &dx[k]))
            .fold(f64::INFINITY, f64::min);
        let admax = (0..pb.dims.len())
            .map(|k| max_step(&it.s[k], &ds[k]))
            .fold(f64::INFINITY, f64::min);
        let gamma = 0.9 + 0.09 * ap.min(ad);
        let ap = (gamma * apmax).min(1.0);
        let ad = (gamma * admax).min(1.0);
        if opts.verbose {
            eprintln!("    step p {ap:.2e} d {ad:.2e} sigma {sigma:.2e}");
        }
        if !(ap.is_finite() && ad.is_finite()) || (ap < 1e-10 && ad < 1e-10) {
            stall += 1;
            if stall > 3 {
                break;
            }
        } else {
            stall = 0;
        }

        for k in 0..pb.dims.len() {
            it.x[k] += &dx[k] * ap;
            it.x[k] = sym(&it.x[k]);
            it.s[k] += &ds[k] * ad;
            it.s[k] = sym(&it.s[k]);
        }
        it.y += &dy * ap;
        it.z += &dz * ad;
        iterations = iter + 1;
    }

    // Fall back to the best iterate seen when the run did not finish cleanly.
    if status == Status::NumericalTrouble {
        if let Some((merit, b, m)) = best {
            if merit <= opts.fallback_gap {
                status = Status::Optimal;
            }
            it = b;
            measures = m;
        }
    }

    Ok(unscale(inst, &pb, it, status, iterations, measures))
}

fn unscale(
    inst: &SdpInstance,
    pb: &Scaled,
    it: Iterate,
    status: Status,
    iterations: usize,
    measures: (f64, f64, f64),
) -> Solution {
    let x: Vec<DMatrix<f64>> = it.x.into_iter().map(|m| m * pb.b_scale).collect();
    let y: Vec<f64> = it.y.iter().map(|v| v * pb.b_scale).collect();
    let s: Vec<DMatrix<f64>> = it.s.into_iter().map(|m| m * pb.c_scale).collect();
    let mut z = vec![0.0; inst.rows.len()];
    for (k, &r) in pb.kept_rows.iter().enumerate() {
        z[r] = it.z[k] * pb.c_scale / pb.row_norm[k];
    }
    let mut pobj = inst.objective_offset;
    for e in &inst.objective.entries {
        let v = x[e.block][(e.i, e.j)];
        pobj += if e.i == e.j { e.value * v } else { 2.0 * e.value * v };
    }
    for &(k, v) in &inst.objective.free {
        pobj += v * y[k];
    }
    let dobj = inst.objective_offset
        + inst
            .rows
            .iter()
            .zip(&z)
            .map(|(r, zi)| r.rhs * zi)
            .sum::<f64>();
    Solution {
        status,
        x,
        y,
        z,
        s,
        primal_objective: pobj,
        dual_objective: dobj,
        iterations,
        primal_residual: measures.0,
        dual_residual: measures.1,
        gap: measures.2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::LinearForm;

    /// min x11 + x22 s.t. x12 = 1 (as 2*X12 = 2), X PSD  -> optimum 2.
    #[test]
    fn tiny_sdp() {
        let mut inst = SdpInstance::new();
        inst.add_block(2);
        let mut f = LinearForm::new();
        f.add_entry(0, 0, 1, 1.0);
        inst.add_row(f, 2.0);
        inst.objective.add_entry(0, 0, 0, 1.0);
        inst.objective.add_entry(0, 1, 1, 1.0);
        let sol = solve(&inst, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.primal_objective - 2.0).abs() < 1e-7, "{}", sol.primal_objective);
        assert!((sol.dual_objective - 2.0).abs() < 1e-7);
    }

    /// Free variable with an LP-like block: min y s.t. y - x = 0, x >= 3 via
    /// x - s = 3 with s PSD (1x1).
    #[test]
    fn free_variables() {
        let mut inst = SdpInstance::new();
        let blk = inst.add_block(1);
        let y = inst.add_free(2);
        // y0 - y1 = 0
        let mut f = LinearForm::new();
        f.add_free(y, 1.0);
        f.add_free(y + 1, -1.0);
        inst.add_row(f, 0.0);
        // y1 - s = 3
        let mut f = LinearForm::new();
        f.add_free(y + 1, 1.0);
        f.add_entry(blk, 0, 0, -1.0);
        inst.add_row(f, 3.0);
        inst.objective.add_free(y, 1.0);
        let sol = solve(&inst, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.y[0] - 3.0).abs() < 1e-6, "{:?}", sol.y);
    }

    /// X PSD 1x1 with X = -1 has no solution.
    #[test]
    fn detects_infeasibility() {
        let mut inst = SdpInstance::new();
        inst.add_block(1);
        let mut f = LinearForm::new();
        f.add_entry(0, 0, 0, 1.0);
        inst.add_row(f, -1.0);
        let sol = solve(&inst, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, Status::PrimalInfeasible);
    }

    /// min -y with y - s = 0, s PSD: unbounded.
    #[test]
    fn detects_unboundedness() {
        let mut inst = SdpInstance::new();
        inst.add_block(1);
        inst.add_free(1);
        let mut f = LinearForm::new();
        f.add_free(0, 1.0);
        f.add_entry(0, 0, 0, -1.0);
        inst.add_row(f, 0.0);
        inst.objective.add_free(0, -1.0);
        let sol = solve(&inst, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, Status::DualInfeasible);
    }

    #[test]
    fn empty_row_with_nonzero_rhs_is_infeasible() {
        let mut inst = SdpInstance::new();
        inst.add_block(1);
        inst.add_row(LinearForm::new(), 1.0);
        let sol = solve(&inst, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, Status::PrimalInfeasible);
    }
}
