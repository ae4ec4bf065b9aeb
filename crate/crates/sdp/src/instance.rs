use std::collections::BTreeMap;

use crate::SdpError;

/// One entry of a sparse symmetric coefficient matrix, addressed by block and
/// upper-triangle position (`i <= j`, zero-based). The value is the matrix
/// entry itself, so an off-diagonal entry contributes `2 * value * X[i][j]`
/// to a trace inner product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub block: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

impl Entry {
    pub fn new(block: usize, i: usize, j: usize, value: f64) -> Self {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        Self { block, i, j, value }
    }
}

/// A linear functional `sum_k <A_k, X_k> + sum_f a_f y_f` over the PSD blocks
/// `X_k` and the free scalars `y_f`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearForm {
    pub entries: Vec<Entry>,
    pub free: Vec<(usize, f64)>,
}

impl LinearForm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_entry(&mut self, block: usize, i: usize, j: usize, value: f64) {
        self.entries.push(Entry::new(block, i, j, value));
    }

    pub fn add_free(&mut self, var: usize, value: f64) {
        self.free.push((var, value));
    }

    /// Sorts entries, merges duplicates and drops exact zeros.
    pub fn canonicalize(&mut self) {
        let mut m: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        for e in &self.entries {
            *m.entry((e.block, e.i, e.j)).or_insert(0.0) += e.value;
        }
        self.entries = m
            .into_iter()
            .filter(|&(_, v)| v != 0.0)
            .map(|((block, i, j), value)| Entry { block, i, j, value })
            .collect();
        let mut f: BTreeMap<usize, f64> = BTreeMap::new();
        for &(k, v) in &self.free {
            *f.entry(k).or_insert(0.0) += v;
        }
        self.free = f.into_iter().filter(|&(_, v)| v != 0.0).collect();
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.free.is_empty()
    }
}

/// An equality row `form = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub form: LinearForm,
    pub rhs: f64,
}

/// A block semidefinite program in equality form with free variables:
///
/// ```text
/// minimize    <C, X> + c'y + offset
/// subject to  <A_r, X> + b_r'y = rhs_r   for every row r
///             X_k  PSD                   for every block k
/// ```
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SdpInstance {
    pub blocks: Vec<usize>,
    pub n_free: usize,
    pub rows: Vec<Row>,
    pub objective: LinearForm,
    pub objective_offset: f64,
}

impl SdpInstance {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, dim: usize) -> usize {
        self.blocks.push(dim);
        self.blocks.len() - 1
    }

    pub fn add_free(&mut self, count: usize) -> usize {
        let first = self.n_free;
        self.n_free += count;
        first
    }

    pub fn add_row(&mut self, mut form: LinearForm, rhs: f64) {
        form.canonicalize();
        self.rows.push(Row { form, rhs });
    }

    pub fn canonicalize(&mut self) {
        for r in &mut self.rows {
            r.form.canonicalize();
        }
        self.objective.canonicalize();
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        let check = |form: &LinearForm, what: &str| -> Result<(), SdpError> {
            for e in &form.entries {
                let dim = *self.blocks.get(e.block).ok_or_else(|| {
                    SdpError::Malformed(format!("{what}: block {} does not exist", e.block))
                })?;
                if e.i > e.j || e.j >= dim {
                    return Err(SdpError::Malformed(format!(
                        "{what}: entry ({}, {}) outside block {} of size {dim}",
                        e.i, e.j, e.block
                    )));
                }
                if !e.value.is_finite() {
                    return Err(SdpError::Malformed(format!("{what}: non-finite coefficient")));
                }
            }
            for &(k, v) in &form.free {
                if k >= self.n_free || !v.is_finite() {
                    return Err(SdpError::Malformed(format!(
                        "{what}: bad free variable {k}"
                    )));
                }
            }
            Ok(())
        };
        if self.blocks.contains(&0) {
            return Err(SdpError::Malformed("empty PSD block".into()));
        }
        for (r, row) in self.rows.iter().enumerate() {
            check(&row.form, &format!("row {r}"))?;
            if !row.rhs.is_finite() {
                return Err(SdpError::Malformed(format!("row {r}: non-finite rhs")));
            }
        }
        check(&self.objective, "objective")
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }
}
