//! Infinitesimal generator of a polynomial SDE.
//!
//! `Lv = dv/dt + grad(v).b + 1/2 sum_l sigma_l' H(v) sigma_l`, where
//! `sigma_l` is the `l`-th column of the diffusion matrix. Inside the
//! stopping set the stopped processes share `Lv`; on it they reduce to
//! `dv/dt`.

use crate::model::SdeModel;
use crate::poly::{PolyError, Polynomial, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorResult {
    /// `Lv`
    pub full: Polynomial,
    /// `dv/dt`
    pub time_only: Polynomial,
}

impl GeneratorResult {
    /// `full - time_only`: drift and diffusion contribution.
    pub fn spatial(&self) -> Polynomial {
        &self.full - &self.time_only
    }
}

pub fn apply_generator(v: &Polynomial, model: &SdeModel) -> Result<GeneratorResult, PolyError> {
    let n = model.n();
    if v.nvars() != n {
        return Err(PolyError::DimensionMismatch {
            expected: n,
            got: v.nvars(),
        });
    }
    let time_only = v.differentiate(Var::Time);
    let grad: Vec<Polynomial> = (0..n).map(|i| v.differentiate(Var::State(i))).collect();
    let mut full = time_only.clone();
    for (gi, bi) in grad.iter().zip(model.drift()) {
        full = &full + &(gi * bi);
    }
    if !model.has_zero_diffusion() {
        let sigma = model.diffusion();
        for l in 0..model.k() {
            let mut quad = Polynomial::zero(n);
            for (i, gi) in grad.iter().enumerate() {
                if sigma[i][l].is_zero() {
                    continue;
                }
                for j in 0..n {
                    if sigma[j][l].is_zero() {
                        continue;
                    }
                    let hij = gi.differentiate(Var::State(j));
                    quad = &quad + &(&hij * &(&sigma[i][l] * &sigma[j][l]));
                }
            }
            full = &full + &quad.scale(0.5);
        }
    }
    let keep_time = v.has_time();
    let fix = |p: Polynomial| if keep_time { p.with_time() } else { p.without_unused_time() };
    Ok(GeneratorResult {
        full: fix(full),
        time_only: fix(time_only),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::parse_with_nvars as p;

    fn model(drift: &[&str], diffusion: &[&[&str]]) -> SdeModel {
        let n = drift.len();
        SdeModel::new(
            drift.iter().map(|s| p(s, n).unwrap()).collect(),
            diffusion
                .iter()
                .map(|r| r.iter().map(|s| p(s, n).unwrap()).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn examples() {
        let ou = model(&["-x1"], &[&["1"]]);
        assert_eq!(apply_generator(&p("x1^2", 1).unwrap(), &ou).unwrap().full, p("1 - 2*x1^2", 1).unwrap());

        let bm = model(&["0"], &[&["1"]]);
        let r = apply_generator(&p("t + x1", 1).unwrap(), &bm).unwrap();
        assert_eq!(r.full, p("1", 1).unwrap().with_time());
        assert_eq!(r.time_only, p("1", 1).unwrap().with_time());

        let rot = model(&["x2", "-x1"], &[&["0"], &["0"]]);
        assert!(apply_generator(&p("x1^2 + x2^2", 2).unwrap(), &rot).unwrap().full.is_zero());
    }

    #[test]
    fn constant_maps_to_zero() {
        let m = model(&["x1*x2", "1 - x1"], &[&["x1", "0"], &["0.3", "x2^2"]]);
        assert!(apply_generator(&p("7", 2).unwrap(), &m).unwrap().full.is_zero());
    }

    #[test]
    fn cross_diffusion_terms() {
        // sigma = [[1], [1]]: 1/2 (v11 + 2 v12 + v22).
        let m = model(&["0", "0"], &[&["1"], &["1"]]);
        let r = apply_generator(&p("x1*x2", 2).unwrap(), &m).unwrap();
        assert_eq!(r.full, p("1", 2).unwrap());
    }

    #[test]
    fn dimension_mismatch() {
        let m = model(&["0"], &[&["1"]]);
        assert!(apply_generator(&p("x1*x2", 2).unwrap(), &m).is_err());
    }
}
