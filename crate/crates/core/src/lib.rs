//! Certified bounds on reachability probabilities of polynomial SDEs.
//!
//! [`certificates::certify`] searches for a barrier certificate of a given
//! kind by SOS programming and reports the resulting bound;
//! [`oracle`] provides Monte-Carlo and finite-difference estimates to check
//! it against. [`cli`] holds the command implementations.

pub mod certificates;
pub mod cli;
pub mod generator;
pub mod model;
pub mod oracle;
pub mod poly;
pub mod sos;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/generator.md")]
    mod generator {}
    #[doc = include_str!("../../../book/src/certificates.md")]
    mod certificates {}
    #[doc = include_str!("../../../book/src/sos.md")]
    mod sos {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
