//! Link prediction for bipartite networks.
//!
//! A bipartite network is treated as a formal context (objects, attributes,
//! incidence). The pipeline mines size-bounded formal concepts — maximal
//! fully-connected bi-cliques — turns them into balanced positive/negative
//! training samples, trains an order-free transformer encoder to score
//! object/attribute pairs, and evaluates against neighbourhood heuristics and
//! a truncated-SVD baseline.

pub mod baselines;
pub mod bits;
pub mod cli;
pub mod concepts;
pub mod context;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod samples;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
