//! Grouped fixed effects (GFE) regularization for binary-choice panel models
//! under complete separation.
//!
//! The crate covers the whole pipeline: panel ingestion and separation
//! detection ([`data`]), fixed-effects, grouped, pooled and Firth-penalized
//! maximum likelihood ([`estimate`]), k-means discretization of the
//! heterogeneity with the γ-rule for the number of groups ([`cluster`]),
//! average partial effects with delta-method inference and the half-panel
//! jackknife ([`ape`]), the two-step GFE estimator ([`gfe`]), a Monte Carlo
//! harness ([`simulate`]) and an expanding-window forecasting harness
//! ([`forecast`]).

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ape;
pub mod cluster;
pub mod data;
pub mod error;
pub mod estimate;
pub mod forecast;
pub mod gfe;
pub mod parse;
pub mod simulate;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
