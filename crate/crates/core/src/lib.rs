//! Optimal execution and exercise of share-buyback contracts with neural
//! policies trained against a Monte-Carlo mean-variance objective.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod contracts;
pub mod error;
pub mod market;
pub mod oracle;
pub mod policy;
pub mod training;

pub use error::{Error, Result};
