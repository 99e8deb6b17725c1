//! Scalar backward stochastic differential equations whose generators are
//! concave with infinite slope at zero.

// `!(x > 0.0)` is used throughout so that NaN is rejected with the bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod exec;
pub mod peano;
pub mod solver;
pub mod dual;
pub mod transform;
pub mod config;
pub mod experiment;
mod quad;
