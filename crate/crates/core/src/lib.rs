//! Optimal lifetime consumption and portfolio choice when utility depends on
//! consumption relative to its own running average.
//!
//! [`dp`] solves the problem backward on a (time, wealth, habit) grid,
//! [`merton`] gives the closed form for the no-habit case, and [`sim`] runs
//! solved policies forward under Monte Carlo.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod config;
pub mod dp;
mod error;
pub mod experiment;
pub mod manifest;
pub mod merton;
pub mod model;
pub mod sim;

pub use error::{Error, Result};

/// Fixed 17-significant-digit rendering used in every CSV output.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
