//! Bregman iteration for box-constrained linear-quadratic problems
//! `min ½‖Su − z‖²  s.t.  u_a ≤ u ≤ u_b`, with benchmark problems whose solutions
//! are known and diagnostics for checking convergence rates.

// `!(x > 0.0)` style checks are deliberate: they reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bregman;
pub mod constraints;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod operator;
pub mod problems;
pub mod subproblem;

pub use error::{Error, Result};
