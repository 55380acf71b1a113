//! Stochastic flows of jump SDEs, their Jacobians and inverses, and the
//! stochastic-characteristics representation of degenerate parabolic SPDEs.
//!
//! The crate is `no_std` (with `alloc`). Path-level parallelism is injected
//! through [`exec::PathExecutor`]; the companion `stochflow` crate supplies a
//! thread-pool executor, configuration files, and the command-line runner.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is deliberate: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the component formulas across several arrays at once.
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod coeffs;
pub mod error;
pub mod exec;
pub mod flow;
pub mod grid;
pub mod inverse;
pub mod limits;
pub mod linalg;
pub mod math;
pub mod noise;
pub mod norms;
pub mod quadrature;
pub mod spde;

pub use error::{Error, Result};
