//! Multi-block structured-grid compressible flow mini-solver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clock;
pub mod error;
pub mod exchange;
pub mod gas;
pub mod grid;
pub mod harness;
pub mod hetero;
pub mod integrator;
pub mod partition;
pub mod runtime;
pub mod scheme;

pub use error::{Error, Result};
