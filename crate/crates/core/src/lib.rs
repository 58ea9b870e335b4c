#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

//! Numerical tools for contact-type Hamilton–Jacobi equations `H(x, u, Du) = c`
//! on the flat torus in one and two dimensions.

pub mod adjoint;
pub mod cli;
pub mod config;
pub mod ergodic;
pub mod error;
pub mod expr;
pub mod grid;
pub mod hamiltonians;
pub mod oracle;
pub mod reproduce;
pub mod schemes;

pub use error::{Error, Result};
pub use grid::{GridFunction, NodeMask, PeriodicGrid, Point};
