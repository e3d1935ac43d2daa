//! Hierarchical vectors over cluster trees with nested bases, H²-matrix
//! products in induced cluster bases, and adaptive basis conversion with
//! exactly computed errors.

// `!(x >= 0.0)` rejects NaN on purpose; index loops read better in the kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod basis;
pub mod bench;
pub mod cluster;
pub mod convert;
pub mod demo;
pub mod dense;
pub mod error;
pub mod factors;
pub mod h2matrix;
pub mod householder;
pub mod hvector;
pub mod io;
pub mod matvec;
pub mod poisson;
pub mod polynomial;
pub mod selftest;

pub use error::{Error, Result};
