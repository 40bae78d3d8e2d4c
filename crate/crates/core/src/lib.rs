//! Kullback-Leibler approximation of spectral densities under a state
//! covariance constraint, solved by a fixed-point iteration on unit-trace
//! positive semi-definite matrices, with a projected-gradient dual solver
//! for cross-checking.

// Guards are written `!(x > floor)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dual;
pub mod error;
pub mod filterbank;
pub mod linalg;
pub mod pf;
pub mod problem;

pub use error::{Error, Result};
pub use filterbank::{CircleGrid, FilterBank, GridResponse};
pub use linalg::{HermitianMatrix, StateMatrix};
pub use problem::{normalize, NormalizedProblem, PriorSpec, RawProblem};
