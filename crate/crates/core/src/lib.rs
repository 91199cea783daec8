//! Numerical toolkit for block Jacobi operators.
//!
//! The crate assembles finite sections of block tridiagonal Hermitian
//! operators, computes blocks of their Green matrix and their eigenpairs,
//! evaluates exponential decay envelopes for those quantities and checks
//! measured norms against the envelopes.
//!
//! Modules:
//!
//! * [`linalg`]: dense complex kernels (Hermitian eigensolver, matrix
//!   functions, block tridiagonal LU, polynomial roots).
//! * [`operator`]: operator families, truncations and the difference
//!   expression.
//! * [`bounds`]: envelope functions and rates.
//! * [`green`]: Green columns, eigenpairs below a threshold and decay
//!   verification reports.
//! * [`example_st`]: the two-parameter noncommuting 2×2 family, its
//!   transfer matrices and phase classification.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod example_st;
pub mod green;
pub mod linalg;
pub mod operator;

pub use error::{Error, Result};
pub use num_complex::Complex64;
