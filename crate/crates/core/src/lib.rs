//! Explicit resolvent of a two-habitat transmission operator, numerical
//! certification of its sector estimate, and semigroup evolution by contour
//! quadrature, cross-checked against a direct finite-difference model.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod banded;
pub mod calculus;
pub mod error;
pub mod operator;
pub mod oracle;
pub mod resolvent;
pub mod sector;
pub mod suites;
pub mod sweep;

pub use error::{Error, Result};
pub use num_complex::Complex64;
