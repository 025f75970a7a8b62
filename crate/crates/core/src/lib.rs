//! Radial spectral simulator for the defocusing energy-critical Hartree
//! equation `i u_t + Laplacian u = (|x|^{-gamma} * |u|^2) u` in dimension
//! `n >= 5`, together with executable versions of the conservation,
//! local-mass, Morawetz and interval-cascade quantities used to study it.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bessel;
pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod intervals;
pub mod io;
pub mod nonlinearity;
pub mod oracles;
pub mod quadrature;
pub mod radial;

pub use error::{Error, Result};
pub use radial::{FieldState, RadialGrid};
