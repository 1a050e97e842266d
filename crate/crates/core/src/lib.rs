//! Malliavin calculus on finite-dimensional Gaussian space.
//!
//! Random variables are finite Wiener-chaos expansions in the normalized
//! Hermite basis, so gradient, divergence and every function of the number
//! operator act exactly on coefficients. On top of that algebra sit the
//! divergence-free/exact decomposition of vector fields, the skew-form
//! representation of divergence-free fields, and a flow engine that
//! integrates vector fields and tracks Radon–Nikodym densities of the
//! transported Gaussian measure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chaos;
pub mod error;
pub mod flow;
pub mod hermite;
pub mod hodge;
pub mod malliavin;
pub mod montecarlo;
pub mod operator;
pub mod quadrature;
pub mod random;
pub mod serial;
pub mod space;
pub mod verify;

pub use chaos::{field_pair, linear_combine, multiply, ChaosField, ChaosMatrix, ChaosPoly, TruncationPolicy};
pub use error::{Error, Result};
pub use hodge::{antisym_representation, hodge_decompose, HodgeDecomposition};
pub use malliavin::{
    conditional_project, conditional_project_field, divergence, gradient, jacobian, spectral_apply,
    spectral_apply_field, NormMode, SpectralFunction,
};
pub use montecarlo::{sample_gaussian, Estimate};
pub use operator::{matrix_apply, matrix_trace, matrix_transpose, op_divergence};
pub use space::{GaussianSpace, MultiIndex};
