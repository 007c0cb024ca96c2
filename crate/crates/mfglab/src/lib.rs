//! Numerical laboratory for linear-quadratic mean-field games on truncated
//! Hilbert spaces: equilibrium solvers, Lipschitz stability constants and a
//! Lipschitz-certified neural operator for the rules-to-equilibrium map.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod cli;
pub mod error;
pub mod learn;
pub mod mfg_solver;
pub mod model;
pub mod noise;
pub mod operator_core;
pub mod output;
pub mod riccati;
pub mod rno;
pub mod sampling;
pub mod scalar;
pub mod stability;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = operator_core::Matrix<f64>;
pub type Matrix32 = operator_core::Matrix<f32>;
pub type Tensor64 = operator_core::Tensor3<f64>;
pub type Tensor32 = operator_core::Tensor3<f32>;
pub type MfgModel64 = model::MfgModel<f64>;
pub type MfgModel32 = model::MfgModel<f32>;
