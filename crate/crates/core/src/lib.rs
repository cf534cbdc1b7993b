//! Sparse inference for linear latent non-Gaussian models.
//!
//! A model couples observations `Y = A W + X β + ε_Y` to a latent field
//! defined through a sparse operator, `K(θ) W = ε_W`, where both noise
//! vectors are normal mean-variance mixtures over generalized inverse
//! Gaussian variables. Parameters are estimated by stochastic-gradient MAP
//! with Rao-Blackwellized Gibbs gradients and explored with stochastic
//! gradient Langevin dynamics.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod cholesky;
pub mod distributions;
pub mod error;
pub mod gibbs;
pub mod gradients;
pub mod inference;
pub mod mesh;
pub mod model;
pub mod operators;
pub mod prediction;
pub mod quadrature;
pub mod sparse;
pub mod special;

pub use error::{Error, Result};
