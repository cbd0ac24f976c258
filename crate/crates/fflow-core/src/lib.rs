//! Estimation of Fisher information (FI) directly from finite samples.
//!
//! The crate provides:
//!
//! - a linear-Fisher-information (LFI) estimator with bias correction and an
//!   analytical error model ([`lfi`]),
//! - a maximization algorithm that embeds data through random nonlinear maps
//!   of growing dimension until the LFI plateaus near the true FI ([`embed`]),
//! - a minimal feedforward regression network with Adam/MSE, per-layer
//!   activation capture and epoch checkpoints ([`nn`]),
//! - synthetic dataset generators and binary dataset/image containers
//!   ([`datagen`], [`container`]),
//! - layerwise FI-flow analysis across training checkpoints ([`flow`]),
//! - a CRLB-based, validation-free early-stopping criterion ([`earlystop`]).
//!
//! Core matrix statistics in [`stats`] are generic over the scalar type via
//! [`scalar::Scalar`]; everything downstream of the FI path is pinned to
//! `f64` through the [`Real`], [`Matrix`] and [`Vector`] aliases below so
//! that bias-correction terms are not swamped by accumulation error.

pub mod container;
pub mod datagen;
pub mod earlystop;
pub mod embed;
pub mod error;
pub mod flow;
pub mod lfi;
pub mod nn;
pub mod scalar;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};

/// Scalar type used on the FI estimation path.
pub type Real = f64;
/// Dense dynamically sized matrix over [`Real`].
pub type Matrix = nalgebra::DMatrix<Real>;
/// Dense column vector over [`Real`].
pub type Vector = nalgebra::DVector<Real>;

/// Default relative eigenvalue cutoff of the PCA pseudoinverse.
pub const DEFAULT_REL_TOL: Real = 1e-10;
