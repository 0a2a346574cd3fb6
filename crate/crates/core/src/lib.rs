//! Library for building two-label textual-entailment datasets out of news
//! corpora, probing how classifiers degrade as training data shrinks, and
//! running a small logistic-regression reference model end to end.
//!
//! The numeric core is generic over the scalar type through [`Scalar`]
//! (implemented for `f32` and `f64`); the aliases below fix the default
//! precision used by the command-line pipeline.

pub mod annindex;
pub mod cluster;
pub mod embed;
pub mod error;
pub mod ingest;
pub mod pairgen;
pub mod scalar;
pub mod textproc;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar used by the shipped pipeline.
pub type Real = f64;

/// Sparse vector at default precision.
pub type SparseVec = textproc::SparseVector<Real>;
