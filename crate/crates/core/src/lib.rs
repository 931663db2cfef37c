//! Laboratory for training small recurrent networks on delayed
//! classification and dissecting the memories they form. The crate covers
//! task generation, curricula, training with checkpoint archives, slow-point
//! analysis of the hidden dynamics, backtracking of those points through
//! training history, and a speed penalty for reshaping them.
//!
//! All numerics are generic over the scalar type via [`real::Real`];
//! experiments run at [`Scalar`] precision.

pub mod backtrack;
pub mod curriculum;
pub mod error;
pub mod linalg;
pub mod nncore;
pub mod real;
pub mod rng;
pub mod slowpoint;
pub mod speedreg;
pub mod stats;
pub mod taskgen;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;

/// Precision the experiment pipelines run at.
pub type Scalar = f64;
