//! Angular dispersion of class feature vectors on the unit hypersphere.
//!
//! The crate provides three dispersion objectives (angular diversity,
//! pairwise orthogonality and centroid dispersion) with analytic gradients,
//! a projected AdamW optimizer for test-time tuning and best-packing, the
//! calibration metrics used to judge the result, and a synthetic zero-shot
//! classification simulator that ties them together.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod calibration;
pub mod error;
pub mod gradcheck;
pub mod objectives;
pub mod optim;
pub mod sim;
pub mod sphere;
pub mod svg;
pub mod tammes;

pub use error::{Error, Result};
pub use objectives::{CombinedLossConfig, MinMode, ObjectiveEval, Regularizer, TptMode};
pub use sphere::{FeatureMatrix, NormalizedFeatureMatrix};
