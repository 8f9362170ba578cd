//! Scale learning for tabular anomaly detection.
//!
//! The pipeline: draw random feature subspaces per instance, push each
//! subspace through a frozen random affine map into a fixed-width
//! representation, label every representation with a transformation-scale
//! value derived from subspace size and feature weights, and train a small
//! shared ranking head to predict the scale distribution. The divergence
//! between predicted and labeled distributions is the training loss and,
//! on fresh draws, the anomaly score: inliers dominate what the head
//! learns, so anomalous rows keep disagreeing with their labels.
//!
//! The numeric core (`nn`) is generic over [`Scalar`] (f32/f64); the
//! pipeline itself runs in f64 through the [`Real`] alias.

pub mod data;
pub mod eval;
pub mod model;
pub mod nn;
pub mod rng;
mod scalar;
pub mod supervision;
pub mod synthetic;
pub mod theory;

pub use scalar::Scalar;

/// Scalar type the pipeline runs at.
pub type Real = f64;

/// Matrix specialization the pipeline modules exchange.
pub type RealMatrix = nn::Matrix<Real>;
