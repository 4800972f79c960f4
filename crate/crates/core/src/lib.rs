//! Spectral transform network for non-rigid 3D shape analysis.
//!
//! The pipeline runs raw per-point descriptors (spectral or local geometric)
//! through area-weighted second-order pooling, a learnable mixture-of-powers
//! transform of the pooled matrix spectrum, and a linear metric-learning
//! head trained with triplet or cross-entropy losses.

// `!(x > 0.0)` guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod descriptors;
pub mod error;
pub mod evaluation;
pub mod head;
pub mod lb;
pub mod pipeline;
pub mod pooling;
pub mod rng;
pub mod shape_io;
pub mod spdmt;
pub mod stats;
pub mod store;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
