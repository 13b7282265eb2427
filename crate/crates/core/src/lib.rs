//! Relation-conditioned bridging of frozen unimodal embeddings.
//!
//! The crate is `no_std` (with `alloc`): graph model, encoders, autodiff,
//! bridge model, trainers, baselines and metrics are pure computation. File
//! formats and the command-line driver live in the `kgbridge` crate.
#![no_std]
// `!(x > 0.0)` rejects NaN together with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod adam;
pub mod bridge;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod index;
pub mod kge;
pub mod loss;
pub mod metrics;
pub mod negatives;
pub mod nn;
pub mod params;
pub mod planted;
pub mod prompt;
pub mod real;
pub mod rng;
pub mod split;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;
