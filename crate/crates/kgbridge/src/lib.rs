//! File formats, pipelines and the command-line driver around
//! `kgbridge-core`.
//!
//! - [`tsv`]: node, triple, split and import files
//! - [`cache`]: the binary embedding cache
//! - [`checkpoint`]: the model container
//! - [`config`], [`manifest`], [`report`]: run configuration and outputs
//! - [`bench`]: the planted-graph benchmark
//! - [`rag`]: retrieval for prompt assembly
//! - [`cli`]: the `kgbridge` binary

pub mod bench;
mod binary;
pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod manifest;
pub mod rag;
pub mod report;
pub mod tsv;

pub use error::{Error, Result};
pub use kgbridge_core as core;
