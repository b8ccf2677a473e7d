//! File formats, reports and the command line for `saliency-core`.
//!
//! - [`dataset`]: newline-delimited JSON examples with rationale indices.
//! - [`embeddings`]: whitespace-separated pretrained vectors.
//! - [`checkpoint`]: text header plus little-endian `f64` payload.
//! - [`config`]: `key = value` run configuration with flag overrides.
//! - [`report`]: JSON records and HTML saliency heatmaps.
//! - [`cli`]: the `saliency` binary.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod report;

mod error;

pub use error::{Error, Result};
