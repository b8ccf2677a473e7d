//! Saliency learning for text classifiers.
//!
//! Trains CNN sentence classifiers whose input and intermediate gradients
//! are pushed to be positive on annotated rationale tokens, and measures how
//! well the learned saliency lines up with those annotations.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command line
//! and report rendering live in the companion `saliency` crate.
//!
//! # Feature flags
//! - **`std`**: links the standard library.
//! - **`parallel`**: per-example work inside a batch or evaluation runs on
//!   rayon; results are reduced in example order, so outputs are identical to
//!   the sequential build.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod eval;
pub mod loss;
pub mod model;
pub mod train;

mod error;
mod par;

pub use error::Error;
