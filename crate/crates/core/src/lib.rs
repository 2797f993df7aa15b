//! Domain-invariant structure extraction for unsupervised domain adaptation of
//! semantic segmentation.
//!
//! Images are split into a spatial *structure code* shared across domains and an
//! 8-d *texture code* owned by each domain. A pixel classifier reads the structure
//! code only; swapping texture codes translates images between domains and lets
//! source labels supervise target-looking images.

pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod plot;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::{Domain, ImageBatch, LabelMap, Split, IGNORE_LABEL, TEXTURE_DIM};
