//! Unsupervised object co-segmentation driven by human-object interaction:
//! a fully connected CRF auto-encoder clusters region proposals across
//! images using appearance similarity and interaction-feature similarity,
//! then selects one foreground region per image per cluster.

pub mod cli;
pub mod core;
pub mod crf;
pub mod error;
pub mod eval;
pub mod hoi;
pub mod oracle;
pub mod par;
pub mod synth;

pub use error::{Error, Result};
