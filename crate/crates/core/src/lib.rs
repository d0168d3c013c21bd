//! Semi-supervised visual-semantic embeddings for zero- and few-shot
//! recognition, on a small dense reverse-mode differentiation core.

pub mod dataio;
pub mod error;
pub mod eval;
pub mod model;
pub mod numcore;
pub mod par;
pub mod trainer;

pub use error::{Error, Result};
