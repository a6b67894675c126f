//! Speech-driven co-speech gesture generation with salient-posture emphasis.

pub mod body;
pub mod config;
pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod face;
pub mod nn;
pub mod saliency;
pub mod training;

pub use error::{Error, Result};
