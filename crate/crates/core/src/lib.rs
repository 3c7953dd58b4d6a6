//! Continuous polynomial trajectory prediction.
//!
//! A GRU encoder-attention-decoder predicts polynomial coefficients (and
//! their standard deviations) describing where a road agent will be as a
//! function of time. Training samples the supervised offsets at random
//! ("random anchoring"); a fixed-offset coordinate head is available as a
//! baseline.

pub mod anchoring;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod poly;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
