//! Depth-based person re-identification from video.
//!
//! The pipeline turns raw millimetre depth frames into a grayscale person
//! representation, embeds each frame with a small CNN, models short
//! temporal context with an LSTM, and weights per-frame predictions with a
//! stochastic Bernoulli-sigmoid attention unit trained by REINFORCE.
//! Pre-trained embeddings can be transferred with per-group learning-rate
//! multipliers, and models are scored with CMC curves and nAUC.

pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod numeric;
pub mod preproc;
pub mod sequence;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};
