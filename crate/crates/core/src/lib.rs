//! Soft-threshold-attention audio-visual convolution-recurrent speech
//! enhancement (AVCRN+STA).
//!
//! - [`dsp`]: STFT, log-Mel front end, inversion and SNR mixing
//! - [`sta`]: the soft-threshold attention gate
//! - [`model`]: audio/video encoders, per-level fusion, LSTM bottleneck and
//!   gated decoder, plus checkpoints
//! - [`datagen`]: deterministic synthetic audio-visual corpus
//! - [`metrics`]: STOI, SI-SDR and corpus evaluation
//! - [`train`]: training loop, enhancement and config files

pub mod config;
pub mod datagen;
pub mod dsp;
mod error;
pub mod gradsuite;
pub mod metrics;
pub mod model;
pub mod sta;
pub mod train;

pub use error::{Error, Result};
