//! Waveform / time-frequency conversions and SNR mixing.
//!
//! Fixed front-end: 16 kHz mono, 640-sample Hann frames with a 160-sample
//! hop (n_fft = 640, 321 bins), 80 Mel bands over 0–8 kHz, 80×20 chunks.

mod mel;
mod mix;
mod stft;
pub mod wav;

pub use mel::{
    chunk, log_mel, mel_filterbank, mel_pseudo_inverse, mel_to_hz, hz_to_mel, LogMelChunk,
    MelSpectrogram, LOG_FLOOR,
};
pub use mix::{mix_at_snr, snr_db, Mixture};
pub use stft::{hann_window, istft, stft, ComplexSpectrogram};

use crate::error::{invalid, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LEN: usize = 640;
pub const HOP: usize = 160;
pub const N_FFT: usize = FRAME_LEN;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const N_MELS: usize = 80;
pub const CHUNK_FRAMES: usize = 20;

/// Mono 16 kHz audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples })
    }

    pub fn silence(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Mean square.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|v| v * gain).collect(),
        }
    }
}
