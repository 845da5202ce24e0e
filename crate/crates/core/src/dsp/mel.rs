use std::sync::OnceLock;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;

use super::{istft, ComplexSpectrogram, Waveform, CHUNK_FRAMES, N_BINS, N_FFT, N_MELS, SAMPLE_RATE};
use crate::error::{invalid, Result};

/// Additive floor inside the log of [`log_mel`].
pub const LOG_FLOOR: f64 = 1e-8;

const F_MAX: f64 = 8000.0;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

fn build_filterbank() -> Vec<f64> {
    let top = hz_to_mel(F_MAX);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
    let mut fb = vec![0.0; N_MELS * N_BINS];
    for m in 0..N_MELS {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..N_BINS {
            let f = b as f64 * bin_hz;
            let w = ((f - lo) / (center - lo)).min((hi - f) / (hi - center));
            fb[m * N_BINS + b] = w.max(0.0);
        }
    }
    fb
}

/// Triangular Mel filterbank, `N_MELS × N_BINS` row-major. Filter centres
/// are uniformly spaced on `m = 2595·log10(1 + f/700)` over 0–8 kHz, each
/// triangle peaking at 1.
pub fn mel_filterbank() -> &'static [f64] {
    static FB: OnceLock<Vec<f64>> = OnceLock::new();
    FB.get_or_init(build_filterbank)
}

/// Moore–Penrose pseudo-inverse of the filterbank, `N_BINS × N_MELS`.
fn filterbank_pinv() -> &'static [f64] {
    static PINV: OnceLock<Vec<f64>> = OnceLock::new();
    PINV.get_or_init(|| {
        let fb = DMatrix::from_row_slice(N_MELS, N_BINS, mel_filterbank());
        let pinv = fb
            .pseudo_inverse(1e-12)
            .expect("filterbank SVD converges");
        let mut out = vec![0.0; N_BINS * N_MELS];
        for r in 0..N_BINS {
            for c in 0..N_MELS {
                out[r * N_MELS + c] = pinv[(r, c)];
            }
        }
        out
    })
}

/// Log-Mel magnitudes, band-major (`N_MELS × frames`).
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    frames: usize,
    data: Vec<f64>,
}

impl MelSpectrogram {
    pub fn from_vec(frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != N_MELS * frames {
            return Err(invalid(format!(
                "{} values do not form {N_MELS}×{frames}",
                data.len()
            )));
        }
        Ok(Self { frames, data })
    }

    pub fn n_bands(&self) -> usize {
        N_MELS
    }

    pub fn n_frames(&self) -> usize {
        self.frames
    }

    pub fn at(&self, band: usize, frame: usize) -> f64 {
        self.data[band * self.frames + frame]
    }

    pub fn set(&mut self, band: usize, frame: usize, v: f64) {
        self.data[band * self.frames + frame] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Frames `[start, start + CHUNK_FRAMES)` as a chunk.
    pub fn chunk_at(&self, start: usize) -> Result<LogMelChunk> {
        if start + CHUNK_FRAMES > self.frames {
            return Err(invalid(format!(
                "chunk at frame {start} overruns {} frames",
                self.frames
            )));
        }
        let mut data = Vec::with_capacity(N_MELS * CHUNK_FRAMES);
        for band in 0..N_MELS {
            let row = band * self.frames + start;
            data.extend_from_slice(&self.data[row..row + CHUNK_FRAMES]);
        }
        Ok(LogMelChunk { data })
    }

    /// Overwrites frames `[start, start + CHUNK_FRAMES)` with `c`.
    pub fn write_chunk(&mut self, start: usize, c: &LogMelChunk) -> Result<()> {
        if start + CHUNK_FRAMES > self.frames {
            return Err(invalid(format!(
                "chunk at frame {start} overruns {} frames",
                self.frames
            )));
        }
        for band in 0..N_MELS {
            let row = band * self.frames + start;
            self.data[row..row + CHUNK_FRAMES]
                .copy_from_slice(&c.data[band * CHUNK_FRAMES..(band + 1) * CHUNK_FRAMES]);
        }
        Ok(())
    }
}

/// One `N_MELS × CHUNK_FRAMES` (80×20) log-Mel slice, band-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelChunk {
    data: Vec<f64>,
}

impl LogMelChunk {
    pub const LEN: usize = N_MELS * CHUNK_FRAMES;

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.len() != Self::LEN {
            return Err(invalid(format!(
                "log-Mel chunk needs {} values, got {}",
                Self::LEN,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("log-Mel chunk holds non-finite values"));
        }
        Ok(Self { data })
    }

    pub fn at(&self, band: usize, frame: usize) -> f64 {
        self.data[band * CHUNK_FRAMES + frame]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_spectrogram(&self) -> MelSpectrogram {
        MelSpectrogram {
            frames: CHUNK_FRAMES,
            data: self.data.clone(),
        }
    }
}

/// `ln(filterbank · |s| + LOG_FLOOR)`.
pub fn log_mel(s: &ComplexSpectrogram) -> Result<MelSpectrogram> {
    if s.n_bins() != N_BINS {
        return Err(invalid(format!(
            "log_mel expects {N_BINS} frequency rows, got {}",
            s.n_bins()
        )));
    }
    let fb = mel_filterbank();
    let frames = s.n_frames();
    let mut data = vec![0.0; N_MELS * frames];
    let mut mag = vec![0.0; N_BINS];
    for t in 0..frames {
        for (m, c) in mag.iter_mut().zip(s.frame(t)) {
            *m = c.norm();
        }
        for band in 0..N_MELS {
            let row = &fb[band * N_BINS..(band + 1) * N_BINS];
            let e: f64 = row.iter().zip(&mag).map(|(w, m)| w * m).sum();
            data[band * frames + t] = (e + LOG_FLOOR).ln();
        }
    }
    Ok(MelSpectrogram { frames, data })
}

/// Non-overlapping 20-frame slices; a trailing remainder is dropped.
pub fn chunk(m: &MelSpectrogram) -> Vec<LogMelChunk> {
    (0..m.frames / CHUNK_FRAMES)
        .map(|i| m.chunk_at(i * CHUNK_FRAMES).expect("in range"))
        .collect()
}

/// Approximate waveform for a log-Mel spectrogram: linear magnitudes from
/// the filterbank pseudo-inverse (floor removed, negatives clamped to 0),
/// combined with the phase of `phase`, then inverted with [`istft`].
pub fn mel_pseudo_inverse(m: &MelSpectrogram, phase: &ComplexSpectrogram) -> Result<Waveform> {
    if m.frames != phase.n_frames() {
        return Err(invalid(format!(
            "log-Mel has {} frames but phase has {}",
            m.frames,
            phase.n_frames()
        )));
    }
    let pinv = filterbank_pinv();
    let mut out = phase.clone();
    let mut energy = vec![0.0; N_MELS];
    for t in 0..m.frames {
        for (band, e) in energy.iter_mut().enumerate() {
            *e = (m.at(band, t).exp() - LOG_FLOOR).max(0.0);
        }
        for (bin, c) in out.frame_mut(t).iter_mut().enumerate() {
            let row = &pinv[bin * N_MELS..(bin + 1) * N_MELS];
            let mag = row.iter().zip(&energy).map(|(p, e)| p * e).sum::<f64>().max(0.0);
            let norm = c.norm();
            *c = if norm > 0.0 {
                *c * (mag / norm)
            } else {
                Complex64::new(mag, 0.0)
            };
        }
    }
    istft(&out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filterbank_shape_and_support() {
        let fb = mel_filterbank();
        assert_eq!(fb.len(), 80 * 321);
        assert!(fb.iter().all(|&w| w >= 0.0));
        for m in 0..N_MELS {
            let row = &fb[m * N_BINS..(m + 1) * N_BINS];
            assert!(row.iter().any(|&w| w > 0.0), "filter {m} is empty");
        }
        for b in 0..N_BINS {
            let col: f64 = (0..N_MELS).map(|m| fb[m * N_BINS + b]).sum();
            assert!(col <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn mel_scale_round_trip() {
        for f in [0.0, 100.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn chunk_counts() {
        for (frames, n) in [(60, 3), (20, 1), (39, 1), (19, 0)] {
            let m = MelSpectrogram::from_vec(frames, vec![0.0; 80 * frames]).unwrap();
            assert_eq!(chunk(&m).len(), n, "T = {frames}");
        }
    }

    #[test]
    fn single_chunk_equals_input() {
        let data: Vec<f64> = (0..1600).map(|i| i as f64).collect();
        let m = MelSpectrogram::from_vec(20, data.clone()).unwrap();
        let c = chunk(&m);
        assert_eq!(c[0].data(), data.as_slice());
    }

    #[test]
    fn chunk_rejects_bad_length() {
        assert!(LogMelChunk::from_vec(vec![0.0; 100]).is_err());
        assert!(LogMelChunk::from_vec(vec![f64::NAN; 1600]).is_err());
    }

    #[test]
    fn inverse_needs_matching_frames() {
        let m = MelSpectrogram::from_vec(20, vec![LOG_FLOOR.ln(); 1600]).unwrap();
        let phase = super::super::stft(&Waveform::silence(1600)).unwrap();
        assert!(mel_pseudo_inverse(&m, &phase).is_err());
    }
}
