use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Waveform, FRAME_LEN, HOP, N_BINS, N_FFT};
use crate::error::{invalid, Error, Result};

/// Periodic Hann window: `w[k] = 0.5·(1 − cos(2πk/n))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("window length must be at least 1"));
    }
    Ok((0..n)
        .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos()))
        .collect())
}

fn window() -> &'static [f64] {
    static W: OnceLock<Vec<f64>> = OnceLock::new();
    W.get_or_init(|| hann_window(FRAME_LEN).unwrap())
}

fn plans() -> &'static (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    static P: OnceLock<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)> = OnceLock::new();
    P.get_or_init(|| {
        let mut planner = FftPlanner::new();
        (planner.plan_fft_forward(N_FFT), planner.plan_fft_inverse(N_FFT))
    })
}

/// One-sided STFT, `N_BINS` bins per frame, stored frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    data: Vec<Complex64>,
    n_frames: usize,
    signal_len: usize,
}

impl ComplexSpectrogram {
    /// Builds a spectrogram from frame-major bins for a signal of
    /// `signal_len` samples; the frame count must be `ceil(signal_len / HOP)`.
    pub fn from_frames(data: Vec<Complex64>, signal_len: usize) -> Result<Self> {
        let n_frames = signal_len.div_ceil(HOP);
        if data.len() != n_frames * N_BINS {
            return Err(invalid(format!(
                "{} bins do not form {n_frames} frames of {N_BINS}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            n_frames,
            signal_len,
        })
    }

    pub fn n_bins(&self) -> usize {
        N_BINS
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn frame_len(&self) -> usize {
        FRAME_LEN
    }

    pub fn hop(&self) -> usize {
        HOP
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn at(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[frame * N_BINS + bin]
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * N_BINS..(t + 1) * N_BINS]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        &mut self.data[t * N_BINS..(t + 1) * N_BINS]
    }

    pub fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().map(|c| c.norm())
    }
}

/// Index into a signal of length `len` with symmetric reflection about the
/// end samples (the end samples themselves are not repeated).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= len as isize {
        r = period - r;
    }
    r as usize
}

/// Centered STFT with reflection padding: frame `t` is centred on sample
/// `t·HOP`, giving `ceil(len / HOP)` frames.
pub fn stft(w: &Waveform) -> Result<ComplexSpectrogram> {
    let x = w.samples();
    if x.is_empty() {
        return Err(invalid("stft of an empty waveform"));
    }
    let n_frames = x.len().div_ceil(HOP);
    let win = window();
    let (fwd, _) = plans();
    let half = (FRAME_LEN / 2) as isize;
    let mut buf = vec![Complex64::default(); N_FFT];
    let mut scratch = vec![Complex64::default(); fwd.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(n_frames * N_BINS);
    for t in 0..n_frames {
        let start = (t * HOP) as isize - half;
        for (k, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(x[reflect(start + k as isize, x.len())] * win[k], 0.0);
        }
        fwd.process_with_scratch(&mut buf, &mut scratch);
        data.extend_from_slice(&buf[..N_BINS]);
    }
    Ok(ComplexSpectrogram {
        data,
        n_frames,
        signal_len: x.len(),
    })
}

/// Weighted overlap-add inverse of [`stft`] (synthesis with the same window,
/// normalized by the summed squared window).
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let len = s.signal_len;
    let win = window();
    let (_, inv) = plans();
    let half = FRAME_LEN / 2;
    let padded = len + FRAME_LEN;
    let mut acc = vec![0.0; padded];
    let mut norm = vec![0.0; padded];
    let mut buf = vec![Complex64::default(); N_FFT];
    let mut scratch = vec![Complex64::default(); inv.get_inplace_scratch_len()];
    for t in 0..s.n_frames {
        let frame = s.frame(t);
        buf[..N_BINS].copy_from_slice(frame);
        for k in N_BINS..N_FFT {
            buf[k] = frame[N_FFT - k].conj();
        }
        // the imaginary parts of DC and Nyquist do not survive a real inverse
        buf[0].im = 0.0;
        buf[N_FFT / 2].im = 0.0;
        inv.process_with_scratch(&mut buf, &mut scratch);
        let start = t * HOP;
        for k in 0..FRAME_LEN {
            acc[start + k] += buf[k].re / N_FFT as f64 * win[k];
            norm[start + k] += win[k] * win[k];
        }
    }
    let mut out = Vec::with_capacity(len);
    for n in half..half + len {
        if norm[n] < 1e-10 {
            return Err(Error::NumericDegenerate(format!(
                "window normalization vanishes at sample {}",
                n - half
            )));
        }
        out.push(acc[n] / norm[n]);
    }
    Waveform::new(out)
}
