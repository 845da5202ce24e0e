use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::{Waveform, CHUNK_FRAMES, HOP, SAMPLE_RATE};
use crate::error::{invalid, Result};

/// Audio samples per video frame (40 ms, 25 fps).
pub const VIDEO_FRAME_SAMPLES: usize = 640;
/// Video frames per 20-frame log-Mel chunk.
pub const FRAMES_PER_SEGMENT: usize = 5;
/// Standard deviation of the per-frame embedding jitter.
pub const VIDEO_JITTER: f64 = 0.05;
pub const DEFAULT_VIDEO_DIM: usize = 64;

const N_FEATURES: usize = 8;
const PROJECTION_SEED: u64 = 0xfeed_face_cafe_beef;

/// Per-frame visual embeddings, row-major `[n_frames × dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTrack {
    dim: usize,
    data: Vec<f32>,
}

/// `FRAMES_PER_SEGMENT` consecutive embeddings aligned to one log-Mel chunk,
/// row-major `[5 × dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSegment<'a> {
    dim: usize,
    rows: &'a [f32],
}

impl VideoSegment<'_> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        self.rows
    }
}

impl VideoTrack {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(invalid(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("video embeddings hold non-finite values"));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn n_segments(&self) -> usize {
        self.n_frames() / FRAMES_PER_SEGMENT
    }

    pub fn segment(&self, i: usize) -> Option<VideoSegment<'_>> {
        let len = FRAMES_PER_SEGMENT * self.dim;
        self.data.get(i * len..(i + 1) * len).map(|rows| VideoSegment { dim: self.dim, rows })
    }

    pub fn segments(&self) -> impl Iterator<Item = VideoSegment<'_>> {
        (0..self.n_segments()).map(|i| self.segment(i).expect("in range"))
    }
}

/// Number of video frames aligned with an utterance of `len` samples: five
/// per complete log-Mel chunk.
pub fn video_frames_for(len: usize) -> usize {
    len.div_ceil(HOP) / CHUNK_FRAMES * FRAMES_PER_SEGMENT
}

/// Descriptors of one 40 ms frame: log energy, normalized F0, energy
/// change, and the energy fractions of five bands (0–0.5–1–2–4–8 kHz).
pub(crate) fn frame_features(frame: &[f64], prev_log_energy: f64) -> [f64; N_FEATURES] {
    let energy = frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64;
    let log_e = (energy + 1e-8).ln();
    let mut f = [0.0; N_FEATURES];
    f[0] = log_e / 5.0;
    f[1] = estimate_f0(frame).map_or(0.0, |hz| hz / 300.0);
    f[2] = log_e - prev_log_energy;
    let bands = band_fractions(frame);
    f[3..].copy_from_slice(&bands);
    f
}

/// Autocorrelation pitch estimate over 80–300 Hz; `None` when unvoiced.
fn estimate_f0(frame: &[f64]) -> Option<f64> {
    let fs = SAMPLE_RATE as usize;
    let r0: f64 = frame.iter().map(|v| v * v).sum();
    if r0 < 1e-9 {
        return None;
    }
    let (lo, hi) = (fs / 300, fs / 80);
    let (lag, r) = (lo..=hi)
        .map(|lag| {
            let r: f64 = frame.iter().zip(&frame[lag..]).map(|(a, b)| a * b).sum();
            (lag, r / r0)
        })
        .fold((0, f64::MIN), |best, c| if c.1 > best.1 { c } else { best });
    (r > 0.3).then(|| fs as f64 / lag as f64)
}

fn band_fractions(frame: &[f64]) -> [f64; 5] {
    let n = frame.len();
    let mut buf: Vec<Complex64> = frame
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let w = 0.5 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos());
            Complex64::new(v * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let edges_hz = [0.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0 + 1.0];
    let bin_hz = SAMPLE_RATE as f64 / n as f64;
    let mut e = [0.0; 5];
    for (k, c) in buf[..=n / 2].iter().enumerate() {
        let f = k as f64 * bin_hz;
        if let Some(b) = edges_hz.windows(2).position(|w| f >= w[0] && f < w[1]) {
            e[b] += c.norm_sqr();
        }
    }
    let total: f64 = e.iter().sum();
    if total > 1e-12 {
        e.iter_mut().for_each(|v| *v /= total);
    } else {
        e = [0.0; 5];
    }
    e
}

/// Fixed projection `[dim × N_FEATURES]` and bias `[dim]`, identical for
/// every utterance.
fn projection(dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let scale = (N_FEATURES as f64).sqrt().recip();
    let mut draw = |k: f64| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        k * z
    };
    let p = (0..dim * N_FEATURES).map(|_| draw(scale)).collect();
    let b = (0..dim).map(|_| draw(0.1)).collect();
    (p, b)
}

/// Synthetic visual stream for `clean`: per 40 ms frame, a fixed random
/// projection of the frame's acoustic descriptors plus bias and Gaussian
/// jitter (σ = [`VIDEO_JITTER`], drawn from `seed`). Depends on the clean
/// signal only.
pub fn synth_video(clean: &Waveform, dim: usize, seed: u64) -> Result<VideoTrack> {
    if dim == 0 {
        return Err(invalid("video dimension must be positive"));
    }
    let n_frames = video_frames_for(clean.len());
    let (proj, bias) = projection(dim);
    let jitter = Normal::new(0.0, VIDEO_JITTER).expect("valid sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = clean.samples();
    let mut data = Vec::with_capacity(n_frames * dim);
    let mut prev = (1e-8f64).ln();
    let mut frame = vec![0.0; VIDEO_FRAME_SAMPLES];
    for i in 0..n_frames {
        let start = i * VIDEO_FRAME_SAMPLES;
        let avail = s.len().saturating_sub(start).min(VIDEO_FRAME_SAMPLES);
        frame.fill(0.0);
        frame[..avail].copy_from_slice(&s[start..start + avail]);
        let f = frame_features(&frame, prev);
        prev = f[0] * 5.0;
        for d in 0..dim {
            let row = &proj[d * N_FEATURES..(d + 1) * N_FEATURES];
            let v: f64 = row.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() + bias[d];
            data.push((v + jitter.sample(&mut rng)) as f32);
        }
    }
    VideoTrack::new(dim, data)
}
