use std::f64::consts::PI;
use std::sync::OnceLock;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::resample::resample;
use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{invalid, Result};

const FS: usize = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const N_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per intermediate-intelligibility segment (384 ms).
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Shortest accepted input: one 384 ms segment.
pub const STOI_MIN_SAMPLES: usize = SAMPLE_RATE as usize * 384 / 1000;

/// Symmetric Hann window without its zero end points (MATLAB `hanning`).
fn analysis_window() -> &'static [f64] {
    static W: OnceLock<Vec<f64>> = OnceLock::new();
    W.get_or_init(|| {
        (1..=FRAME)
            .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / (FRAME + 1) as f64).cos()))
            .collect()
    })
}

/// One-third octave band edges as FFT bin ranges `[lo, hi)`.
pub(crate) fn third_octave_bands() -> [(usize, usize); N_BANDS] {
    let bin_hz = FS as f64 / NFFT as f64;
    let nearest = |f: f64| {
        (0..=NFFT / 2)
            .min_by(|&a, &b| {
                let da = (a as f64 * bin_hz - f).powi(2);
                let db = (b as f64 * bin_hz - f).powi(2);
                da.total_cmp(&db)
            })
            .unwrap()
    };
    std::array::from_fn(|k| {
        let k = k as f64;
        let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
        let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
        (nearest(lo), nearest(hi))
    })
}

/// Frame starts used for both silence detection and analysis.
fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

/// Drops frames whose clean energy is more than 40 dB below the loudest
/// clean frame and overlap-adds the survivors of both signals.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = analysis_window();
    let windowed = |s: &[f64], i: usize| -> Vec<f64> {
        s[i..i + FRAME].iter().zip(w).map(|(a, b)| a * b).collect()
    };
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&i| {
            let norm = windowed(x, i).iter().map(|v| v * v).sum::<f64>().sqrt();
            20.0 * (norm + EPS).log10()
        })
        .collect();
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| max - DYN_RANGE_DB - e < 0.0)
        .map(|(&i, _)| i)
        .collect();
    let out_len = kept.len().checked_sub(1).map_or(0, |n| n * HOP + FRAME);
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (m, &i) in kept.iter().enumerate() {
        let (fx, fy) = (windowed(x, i), windowed(y, i));
        for k in 0..FRAME {
            xs[m * HOP + k] += fx[k];
            ys[m * HOP + k] += fy[k];
        }
    }
    (xs, ys)
}

/// Third-octave band envelopes, `[band][frame]`.
fn band_envelopes(s: &[f64]) -> Vec<Vec<f64>> {
    let w = analysis_window();
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    let bands = third_octave_bands();
    let mut out = vec![Vec::new(); N_BANDS];
    let mut buf = vec![Complex64::default(); NFFT];
    for i in frame_starts(s.len()) {
        buf.fill(Complex64::default());
        for k in 0..FRAME {
            buf[k] = Complex64::new(s[i + k] * w[k], 0.0);
        }
        fft.process(&mut buf);
        for (band, &(lo, hi)) in out.iter_mut().zip(&bands) {
            band.push(buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt());
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Normalizes to zero mean and unit norm (up to `EPS`).
fn standardize(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|a| *a -= mean);
    let n = norm(v) + EPS;
    v.iter_mut().for_each(|a| *a /= n);
}

/// Classic short-time objective intelligibility of `degraded` against
/// `clean`.
///
/// Both signals are resampled to 10 kHz, frames where the clean signal is
/// more than 40 dB below its peak frame are dropped, and the score is the
/// mean correlation between clipped, normalized third-octave envelopes over
/// 384 ms segments.
pub fn stoi(clean: &Waveform, degraded: &Waveform) -> Result<f64> {
    if clean.len() != degraded.len() {
        return Err(invalid(format!(
            "stoi needs equal lengths, got {} and {}",
            clean.len(),
            degraded.len()
        )));
    }
    if clean.len() < STOI_MIN_SAMPLES {
        return Err(invalid(format!(
            "stoi needs at least {STOI_MIN_SAMPLES} samples (384 ms), got {}",
            clean.len()
        )));
    }
    let fs = SAMPLE_RATE as usize;
    let x = resample(clean.samples(), FS, fs);
    let y = resample(degraded.samples(), FS, fs);
    let (x, y) = remove_silent_frames(&x, &y);
    let xe = band_envelopes(&x);
    let ye = band_envelopes(&y);
    let frames = xe[0].len();
    if frames < SEGMENT {
        return Err(invalid(format!(
            "only {frames} non-silent frames remain; stoi needs {SEGMENT}"
        )));
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    for end in SEGMENT..=frames {
        for (xb, yb) in xe.iter().zip(&ye) {
            let mut xs = xb[end - SEGMENT..end].to_vec();
            let ys = &yb[end - SEGMENT..end];
            let gain = norm(&xs) / (norm(ys) + EPS);
            let mut yp: Vec<f64> = ys
                .iter()
                .zip(&xs)
                .map(|(&b, &a)| (b * gain).min(a * clip))
                .collect();
            standardize(&mut yp);
            standardize(&mut xs);
            total += xs.iter().zip(&yp).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(total / ((frames - SEGMENT + 1) * N_BANDS) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_edges() {
        // nearest bins to 150·2^((2k±1)/6) Hz at 19.53 Hz spacing
        let expected = [
            (7, 9), (9, 11), (11, 14), (14, 17), (17, 22), (22, 27), (27, 34), (34, 43),
            (43, 55), (55, 69), (69, 87), (87, 109), (109, 138), (138, 174), (174, 219),
        ];
        assert_eq!(third_octave_bands(), expected);
    }

    #[test]
    fn window_is_symmetric_and_nonzero() {
        let w = analysis_window();
        assert!(w.iter().all(|&v| v > 0.0));
        assert!((w[0] - w[FRAME - 1]).abs() < 1e-15);
    }

    #[test]
    fn rejects_short_and_mismatched() {
        let a = Waveform::silence(STOI_MIN_SAMPLES - 1);
        assert!(stoi(&a, &a).is_err());
        let b = Waveform::silence(STOI_MIN_SAMPLES);
        let c = Waveform::silence(STOI_MIN_SAMPLES + 1);
        assert!(stoi(&b, &c).is_err());
    }
}
