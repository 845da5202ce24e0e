use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    /// Gaussian noise through `1 + a·z⁻¹`; the parameter is the tilt `a`.
    White,
    /// `1/f^β` noise; the parameter is `β`.
    Pink,
    /// Cluster of amplitude-modulated tones standing in for babble; the
    /// parameter is the modulation rate in Hz.
    Babble,
}

impl NoiseFamily {
    pub const ALL: [NoiseFamily; 3] = [NoiseFamily::White, NoiseFamily::Pink, NoiseFamily::Babble];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseFamily::White => "white",
            NoiseFamily::Pink => "pink",
            NoiseFamily::Babble => "babble",
        }
    }

    /// Parameter range used for train and validation mixtures. For the white
    /// family the range is of `|a|`; the sign is drawn separately.
    pub fn train_range(self) -> Range<f64> {
        match self {
            NoiseFamily::White => 0.1..0.3,
            NoiseFamily::Pink => 0.7..1.0,
            NoiseFamily::Babble => 2.0..5.0,
        }
    }

    /// Held-out parameter range for test mixtures, disjoint from
    /// [`train_range`](Self::train_range).
    pub fn test_range(self) -> Range<f64> {
        match self {
            NoiseFamily::White => 0.0..0.1,
            NoiseFamily::Pink => 1.0..1.3,
            NoiseFamily::Babble => 5.0..8.0,
        }
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown noise family `{s}`")))
    }
}

fn gaussian<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

fn tilted_white<R: Rng + ?Sized>(len: usize, a: f64, rng: &mut R) -> Vec<f64> {
    let w = gaussian(len + 1, rng);
    w.windows(2).map(|p| p[1] + a * p[0]).collect()
}

fn power_law<R: Rng + ?Sized>(len: usize, beta: f64, rng: &mut R) -> Vec<f64> {
    let mut buf: Vec<Complex64> = gaussian(len, rng).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    buf[0] = Complex64::default();
    for k in 1..len {
        let f = k.min(len - k) as f64;
        buf[k] *= f.powf(-beta / 2.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

fn tone_cluster<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let tones: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            (
                rng.random_range(200.0..3000.0),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    (0..len)
        .map(|n| {
            let t = n as f64 / fs;
            tones
                .iter()
                .map(|&(f, ph, mph, amp)| {
                    amp * (1.0 + 0.8 * (2.0 * PI * rate * t + mph).sin()) * (2.0 * PI * f * t + ph).sin()
                })
                .sum()
        })
        .collect()
}

/// `len` samples of `family` noise with parameter `param`, normalized to
/// unit mean square.
pub fn synth_noise<R: Rng + ?Sized>(family: NoiseFamily, param: f64, len: usize, rng: &mut R) -> Result<Waveform> {
    if len == 0 {
        return Err(invalid("noise length must be positive"));
    }
    let raw = match family {
        NoiseFamily::White => tilted_white(len, param, rng),
        NoiseFamily::Pink => power_law(len, param, rng),
        NoiseFamily::Babble => tone_cluster(len, param, rng),
    };
    let p = raw.iter().map(|v| v * v).sum::<f64>() / len as f64;
    if p <= 0.0 {
        return Err(invalid(format!("{family} noise came out silent")));
    }
    let g = p.sqrt().recip();
    Waveform::new(raw.into_iter().map(|v| v * g).collect())
}
