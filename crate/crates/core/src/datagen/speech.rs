use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{invalid, Result};

/// Shortest utterance [`synth_speech`] accepts (0.5 s).
pub const MIN_SPEECH_SAMPLES: usize = SAMPLE_RATE as usize / 2;

/// Peak amplitude of every synthetic utterance.
pub const SPEECH_PEAK: f64 = 0.5;

/// Envelope level between syllables, relative to a syllable peak.
pub const ENVELOPE_FLOOR: f64 = 0.12;

const ASPIRATION_LEVEL: f64 = 0.02;

/// Parameters drawn for one utterance; exposed so tests can check the
/// generated signal against them.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeechParams {
    /// Mean fundamental frequency, Hz.
    pub f0: f64,
    /// Relative depth of the slow F0 excursion.
    pub f0_vibrato: f64,
    pub f0_rate: f64,
    pub f0_phase: f64,
    pub harmonics: usize,
    /// Syllable rate, Hz.
    pub syllable_rate: f64,
    pub formants: [(f64, f64); 2],
}

impl SpeechParams {
    pub fn draw(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            f0: rng.random_range(100.0..220.0),
            f0_vibrato: rng.random_range(0.02..0.15),
            f0_rate: rng.random_range(0.5..2.0),
            f0_phase: rng.random_range(0.0..2.0 * PI),
            harmonics: rng.random_range(6..=10),
            syllable_rate: rng.random_range(2.0..6.0),
            formants: [
                (rng.random_range(300.0..900.0), rng.random_range(60.0..120.0)),
                (rng.random_range(900.0..2500.0), rng.random_range(90.0..180.0)),
            ],
        }
    }

    /// Instantaneous fundamental frequency at `t` seconds.
    pub fn f0_at(&self, t: f64) -> f64 {
        let wobble = self.f0_vibrato * (2.0 * PI * self.f0_rate * t + self.f0_phase).sin();
        (self.f0 * (1.0 + wobble)).clamp(80.0, 300.0)
    }
}

/// Synthetic voiced utterance of `len` samples: a harmonic source with a
/// wandering F0 (80–300 Hz, 6–10 harmonics) shaped by two drifting
/// resonances and a 2–6 Hz syllabic envelope, plus faint aspiration noise
/// that follows the envelope. Peak-normalized to [`SPEECH_PEAK`].
pub fn synth_speech(seed: u64, len: usize) -> Result<Waveform> {
    if len < MIN_SPEECH_SAMPLES {
        return Err(invalid(format!(
            "utterance needs at least {MIN_SPEECH_SAMPLES} samples, got {len}"
        )));
    }
    let p = SpeechParams::draw(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    let fs = SAMPLE_RATE as f64;
    let syl_phase: f64 = rng.random_range(0.0..PI);
    let drift: [f64; 2] = [rng.random_range(0.2..1.0), rng.random_range(0.2..1.0)];
    let n_syllables = (len as f64 / fs * p.syllable_rate).ceil() as usize + 2;
    let syl_gain: Vec<f64> = (0..n_syllables).map(|_| rng.random_range(0.6..1.0)).collect();
    let harm_phase: Vec<f64> = (0..p.harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    let mut phase = 0.0;
    let mut out = Vec::with_capacity(len);
    for n in 0..len {
        let t = n as f64 / fs;
        let f0 = p.f0_at(t);
        phase += 2.0 * PI * f0 / fs;
        let formant = |k: usize| {
            let (centre, bw) = p.formants[k];
            (centre * (1.0 + 0.1 * (2.0 * PI * drift[k] * t).sin()), bw)
        };
        let (fa, fb) = (formant(0), formant(1));
        let mut voiced = 0.0;
        for (h, ph) in harm_phase.iter().enumerate() {
            let order = (h + 1) as f64;
            let f = order * f0;
            let res = |(c, b): (f64, f64)| 1.0 / (1.0 + ((f - c) / b).powi(2));
            let amp = (0.15 + res(fa) + 0.7 * res(fb)) / order.sqrt();
            voiced += amp * (order * phase + ph).sin();
        }
        // raised-sine syllables, one gain per syllable
        let cycle = p.syllable_rate * t + syl_phase / PI;
        let syl = syl_gain[cycle.floor() as usize];
        let env = ENVELOPE_FLOOR + (1.0 - ENVELOPE_FLOOR) * syl * (PI * cycle).sin().powi(2);
        let breath: f64 = StandardNormal.sample(&mut rng);
        out.push(env * (voiced + ASPIRATION_LEVEL * breath));
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    out.iter_mut().for_each(|v| *v *= SPEECH_PEAK / peak);
    Waveform::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_utterances() {
        assert!(synth_speech(1, MIN_SPEECH_SAMPLES - 1).is_err());
        assert!(synth_speech(1, MIN_SPEECH_SAMPLES).is_ok());
    }

    #[test]
    fn peak_is_normalized() {
        let w = synth_speech(7, 16000).unwrap();
        assert!((w.peak() - SPEECH_PEAK).abs() < 1e-12);
    }

    #[test]
    fn parameters_in_range() {
        for seed in 0..200 {
            let p = SpeechParams::draw(seed);
            let lo = p.f0 * (1.0 - p.f0_vibrato);
            let hi = p.f0 * (1.0 + p.f0_vibrato);
            assert!(lo >= 80.0 && hi <= 300.0);
            assert!((6..=10).contains(&p.harmonics));
            assert!((2.0..6.0).contains(&p.syllable_rate));
        }
    }
}
