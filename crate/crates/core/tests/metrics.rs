use std::f64::consts::PI;

use avcrn::dsp::Waveform;
use avcrn::metrics::{si_sdr, stoi, SI_SDR_CAP_DB};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[path = "common/stoi_oracle.rs"]
mod oracle;

/// Harmonic source under a 4 Hz syllabic envelope with a -20 dB floor.
fn speech_proxy(len: usize, f0: f64) -> Waveform {
    Waveform::new(
        (0..len)
            .map(|i| {
                let t = i as f64 / 16000.0;
                let env = 0.1 + 0.9 * (PI * 4.0 * t).sin().powi(2);
                let src: f64 = (1..=8)
                    .map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64)
                    .sum();
                0.3 * env * src
            })
            .collect(),
    )
    .unwrap()
}

fn gaussian(len: usize, sigma: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new(
        (0..len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma * z
            })
            .collect(),
    )
    .unwrap()
}

fn add(a: &Waveform, b: &Waveform) -> Waveform {
    Waveform::new(a.samples().iter().zip(b.samples()).map(|(x, y)| x + y).collect()).unwrap()
}

#[test]
fn stoi_of_identical_signals_is_one() {
    let x = speech_proxy(16000, 140.0);
    assert!((stoi(&x, &x).unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn stoi_is_invariant_to_gain() {
    let x = speech_proxy(16000, 140.0);
    let y = add(&x, &gaussian(16000, 0.05, 1));
    let base = stoi(&x, &y).unwrap();
    assert!((stoi(&x, &x.scaled(0.3)).unwrap() - 1.0).abs() < 1e-6);
    assert!((stoi(&x, &y.scaled(0.3)).unwrap() - base).abs() < 1e-6);
    assert!((stoi(&x.scaled(2.5), &y).unwrap() - base).abs() < 1e-6);
}

#[test]
fn stoi_of_speech_against_white_noise_is_low_and_matches_oracle() {
    let x = speech_proxy(16000, 120.0);
    let n = gaussian(16000, 0.1, 2);
    let got = stoi(&x, &n).unwrap();
    let expected = oracle::stoi(x.samples(), n.samples());
    assert!(got < 0.25, "{got}");
    assert!((got - expected).abs() < 1e-9, "{got} vs oracle {expected}");
}

#[test]
fn stoi_matches_oracle_on_noisy_speech() {
    let x = speech_proxy(12000, 210.0);
    let y = add(&x, &gaussian(12000, 0.08, 3));
    let got = stoi(&x, &y).unwrap();
    let expected = oracle::stoi(x.samples(), y.samples());
    assert!((got - expected).abs() < 1e-9, "{got} vs oracle {expected}");
    assert!(got > 0.3 && got < 1.0);
}

#[test]
fn stoi_decreases_with_noise_level() {
    let x = speech_proxy(16000, 150.0);
    let scores: Vec<f64> = [0.01, 0.05, 0.2]
        .iter()
        .map(|&s| stoi(&x, &add(&x, &gaussian(16000, s, 4))).unwrap())
        .collect();
    assert!(scores.windows(2).all(|p| p[0] > p[1]), "{scores:?}");
}

#[test]
fn si_sdr_is_capped_and_scale_invariant() {
    let x = speech_proxy(8000, 180.0);
    assert_eq!(si_sdr(&x, &x).unwrap(), SI_SDR_CAP_DB);
    assert_eq!(si_sdr(&x, &x.scaled(2.0)).unwrap(), SI_SDR_CAP_DB);
    let y = add(&x, &gaussian(8000, 0.05, 5));
    let a = si_sdr(&x, &y).unwrap();
    for g in [0.1, 3.0, 17.0] {
        assert!((si_sdr(&x, &y.scaled(g)).unwrap() - a).abs() < 1e-9);
    }
}

#[test]
fn si_sdr_with_equal_power_noise_is_near_zero() {
    // Monte-Carlo over 20 noise draws
    let x = gaussian(16000, 0.2, 6);
    let mean = (0..20)
        .map(|s| si_sdr(&x, &add(&x, &gaussian(16000, 0.2, 100 + s))).unwrap())
        .sum::<f64>()
        / 20.0;
    assert!(mean.abs() < 0.5, "{mean}");
}
