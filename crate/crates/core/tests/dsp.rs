use std::f64::consts::PI;

use avcrn::dsp::{
    self, chunk, hann_window, istft, log_mel, mel_filterbank, mix_at_snr, snr_db, stft,
    ComplexSpectrogram, MelSpectrogram, Waveform, LOG_FLOOR, N_BINS, N_MELS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

fn noise(len: usize, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap()
}

fn sine(len: usize, hz: f64) -> Waveform {
    Waveform::new(
        (0..len)
            .map(|i| 0.5 * (2.0 * PI * hz * i as f64 / 16000.0).sin())
            .collect(),
    )
    .unwrap()
}

#[test]
fn hann_overlap_add_is_constant() {
    // 10 overlapping windows at hop 160; interior sum is n/(2·hop)·... = 2.0
    let w = hann_window(640).unwrap();
    let total = 640 + 9 * 160;
    let mut sum = vec![0.0; total];
    for t in 0..10 {
        for (k, v) in w.iter().enumerate() {
            sum[t * 160 + k] += v;
        }
    }
    for v in &sum[640..total - 640] {
        assert!((v - 2.0).abs() < 1e-12, "{v}");
    }
}

#[test]
fn two_hundred_ms_is_twenty_frames_and_80x20_log_mel() {
    let s = stft(&noise(3200, 1)).unwrap();
    assert_eq!(s.n_frames(), 20);
    let m = log_mel(&s).unwrap();
    assert_eq!((m.n_bands(), m.n_frames()), (80, 20));
    assert_eq!(chunk(&m).len(), 1);
}

#[test]
fn sine_peaks_at_expected_bin() {
    // direct DFT of one windowed frame as the oracle
    let x = sine(16000, 1000.0);
    let s = stft(&x).unwrap();
    let t = 50;
    let w = hann_window(640).unwrap();
    let start = t * 160 - 320;
    let mut best = (0, 0.0);
    for f in 0..N_BINS {
        let mut acc = Complex64::default();
        for k in 0..640 {
            let ang = -2.0 * PI * (f * k) as f64 / 640.0;
            acc += Complex64::from_polar(x.samples()[start + k] * w[k], ang);
        }
        assert!((acc - s.at(f, t)).norm() < 1e-9);
        if acc.norm() > best.1 {
            best = (f, acc.norm());
        }
    }
    assert_eq!(best.0, 40);
}

#[test]
fn stft_round_trip_above_40_db() {
    for (len, seed) in [(16000, 2), (8000, 3), (12345, 4)] {
        let x = noise(len, seed);
        let y = istft(&stft(&x).unwrap()).unwrap();
        assert_eq!(y.len(), len);
        let inner = 640..len - 640;
        let err: Vec<f64> = x.samples()[inner.clone()]
            .iter()
            .zip(&y.samples()[inner.clone()])
            .map(|(a, b)| a - b)
            .collect();
        let snr = snr_db(&x.samples()[inner], &err);
        assert!(snr > 40.0, "len {len}: {snr} dB");
    }
}

#[test]
fn single_frame_overlap_add() {
    // one frame of content c: output n = c[320 + n]·w / w², by hand
    let w = hann_window(640).unwrap();
    let content: Vec<f64> = (0..640).map(|k| ((k * 37) % 101) as f64 / 100.0 - 0.5).collect();
    let mut buf: Vec<Complex64> = content.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    rustfft::FftPlanner::new().plan_fft_forward(640).process(&mut buf);
    let s = ComplexSpectrogram::from_frames(buf[..N_BINS].to_vec(), 100).unwrap();
    let y = istft(&s).unwrap();
    assert_eq!(y.len(), 100);
    for n in 0..100 {
        let k = 320 + n;
        let expected = content[k] * w[k] / (w[k] * w[k]);
        assert!((y.samples()[n] - expected).abs() < 1e-9);
    }
}

#[test]
fn filterbank_rows_peak_in_order() {
    let fb = mel_filterbank();
    let mut last = 0;
    for m in 0..N_MELS {
        let row = &fb[m * N_BINS..(m + 1) * N_BINS];
        let argmax = row
            .iter()
            .enumerate()
            .fold((0, -1.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0;
        assert!(argmax >= last, "filter {m} peaks at {argmax} < {last}");
        last = argmax;
        // unimodal: rises then falls
        let peak = argmax;
        assert!(row[..=peak].windows(2).all(|p| p[0] <= p[1]));
        assert!(row[peak..].windows(2).all(|p| p[0] >= p[1]));
    }
}

#[test]
fn log_mel_of_silence_is_the_floor() {
    let m = log_mel(&stft(&Waveform::silence(1600)).unwrap()).unwrap();
    assert!(m.data().iter().all(|&v| v == LOG_FLOOR.ln()));
}

#[test]
fn doubling_magnitude_adds_log_two() {
    let x = noise(4800, 5);
    let a = log_mel(&stft(&x).unwrap()).unwrap();
    let b = log_mel(&stft(&x.scaled(2.0)).unwrap()).unwrap();
    for (u, v) in a.data().iter().zip(b.data()) {
        if u.exp() > 1e3 * LOG_FLOOR {
            assert!((v - u - 2f64.ln()).abs() < 1e-4);
        }
    }
}

#[test]
fn chunks_concatenate_to_prefix() {
    let m = log_mel(&stft(&noise(16000, 6)).unwrap()).unwrap();
    let chunks = chunk(&m);
    assert_eq!(chunks.len(), 5);
    for (i, c) in chunks.iter().enumerate() {
        for band in 0..80 {
            for f in 0..20 {
                assert_eq!(c.at(band, f), m.at(band, i * 20 + f));
            }
        }
    }
}

#[test]
fn zero_chunk_reconstructs_near_silence() {
    let silent = MelSpectrogram::from_vec(20, vec![LOG_FLOOR.ln(); 1600]).unwrap();
    let phase = stft(&noise(3200, 7)).unwrap();
    let y = dsp::mel_pseudo_inverse(&silent, &phase).unwrap();
    assert!(y.peak() < 1e-3, "{}", y.peak());
}

#[test]
fn mixing_hits_requested_snr() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let clean = sine(16000, 220.0);
    let n = noise(24000, 10);
    for target in [-10.0, -5.0, 0.0, 3.7, 10.0] {
        let m = mix_at_snr(&clean, &n, target, &mut rng).unwrap();
        let added: Vec<f64> = m
            .mixture
            .samples()
            .iter()
            .zip(clean.samples())
            .map(|(a, b)| a - b)
            .collect();
        let measured = snr_db(clean.samples(), &added);
        assert!((measured - target).abs() < 1e-6, "{measured} vs {target}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mixing_is_scale_equivariant_in_clean(a in 0.01f64..5.0, seed in 0u64..1000, snr in -10.0f64..10.0) {
        let clean = sine(2000, 330.0);
        let n = noise(3000, seed);
        let m1 = mix_at_snr(&clean, &n, snr, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let m2 = mix_at_snr(&clean.scaled(a), &n, snr, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(m1.noise_offset, m2.noise_offset);
        for (u, v) in m1.mixture.samples().iter().zip(m2.mixture.samples()) {
            prop_assert!((a * u - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn stft_round_trip_on_random_lengths(len in 1usize..4000, seed in 0u64..100) {
        let x = noise(len, seed);
        let y = istft(&stft(&x).unwrap()).unwrap();
        prop_assert_eq!(y.len(), len);
        for (u, v) in x.samples().iter().zip(y.samples()) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }
}

#[test]
fn mel_inversion_of_speech_keeps_intelligibility() {
    use avcrn::datagen::synth_speech;
    use avcrn::metrics::{si_sdr, stoi};
    for seed in 0..4 {
        let x = synth_speech(seed, 16000).unwrap();
        let s = stft(&x).unwrap();
        let y = dsp::mel_pseudo_inverse(&log_mel(&s).unwrap(), &s).unwrap();
        let intel = stoi(&x, &y).unwrap();
        let sdr = si_sdr(&x, &y).unwrap();
        assert!(intel >= 0.9, "seed {seed}: stoi {intel}");
        assert!(sdr >= 10.0, "seed {seed}: si-sdr {sdr}");
    }
}
