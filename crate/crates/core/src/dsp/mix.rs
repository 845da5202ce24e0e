use rand::Rng;

use super::Waveform;
use crate::error::{invalid, Result};

/// Result of [`mix_at_snr`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub mixture: Waveform,
    /// Gain applied to the noise crop.
    pub gain: f64,
    /// Start of the noise crop within the supplied noise.
    pub noise_offset: usize,
}

/// `10·log10(P_signal / P_noise)` with `P` the mean square.
pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    let p = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    10.0 * (p(signal) / p(noise)).log10()
}

/// Adds a random crop of `noise` to `clean`, scaled so the clean-to-noise
/// power ratio equals `snr_db`.
pub fn mix_at_snr<R: Rng + ?Sized>(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<Mixture> {
    if !snr_db.is_finite() {
        return Err(invalid(format!("SNR must be finite, got {snr_db}")));
    }
    if noise.len() < clean.len() {
        return Err(invalid(format!(
            "noise ({} samples) is shorter than clean ({} samples)",
            noise.len(),
            clean.len()
        )));
    }
    let p_clean = clean.power();
    if p_clean <= 0.0 {
        return Err(invalid("clean signal is silent; SNR is undefined"));
    }
    let noise_offset = rng.random_range(0..=noise.len() - clean.len());
    let crop = &noise.samples()[noise_offset..noise_offset + clean.len()];
    let p_noise = crop.iter().map(|v| v * v).sum::<f64>() / crop.len() as f64;
    if p_noise <= 0.0 {
        return Err(invalid("noise crop is silent; SNR is undefined"));
    }
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mixed = clean
        .samples()
        .iter()
        .zip(crop)
        .map(|(c, n)| c + gain * n)
        .collect();
    Ok(Mixture {
        mixture: Waveform::new(mixed)?,
        gain,
        noise_offset,
    })
}
