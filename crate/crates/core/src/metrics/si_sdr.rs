use crate::dsp::Waveform;
use crate::error::{invalid, Result};

/// Magnitude bound on reported SI-SDR values, in dB.
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Scale-invariant signal-to-distortion ratio of `estimate` against
/// `reference`, in dB, clamped to `±SI_SDR_CAP_DB`.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(invalid(format!(
            "si_sdr needs equal lengths, got {} and {}",
            reference.len(),
            estimate.len()
        )));
    }
    let (s, e) = (reference.samples(), estimate.samples());
    let energy: f64 = s.iter().map(|v| v * v).sum();
    if energy <= 0.0 {
        return Err(invalid("si_sdr reference is silent"));
    }
    let alpha = s.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / energy;
    let target = alpha * alpha * energy;
    let distortion: f64 = s.iter().zip(e).map(|(a, b)| (alpha * a - b).powi(2)).sum();
    let db = 10.0 * (target / distortion).log10();
    Ok(if db.is_nan() { -SI_SDR_CAP_DB } else { db.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB) })
}
