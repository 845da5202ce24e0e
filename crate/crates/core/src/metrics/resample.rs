//! Rational-rate polyphase resampling with an Octave-compatible Kaiser
//! low-pass design.

use std::f64::consts::PI;

/// Modified Bessel function of the first kind, order 0 (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(n: usize, beta: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let m = (n - 1) as f64;
    let denom = bessel_i0(beta);
    (0..n)
        .map(|k| {
            let r = 2.0 * k as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Anti-aliasing filter for `up/down` resampling: a Kaiser-windowed sinc at
/// 60 dB stopband rejection, normalized to unit DC gain.
pub(crate) fn design_filter(up: usize, down: usize) -> Vec<f64> {
    let (p, q) = (up as f64, down as f64);
    let cutoff = 1.0 / (2.0 * p.max(q));
    let roll_off = cutoff / 10.0;
    let rejection_db = 60.0;
    let half = ((rejection_db - 8.0) / (28.714 * roll_off)).ceil() as isize;
    let beta = 0.1102 * (rejection_db - 8.7);
    let window = kaiser((2 * half + 1) as usize, beta);
    let h: Vec<f64> = (-half..=half)
        .zip(&window)
        .map(|(t, w)| w * 2.0 * p * cutoff * sinc(2.0 * cutoff * t as f64))
        .collect();
    let total: f64 = h.iter().sum();
    h.into_iter().map(|v| v / total).collect()
}

/// Resamples `x` by `up/down`, returning `ceil(len·up/down)` samples.
/// Output sample `n` sits at input time `n·down/up` (zero-phase filtering,
/// zeros assumed outside the signal).
pub fn resample(x: &[f64], up: usize, down: usize) -> Vec<f64> {
    let g = gcd(up, down);
    let (up, down) = (up / g, down / g);
    if up == down {
        return x.to_vec();
    }
    let h: Vec<f64> = design_filter(up, down).into_iter().map(|v| v * up as f64).collect();
    let half = (h.len() - 1) / 2;
    let n_out = (x.len() * up).div_ceil(down);
    (0..n_out)
        .map(|n| {
            // y[n] = Σ_j x[j]·h[n·down + half − j·up]
            let centre = n * down + half;
            let j_hi = (centre / up).min(x.len().saturating_sub(1));
            let j_lo = (centre + 1).saturating_sub(h.len()).div_ceil(up);
            (j_lo..=j_hi)
                .map(|j| x[j] * h[centre - j * up])
                .sum()
        })
        .collect()
}
