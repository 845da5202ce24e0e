//! Straightforward STOI written from the published definition: literal
//! zero-stuffing resampler, direct DFT, explicit loops.

use std::f64::consts::PI;

fn i0(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut fact = 1.0;
    for k in 0..60 {
        if k > 0 {
            fact *= k as f64;
        }
        sum += ((x / 2.0).powi(k) / fact).powi(2);
    }
    sum
}

fn lowpass() -> Vec<f64> {
    let (p, q) = (5.0f64, 8.0f64);
    let fc = 1.0 / (2.0 * q);
    let len = (52.0f64 / (28.714 * fc / 10.0)).ceil() as i64;
    let beta = 0.1102 * (60.0 - 8.7);
    let mut h: Vec<f64> = (-len..=len)
        .map(|t| {
            let r = t as f64 / len as f64;
            let win = i0(beta * (1.0 - r * r).sqrt()) / i0(beta);
            let arg = 2.0 * fc * t as f64;
            let sinc = if t == 0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
            win * 2.0 * p * fc * sinc
        })
        .collect();
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v = *v / s * p);
    h
}

fn resample(x: &[f64]) -> Vec<f64> {
    let h = lowpass();
    let half = (h.len() - 1) / 2;
    let mut up = vec![0.0; x.len() * 5];
    for (i, &v) in x.iter().enumerate() {
        up[i * 5] = v;
    }
    let n_out = (x.len() * 5).div_ceil(8);
    (0..n_out)
        .map(|n| {
            let m = n * 8 + half;
            (0..h.len())
                .filter(|&k| k <= m && m - k < up.len())
                .map(|k| h[k] * up[m - k])
                .sum()
        })
        .collect()
}

fn window() -> Vec<f64> {
    (0..256).map(|k| 0.5 - 0.5 * (2.0 * PI * (k + 1) as f64 / 257.0).cos()).collect()
}

fn frames(s: &[f64]) -> Vec<Vec<f64>> {
    let w = window();
    let mut out = Vec::new();
    let mut i = 0;
    while i + 256 < s.len() {
        out.push((0..256).map(|k| s[i + k] * w[k]).collect());
        i += 128;
    }
    out
}

fn envelopes(s: &[f64]) -> Vec<Vec<f64>> {
    let freqs: Vec<f64> = (0..=256).map(|b| b as f64 * 10000.0 / 512.0).collect();
    let nearest = |f: f64| {
        let mut best = 0;
        for b in 0..freqs.len() {
            if (freqs[b] - f).abs() < (freqs[best] - f).abs() {
                best = b;
            }
        }
        best
    };
    let power: Vec<Vec<f64>> = frames(s)
        .iter()
        .map(|fr| {
            (0..=256)
                .map(|b| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (k, v) in fr.iter().enumerate() {
                        let a = -2.0 * PI * (b * k) as f64 / 512.0;
                        re += v * a.cos();
                        im += v * a.sin();
                    }
                    re * re + im * im
                })
                .collect()
        })
        .collect();
    (0..15)
        .map(|j| {
            let lo = nearest(150.0 * 2f64.powf((2.0 * j as f64 - 1.0) / 6.0));
            let hi = nearest(150.0 * 2f64.powf((2.0 * j as f64 + 1.0) / 6.0));
            power.iter().map(|p| p[lo..hi].iter().sum::<f64>().sqrt()).collect()
        })
        .collect()
}

fn centred_unit(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|a| a - m).collect();
    let n = c.iter().map(|a| a * a).sum::<f64>().sqrt() + f64::EPSILON;
    c.iter().map(|a| a / n).collect()
}

pub fn stoi(x: &[f64], y: &[f64]) -> f64 {
    let (x, y) = (resample(x), resample(y));
    let (fx, fy) = (frames(&x), frames(&y));
    let energy: Vec<f64> = fx
        .iter()
        .map(|f| 20.0 * (f.iter().map(|a| a * a).sum::<f64>().sqrt() + f64::EPSILON).log10())
        .collect();
    let top = energy.iter().cloned().fold(f64::MIN, f64::max);
    let keep: Vec<usize> = (0..fx.len()).filter(|&i| energy[i] > top - 40.0).collect();
    let len = (keep.len() - 1) * 128 + 256;
    let (mut xs, mut ys) = (vec![0.0; len], vec![0.0; len]);
    for (m, &i) in keep.iter().enumerate() {
        for k in 0..256 {
            xs[m * 128 + k] += fx[i][k];
            ys[m * 128 + k] += fy[i][k];
        }
    }
    let (ex, ey) = (envelopes(&xs), envelopes(&ys));
    let n_frames = ex[0].len();
    let clip = 1.0 + 10f64.powf(15.0 / 20.0);
    let mut sum = 0.0;
    let mut count = 0;
    for m in 30..=n_frames {
        for j in 0..15 {
            let a = &ex[j][m - 30..m];
            let b = &ey[j][m - 30..m];
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt() + f64::EPSILON;
            let bp: Vec<f64> = (0..30).map(|t| (b[t] * na / nb).min(a[t] * clip)).collect();
            let (ua, ub) = (centred_unit(a), centred_unit(&bp));
            sum += (0..30).map(|t| ua[t] * ub[t]).sum::<f64>();
            count += 1;
        }
    }
    sum / count as f64
}
