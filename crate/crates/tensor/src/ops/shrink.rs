//! Soft-thresholding (shrinkage) with a learnable threshold.

use crate::error::{invalid, Result, TensorError};
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Shrinks `x` toward zero by `tau`, zeroing the band `[-tau, tau]`.
#[inline]
pub fn soft_threshold_value<T: Real>(x: T, tau: T) -> T {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        T::zero()
    }
}

/// Number of `x` elements that share one threshold value.
fn group_size(xs: &[usize], ts: &[usize]) -> Option<usize> {
    let n: usize = xs.iter().product();
    let nt: usize = ts.iter().product();
    if nt == 1 {
        return Some(n);
    }
    // per-item ([B, 1]) or per-channel ([B, C]) thresholds
    let ok = ts.len() == 2
        && xs.len() >= 2
        && ts[0] == xs[0]
        && (ts[1] == xs[1] || ts[1] == 1);
    ok.then(|| n / nt)
}

impl<T: Real> Tape<T> {
    /// Applies soft-thresholding of `x: [B, C, ...]` with `tau` given as a
    /// scalar, per item (`[B, 1]`) or per channel (`[B, C]`), broadcast over
    /// the remaining axes. Every threshold must be non-negative.
    pub fn soft_threshold(&mut self, x: Var, tau: Var) -> Result<Var> {
        let group = group_size(self.shape(x), self.shape(tau)).ok_or_else(|| {
            TensorError::ShapeMismatch {
                op: "soft_threshold",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(tau).to_vec(),
            }
        })?;
        let tv = self.value(tau).data();
        if let Some(bad) = tv.iter().find(|&&t| !(t >= T::zero())) {
            return Err(invalid(format!("soft_threshold needs tau >= 0, got {bad}")));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(xv.len());
        if group > 0 {
            for (chunk, &t) in xv.data().chunks(group).zip(tv.iter().cycle()) {
                out.extend(chunk.iter().map(|&v| soft_threshold_value(v, t)));
            }
        }
        self.push(
            "soft_threshold",
            Tensor::raw(xv.shape().to_vec(), out),
            Op::SoftThreshold { x, tau },
            &[x, tau],
        )
    }
}

pub(crate) fn soft_threshold_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    tau: Var,
    g: &Tensor<T>,
    need: &dyn Fn(Var) -> bool,
    acc: &mut Vec<(Var, Tensor<T>)>,
) {
    let xv = tape.value(x);
    let tv = tape.value(tau);
    let group = group_size(xv.shape(), tv.shape()).unwrap();
    let mut dx = Vec::with_capacity(xv.len());
    let mut dtau = vec![T::zero(); tv.len()];
    if group > 0 {
        for (ci, (chunk, gchunk)) in xv.data().chunks(group).zip(g.data().chunks(group)).enumerate() {
            let ti = ci % tv.len();
            let t = tv.data()[ti];
            let mut dt = T::zero();
            for (&v, &gv) in chunk.iter().zip(gchunk) {
                if v > t {
                    dx.push(gv);
                    dt -= gv;
                } else if v < -t {
                    dx.push(gv);
                    dt += gv;
                } else {
                    dx.push(T::zero());
                }
            }
            dtau[ti] += dt;
        }
    }
    if need(x) {
        acc.push((x, Tensor::raw(xv.shape().to_vec(), dx)));
    }
    if need(tau) {
        acc.push((tau, Tensor::raw(tv.shape().to_vec(), dtau)));
    }
}
