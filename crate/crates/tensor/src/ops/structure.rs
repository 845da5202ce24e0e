//! Shape-only operators: reshape, axis permutation, channel concatenation
//! and nearest-neighbour repetition.

use crate::error::{invalid, Result, TensorError};
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::{numel, Tensor};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// `out.shape[i] == x.shape[axes[i]]`.
fn permute_values<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let in_shape = x.shape();
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; axes.len()];
    let data = x.data();
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(data[offset]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::raw(out_shape, out)
}

pub(crate) fn permute_inverse<T: Real>(g: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    permute_values(g, &inv)
}

impl<T: Real> Tape<T> {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        self.push("reshape", v, Op::Reshape(a), &[a])
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let rank = self.shape(a).len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&i| i >= rank || std::mem::replace(&mut seen[i], true)) {
            return Err(invalid(format!("{axes:?} is not a permutation of rank {rank}")));
        }
        let v = permute_values(self.value(a), axes);
        self.push("permute", v, Op::Permute(a, axes.to_vec()), &[a])
    }

    /// Stacks `[B, C1, ...]` and `[B, C2, ...]` along axis 1.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: sa,
                rhs: sb,
            });
        }
        let plane: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1] * plane, sb[1] * plane);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for bi in 0..sa[0] {
            out.extend_from_slice(&va[bi * ca..(bi + 1) * ca]);
            out.extend_from_slice(&vb[bi * cb..(bi + 1) * cb]);
        }
        let mut shape = sa.clone();
        shape[1] += sb[1];
        self.push("concat_channels", Tensor::raw(shape, out), Op::Concat(a, b), &[a, b])
    }

    /// Repeats every index along `axis` `factor` times in place
    /// (`[a, b] -> [a, a, b, b]` for factor 2).
    pub fn repeat_interleave(&mut self, x: Var, axis: usize, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || factor == 0 {
            return Err(invalid(format!("cannot repeat axis {axis} of {s:?} by {factor}")));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(data.len() * factor);
        for o in 0..outer {
            for i in 0..s[axis] {
                let src = &data[(o * s[axis] + i) * inner..(o * s[axis] + i + 1) * inner];
                for _ in 0..factor {
                    out.extend_from_slice(src);
                }
            }
        }
        let mut shape = s;
        shape[axis] *= factor;
        self.push(
            "repeat_interleave",
            Tensor::raw(shape, out),
            Op::Repeat { x, axis, factor },
            &[x],
        )
    }
}

pub(crate) fn concat_backward<T: Real>(
    tape: &Tape<T>,
    a: Var,
    b: Var,
    g: &Tensor<T>,
    need: &dyn Fn(Var) -> bool,
    acc: &mut Vec<(Var, Tensor<T>)>,
) {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    let plane: usize = sa[2..].iter().product();
    let (ca, cb) = (sa[1] * plane, sb[1] * plane);
    let mut ga = Vec::with_capacity(numel(sa));
    let mut gb = Vec::with_capacity(numel(sb));
    for chunk in g.data().chunks_exact((ca + cb).max(1)).take(sa[0]) {
        ga.extend_from_slice(&chunk[..ca]);
        gb.extend_from_slice(&chunk[ca..]);
    }
    if need(a) {
        acc.push((a, Tensor::raw(sa.to_vec(), ga)));
    }
    if need(b) {
        acc.push((b, Tensor::raw(sb.to_vec(), gb)));
    }
}

pub(crate) fn repeat_backward<T: Real>(
    in_shape: &[usize],
    g: &Tensor<T>,
    axis: usize,
    factor: usize,
) -> Tensor<T> {
    let outer: usize = in_shape[..axis].iter().product();
    let inner: usize = in_shape[axis + 1..].iter().product();
    let mut out = vec![T::zero(); numel(in_shape)];
    let gd = g.data();
    for o in 0..outer {
        for i in 0..in_shape[axis] {
            let dst = &mut out[(o * in_shape[axis] + i) * inner..(o * in_shape[axis] + i + 1) * inner];
            for r in 0..factor {
                let src_row = (o * in_shape[axis] + i) * factor + r;
                for (d, &v) in dst.iter_mut().zip(&gd[src_row * inner..(src_row + 1) * inner]) {
                    *d += v;
                }
            }
        }
    }
    Tensor::raw(in_shape.to_vec(), out)
}
