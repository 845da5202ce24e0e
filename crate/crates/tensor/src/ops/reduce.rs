use crate::error::{invalid, Result, TensorError};
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Real> Tape<T> {
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(invalid("mean of empty tensor"));
        }
        let m = v.sum() / T::from_usize(v.len()).unwrap();
        self.push("mean", Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// Mean absolute value over every axis after the first two:
    /// `[B, C, ...] -> [B, C]`.
    pub fn global_avg_pool_abs(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "global_avg_pool_abs",
                lhs: s,
                rhs: vec![],
            });
        }
        let plane: usize = s[2..].iter().product();
        if plane == 0 {
            return Err(invalid("global_avg_pool_abs over an empty plane"));
        }
        let n = T::from_usize(plane).unwrap();
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks_exact(plane)
            .map(|c| c.iter().map(|v| v.abs()).sum::<T>() / n)
            .collect();
        self.push(
            "global_avg_pool_abs",
            Tensor::raw(vec![s[0], s[1]], out),
            Op::AvgPoolAbs(x),
            &[x],
        )
    }

    /// Row means of a matrix: `[B, C] -> [B, 1]`.
    pub fn mean_channels(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[1] == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "mean_channels",
                lhs: s,
                rhs: vec![],
            });
        }
        let n = T::from_usize(s[1]).unwrap();
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks_exact(s[1])
            .map(|c| c.iter().copied().sum::<T>() / n)
            .collect();
        self.push(
            "mean_channels",
            Tensor::raw(vec![s[0], 1], out),
            Op::MeanChannels(x),
            &[x],
        )
    }

    /// Mean squared error between equal-shaped tensors, as a scalar.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(TensorError::ShapeMismatch {
                op: "mse_loss",
                lhs: self.shape(pred).to_vec(),
                rhs: self.shape(target).to_vec(),
            });
        }
        let (p, t) = (self.value(pred), self.value(target));
        if p.is_empty() {
            return Err(invalid("mse_loss of empty tensors"));
        }
        let n = T::from_usize(p.len()).unwrap();
        let s: T = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        self.push("mse_loss", Tensor::scalar(s / n), Op::Mse(pred, target), &[pred, target])
    }
}

pub(crate) fn avg_pool_abs_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    g: &Tensor<T>,
    acc: &mut Vec<(Var, Tensor<T>)>,
) {
    let xv = tape.value(x);
    let plane = xv.len() / g.len();
    let n = T::from_usize(plane).unwrap();
    let mut dx = Vec::with_capacity(xv.len());
    for (chunk, &gv) in xv.data().chunks_exact(plane).zip(g.data()) {
        let s = gv / n;
        dx.extend(chunk.iter().map(|&v| {
            if v > T::zero() {
                s
            } else if v < T::zero() {
                -s
            } else {
                T::zero()
            }
        }));
    }
    acc.push((x, Tensor::raw(xv.shape().to_vec(), dx)));
}

pub(crate) fn mean_channels_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    g: &Tensor<T>,
    acc: &mut Vec<(Var, Tensor<T>)>,
) {
    let s = tape.shape(x);
    let n = T::from_usize(s[1]).unwrap();
    let dx = g
        .data()
        .iter()
        .flat_map(|&gv| std::iter::repeat_n(gv / n, s[1]))
        .collect();
    acc.push((x, Tensor::raw(s.to_vec(), dx)));
}

pub(crate) fn mse_backward<T: Real>(
    tape: &Tape<T>,
    pred: Var,
    target: Var,
    g: &Tensor<T>,
    need: &dyn Fn(Var) -> bool,
    acc: &mut Vec<(Var, Tensor<T>)>,
) {
    let (p, t) = (tape.value(pred), tape.value(target));
    let scale = T::from_f64_lossy(2.0) * g.data()[0] / T::from_usize(p.len()).unwrap();
    let d: Vec<T> = p
        .data()
        .iter()
        .zip(t.data())
        .map(|(&a, &b)| scale * (a - b))
        .collect();
    if need(target) {
        acc.push((target, Tensor::raw(p.shape().to_vec(), d.iter().map(|&v| -v).collect())));
    }
    acc.push((pred, Tensor::raw(p.shape().to_vec(), d)));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_of_constant_negative_map() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[2, 3, 4, 5], -2.0));
        let p = tape.global_avg_pool_abs(x).unwrap();
        assert_eq!(tape.shape(p), &[2, 3]);
        assert!(tape.value(p).data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn pool_of_zero_map() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2, 3, 3]));
        let p = tape.global_avg_pool_abs(x).unwrap();
        assert!(tape.value(p).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_values() {
        let mut tape = Tape::<f64>::new();
        let t = tape.constant(Tensor::from_vec(&[4], vec![1., 2., 3., 4.]).unwrap());
        let same = tape.leaf(Tensor::from_vec(&[4], vec![1., 2., 3., 4.]).unwrap());
        let shifted = tape.leaf(Tensor::from_vec(&[4], vec![2., 3., 4., 5.]).unwrap());
        let l0 = tape.mse_loss(same, t).unwrap();
        let l1 = tape.mse_loss(shifted, t).unwrap();
        assert_eq!(tape.value(l0).item().unwrap(), 0.0);
        assert_eq!(tape.value(l1).item().unwrap(), 1.0);
        let g = tape.backward(l1).unwrap();
        assert_eq!(g.wrt(shifted).data(), &[0.5; 4]);
        assert_eq!(g.wrt(same).data(), &[0.0; 4]);
    }

    #[test]
    fn mse_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[4]));
        let b = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(tape.mse_loss(a, b).is_err());
    }
}
