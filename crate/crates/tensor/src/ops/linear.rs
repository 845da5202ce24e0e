use crate::error::{Result, TensorError};
use crate::kernels::{matmul, Mat};
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Real> Tape<T> {
    /// Fully-connected map `y = x·Wᵀ + b` over the last axis of `x`.
    ///
    /// `x` is `[..., in]`, `w` is `[out, in]`, `b` is `[out]`; leading axes of
    /// `x` are treated as batch axes.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let mismatch = |rhs: Vec<usize>| TensorError::ShapeMismatch {
            op: "linear",
            lhs: xs.clone(),
            rhs,
        };
        if xs.is_empty() || ws.len() != 2 || xs[xs.len() - 1] != ws[1] {
            return Err(mismatch(ws));
        }
        let (out_f, in_f) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [out_f] {
                return Err(mismatch(self.shape(b).to_vec()));
            }
        }
        let rows = self.value(x).len() / in_f.max(1);
        let mut out = vec![T::zero(); rows * out_f];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_exact_mut(out_f) {
                row.copy_from_slice(bias);
            }
        }
        matmul(
            Mat::new(self.value(x).data(), rows, in_f),
            Mat::new(self.value(w).data(), out_f, in_f).t(),
            &mut out,
            out_f,
            if b.is_some() { T::one() } else { T::zero() },
        );
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = out_f;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", Tensor::raw(shape, out), Op::Linear { x, w, b }, &inputs)
    }
}

pub(crate) fn backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &Tensor<T>,
    need: &dyn Fn(Var) -> bool,
    acc: &mut Vec<(Var, Tensor<T>)>,
) {
    let ws = tape.shape(w);
    let (out_f, in_f) = (ws[0], ws[1]);
    let rows = g.len() / out_f.max(1);
    let gm = Mat::new(g.data(), rows, out_f);
    if need(x) {
        let mut dx = vec![T::zero(); rows * in_f];
        matmul(gm, Mat::new(tape.value(w).data(), out_f, in_f), &mut dx, in_f, T::zero());
        acc.push((x, Tensor::raw(tape.shape(x).to_vec(), dx)));
    }
    if need(w) {
        let mut dw = vec![T::zero(); out_f * in_f];
        matmul(gm.t(), Mat::new(tape.value(x).data(), rows, in_f), &mut dw, in_f, T::zero());
        acc.push((w, Tensor::raw(ws.to_vec(), dw)));
    }
    if let Some(b) = b.filter(|&b| need(b)) {
        let mut db = vec![T::zero(); out_f];
        for row in g.data().chunks_exact(out_f) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        acc.push((b, Tensor::raw(vec![out_f], db)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_copy_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        let w = tape.leaf(eye);
        let b = tape.leaf(Tensor::zeros(&[3]));
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn zero_input_yields_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[3, 4]));
        let w = tape.leaf(Tensor::ones(&[2, 4]));
        let b = tape.leaf(Tensor::from_vec(&[2], vec![0.5, -1.5]).unwrap());
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -1.5, 0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[3, 4]));
        let w = tape.leaf(Tensor::zeros(&[2, 5]));
        assert!(tape.linear(x, w, None).is_err());
    }
}
