//! 2-D convolution and its adjoint over `[B, C, H, W]` tensors.
//!
//! Both directions go through im2col + GEMM. The transposed convolution is
//! built from the same column buffers, so it is the exact adjoint of
//! [`Tape::conv2d`] for the same kernel and geometry.

use crate::error::{invalid, Result, TensorError};
use crate::kernels::{col2im, im2col, matmul, ConvGeom, Mat};
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Stride and zero padding along (height, width).
///
/// `output_padding` only applies to transposed convolutions, where it picks
/// among the output sizes that a strided forward convolution maps onto the
/// same input size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub output_padding: (usize, usize),
}

impl Conv2dSpec {
    pub fn new(stride: (usize, usize), pad: (usize, usize)) -> Self {
        Self {
            stride,
            pad,
            output_padding: (0, 0),
        }
    }

    pub fn with_output_padding(mut self, output_padding: (usize, usize)) -> Self {
        self.output_padding = output_padding;
        self
    }

    /// Output extent of a forward convolution, if the kernel fits.
    pub fn conv_out(&self, input: (usize, usize), kernel: (usize, usize)) -> Option<(usize, usize)> {
        let f = |n: usize, k: usize, s: usize, p: usize| {
            (n + 2 * p).checked_sub(k).map(|r| r / s + 1)
        };
        Some((
            f(input.0, kernel.0, self.stride.0, self.pad.0)?,
            f(input.1, kernel.1, self.stride.1, self.pad.1)?,
        ))
    }

    /// Output extent of a transposed convolution.
    pub fn conv_transpose_out(
        &self,
        input: (usize, usize),
        kernel: (usize, usize),
    ) -> Option<(usize, usize)> {
        let f = |n: usize, k: usize, s: usize, p: usize, op: usize| {
            ((n.checked_sub(1)? * s) + k + op).checked_sub(2 * p)
        };
        Some((
            f(input.0, kernel.0, self.stride.0, self.pad.0, self.output_padding.0)?,
            f(input.1, kernel.1, self.stride.1, self.pad.1, self.output_padding.1)?,
        ))
    }

    fn validate(&self) -> Result<()> {
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(invalid("convolution stride must be positive"));
        }
        if self.output_padding.0 >= self.stride.0 || self.output_padding.1 >= self.stride.1 {
            return Err(invalid("output padding must be smaller than the stride"));
        }
        Ok(())
    }
}

fn rank4(op: &'static str, s: &[usize]) -> Result<[usize; 4]> {
    s.try_into().map_err(|_| TensorError::ShapeMismatch {
        op,
        lhs: s.to_vec(),
        rhs: vec![0; 4],
    })
}

fn check_bias<T: Real>(tape: &Tape<T>, op: &'static str, b: Option<Var>, c: usize) -> Result<()> {
    match b {
        Some(b) if tape.shape(b) != [c] => Err(TensorError::ShapeMismatch {
            op,
            lhs: tape.shape(b).to_vec(),
            rhs: vec![c],
        }),
        _ => Ok(()),
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (ch, chunk) in out.chunks_exact_mut(plane).enumerate() {
        let bv = bias[ch % bias.len()];
        for v in chunk {
            *v += bv;
        }
    }
}

fn bias_grad<T: Real>(g: &[T], channels: usize, plane: usize) -> Vec<T> {
    let mut db = vec![T::zero(); channels];
    for (ch, chunk) in g.chunks_exact(plane).enumerate() {
        db[ch % channels] += chunk.iter().copied().sum::<T>();
    }
    db
}

impl<T: Real> Tape<T> {
    /// Cross-correlation of `x: [B, C_in, H, W]` with `k: [C_out, C_in, kH, kW]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        spec.validate()?;
        let [batch, cin, h, w] = rank4("conv2d", self.shape(x))?;
        let [cout, kcin, kh, kw] = rank4("conv2d", self.shape(k))?;
        if kcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(k).to_vec(),
            });
        }
        check_bias(self, "conv2d", b, cout)?;
        let (oh, ow) = spec.conv_out((h, w), (kh, kw)).ok_or_else(|| {
            invalid(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * spec.pad.0,
                w + 2 * spec.pad.1
            ))
        })?;
        let g = ConvGeom {
            channels: cin,
            in_h: h,
            in_w: w,
            k_h: kh,
            k_w: kw,
            stride: spec.stride,
            pad: spec.pad,
            out_h: oh,
            out_w: ow,
        };
        let (rows, n) = (g.col_rows(), g.col_cols());
        let xv = self.value(x).data();
        let kv = self.value(k).data();
        let mut out = vec![T::zero(); batch * cout * n];
        let mut cols = vec![T::zero(); rows * n];
        for bi in 0..batch {
            im2col(&xv[bi * cin * h * w..(bi + 1) * cin * h * w], &g, &mut cols);
            matmul(
                Mat::new(kv, cout, rows),
                Mat::new(&cols, rows, n),
                &mut out[bi * cout * n..(bi + 1) * cout * n],
                n,
                T::zero(),
            );
        }
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data(), n);
        }
        let mut inputs = vec![x, k];
        inputs.extend(b);
        self.push(
            "conv2d",
            Tensor::raw(vec![batch, cout, oh, ow], out),
            Op::Conv2d { x, k, b, spec },
            &inputs,
        )
    }

    /// Transposed convolution of `x: [B, C_in, H, W]` with
    /// `k: [C_in, C_out, kH, kW]`, the adjoint of `conv2d` with the same kernel.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    ) -> Result<Var> {
        spec.validate()?;
        let [batch, cin, h, w] = rank4("conv_transpose2d", self.shape(x))?;
        let [kcin, cout, kh, kw] = rank4("conv_transpose2d", self.shape(k))?;
        if kcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(k).to_vec(),
            });
        }
        check_bias(self, "conv_transpose2d", b, cout)?;
        let g = transpose_geom(&spec, cout, (h, w), (kh, kw))?;
        let (rows, n) = (g.col_rows(), g.col_cols());
        let plane_out = g.in_h * g.in_w;
        let xv = self.value(x).data();
        let kv = self.value(k).data();
        let mut out = vec![T::zero(); batch * cout * plane_out];
        let mut cols = vec![T::zero(); rows * n];
        for bi in 0..batch {
            matmul(
                Mat::new(kv, cin, rows).t(),
                Mat::new(&xv[bi * cin * n..(bi + 1) * cin * n], cin, n),
                &mut cols,
                n,
                T::zero(),
            );
            col2im(&cols, &g, &mut out[bi * cout * plane_out..(bi + 1) * cout * plane_out]);
        }
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data(), plane_out);
        }
        let mut inputs = vec![x, k];
        inputs.extend(b);
        self.push(
            "conv_transpose2d",
            Tensor::raw(vec![batch, cout, g.in_h, g.in_w], out),
            Op::ConvTranspose2d { x, k, b, spec },
            &inputs,
        )
    }
}

/// Geometry of the forward convolution whose adjoint maps `input` to the
/// transposed-convolution output.
fn transpose_geom(
    spec: &Conv2dSpec,
    cout: usize,
    input: (usize, usize),
    kernel: (usize, usize),
) -> Result<ConvGeom> {
    let (oh, ow) = spec
        .conv_transpose_out(input, kernel)
        .filter(|&(a, b)| a > 0 && b > 0)
        .ok_or_else(|| invalid("transposed convolution output would be empty"))?;
    if spec.conv_out((oh, ow), kernel) != Some(input) {
        return Err(invalid(format!(
            "transposed convolution geometry is inconsistent for input {input:?}"
        )));
    }
    Ok(ConvGeom {
        channels: cout,
        in_h: oh,
        in_w: ow,
        k_h: kernel.0,
        k_w: kernel.1,
        stride: spec.stride,
        pad: spec.pad,
        out_h: input.0,
        out_w: input.1,
    })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    k: Var,
    b: Option<Var>,
    spec: &Conv2dSpec,
    gout: &Tensor<T>,
    need: &dyn Fn(Var) -> bool,
    acc: &mut Vec<(Var, Tensor<T>)>,
) {
    let [batch, cin, h, w] = rank4("conv2d", tape.shape(x)).unwrap();
    let [cout, _, kh, kw] = rank4("conv2d", tape.shape(k)).unwrap();
    let [_, _, oh, ow] = rank4("conv2d", gout.shape()).unwrap();
    let g = ConvGeom {
        channels: cin,
        in_h: h,
        in_w: w,
        k_h: kh,
        k_w: kw,
        stride: spec.stride,
        pad: spec.pad,
        out_h: oh,
        out_w: ow,
    };
    let (rows, n) = (g.col_rows(), g.col_cols());
    let plane_in = cin * h * w;
    let xv = tape.value(x).data();
    let kv = tape.value(k).data();
    let gv = gout.data();
    let (need_x, need_k) = (need(x), need(k));
    let mut dx = if need_x { vec![T::zero(); batch * plane_in] } else { Vec::new() };
    let mut dk = if need_k { vec![T::zero(); cout * rows] } else { Vec::new() };
    let mut cols = vec![T::zero(); rows * n];
    for bi in 0..batch {
        let gb = &gv[bi * cout * n..(bi + 1) * cout * n];
        if need_k {
            im2col(&xv[bi * plane_in..(bi + 1) * plane_in], &g, &mut cols);
            matmul(
                Mat::new(gb, cout, n),
                Mat::new(&cols, rows, n).t(),
                &mut dk,
                rows,
                T::one(),
            );
        }
        if need_x {
            matmul(
                Mat::new(kv, cout, rows).t(),
                Mat::new(gb, cout, n),
                &mut cols,
                n,
                T::zero(),
            );
            col2im(&cols, &g, &mut dx[bi * plane_in..(bi + 1) * plane_in]);
        }
    }
    if need_x {
        acc.push((x, Tensor::raw(tape.shape(x).to_vec(), dx)));
    }
    if need_k {
        acc.push((k, Tensor::raw(tape.shape(k).to_vec(), dk)));
    }
    if let Some(b) = b.filter(|&b| need(b)) {
        acc.push((b, Tensor::raw(vec![cout], bias_grad(gv, cout, n))));
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose2d_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    k: Var,
    b: Option<Var>,
    spec: &Conv2dSpec,
    gout: &Tensor<T>,
    need: &dyn Fn(Var) -> bool,
    acc: &mut Vec<(Var, Tensor<T>)>,
) {
    let [batch, cin, h, w] = rank4("conv_transpose2d", tape.shape(x)).unwrap();
    let [_, cout, kh, kw] = rank4("conv_transpose2d", tape.shape(k)).unwrap();
    let g = transpose_geom(spec, cout, (h, w), (kh, kw)).unwrap();
    let (rows, n) = (g.col_rows(), g.col_cols());
    let plane_out = g.in_h * g.in_w;
    let xv = tape.value(x).data();
    let kv = tape.value(k).data();
    let gv = gout.data();
    let (need_x, need_k) = (need(x), need(k));
    let mut dx = if need_x { vec![T::zero(); batch * cin * n] } else { Vec::new() };
    let mut dk = if need_k { vec![T::zero(); cin * rows] } else { Vec::new() };
    let mut cols = vec![T::zero(); rows * n];
    for bi in 0..batch {
        im2col(&gv[bi * cout * plane_out..(bi + 1) * cout * plane_out], &g, &mut cols);
        if need_x {
            matmul(
                Mat::new(kv, cin, rows),
                Mat::new(&cols, rows, n),
                &mut dx[bi * cin * n..(bi + 1) * cin * n],
                n,
                T::zero(),
            );
        }
        if need_k {
            matmul(
                Mat::new(&xv[bi * cin * n..(bi + 1) * cin * n], cin, n),
                Mat::new(&cols, rows, n).t(),
                &mut dk,
                rows,
                T::one(),
            );
        }
    }
    if need_x {
        acc.push((x, Tensor::raw(tape.shape(x).to_vec(), dx)));
    }
    if need_k {
        acc.push((k, Tensor::raw(tape.shape(k).to_vec(), dk)));
    }
    if let Some(b) = b.filter(|&b| need(b)) {
        acc.push((b, Tensor::raw(vec![cout], bias_grad(gv, cout, plane_out))));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_identity_kernel() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..2 * 3 * 4 * 5).map(|i| i as f64 * 0.1 - 2.0).collect();
        let x = tape.leaf(Tensor::from_vec(&[2, 3, 4, 5], data).unwrap());
        let mut eye = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            eye.data_mut()[c * 3 + c] = 1.0;
        }
        let k = tape.leaf(eye);
        let y = tape.conv2d(x, k, None, Conv2dSpec::new((1, 1), (0, 0))).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn all_ones_three_by_three_sums_to_nine() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[1, 1, 3, 3]));
        let k = tape.leaf(Tensor::ones(&[1, 1, 3, 3]));
        let y = tape.conv2d(x, k, None, Conv2dSpec::new((1, 1), (0, 0))).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[9.0]);
    }

    #[test]
    fn kernel_larger_than_padded_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[1, 1, 2, 2]));
        let k = tape.leaf(Tensor::ones(&[1, 1, 3, 3]));
        let err = tape.conv2d(x, k, None, Conv2dSpec::new((1, 1), (0, 0)));
        assert!(matches!(err, Err(TensorError::InvalidArgument(_))));
    }

    #[test]
    fn strided_transpose_doubles_height() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[1, 2, 5, 20]));
        let k = tape.leaf(Tensor::ones(&[2, 3, 3, 3]));
        let spec = Conv2dSpec::new((2, 1), (1, 1)).with_output_padding((1, 0));
        let y = tape.conv_transpose2d(x, k, None, spec).unwrap();
        assert_eq!(tape.shape(y), &[1, 3, 10, 20]);
    }

    #[test]
    fn bias_is_added_per_channel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 1, 2, 2]));
        let k = tape.leaf(Tensor::ones(&[2, 1, 1, 1]));
        let b = tape.leaf(Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap());
        let y = tape.conv2d(x, k, Some(b), Conv2dSpec::new((1, 1), (0, 0))).unwrap();
        let v = tape.value(y).data();
        assert_eq!(&v[..8], &[1., 1., 1., 1., -1., -1., -1., -1.]);
    }
}
