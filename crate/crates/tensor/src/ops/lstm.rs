//! Single LSTM layer as one fused operator with backpropagation through time.
//!
//! Gate order inside the stacked weights is input, forget, cell, output:
//! `w_ih: [4H, in]`, `w_hh: [4H, H]`, `b: [4H]`. State starts at zero.

use crate::error::{Result, TensorError};
use crate::kernels::{matmul, Mat};
use crate::ops::elementwise::sigmoid;
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

pub(crate) struct LstmCache<T> {
    /// Post-activation gates, `[B, T, 4H]`.
    gates: Vec<T>,
    /// Cell states, `[B, T, H]`.
    cells: Vec<T>,
}

impl<T: Real> Tape<T> {
    /// Runs an LSTM over `x: [B, T, in]`, returning hidden states `[B, T, H]`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let mismatch = |rhs: &[usize]| TensorError::ShapeMismatch {
            op: "lstm",
            lhs: xs.clone(),
            rhs: rhs.to_vec(),
        };
        let [batch, steps, in_f]: [usize; 3] = xs.as_slice().try_into().map_err(|_| mismatch(&[]))?;
        if steps == 0 {
            return Err(crate::error::invalid("lstm needs at least one time step"));
        }
        let ws = self.shape(w_ih);
        if ws.len() != 2 || ws[1] != in_f || !ws[0].is_multiple_of(4) {
            return Err(mismatch(ws));
        }
        let hid = ws[0] / 4;
        if self.shape(w_hh) != [4 * hid, hid] {
            return Err(mismatch(self.shape(w_hh)));
        }
        if self.shape(b) != [4 * hid] {
            return Err(mismatch(self.shape(b)));
        }

        let g4 = 4 * hid;
        let mut gates = vec![T::zero(); batch * steps * g4];
        let bias = self.value(b).data();
        for row in gates.chunks_exact_mut(g4) {
            row.copy_from_slice(bias);
        }
        matmul(
            Mat::new(self.value(x).data(), batch * steps, in_f),
            Mat::new(self.value(w_ih).data(), g4, in_f).t(),
            &mut gates,
            g4,
            T::one(),
        );

        let whh = self.value(w_hh).data();
        let mut cells = vec![T::zero(); batch * steps * hid];
        let mut hidden = vec![T::zero(); batch * steps * hid];
        for t in 0..steps {
            if t > 0 {
                matmul(
                    Mat::strided(&hidden[(t - 1) * hid..], batch, hid, steps * hid),
                    Mat::new(whh, g4, hid).t(),
                    &mut gates[t * g4..],
                    steps * g4,
                    T::one(),
                );
            }
            for bi in 0..batch {
                let row = (bi * steps + t) * g4;
                let cell_row = (bi * steps + t) * hid;
                for j in 0..hid {
                    let i = sigmoid(gates[row + j]);
                    let f = sigmoid(gates[row + hid + j]);
                    let g = gates[row + 2 * hid + j].tanh();
                    let o = sigmoid(gates[row + 3 * hid + j]);
                    gates[row + j] = i;
                    gates[row + hid + j] = f;
                    gates[row + 2 * hid + j] = g;
                    gates[row + 3 * hid + j] = o;
                    let c_prev = if t > 0 { cells[cell_row - hid + j] } else { T::zero() };
                    let c = f * c_prev + i * g;
                    cells[cell_row + j] = c;
                    hidden[cell_row + j] = o * c.tanh();
                }
            }
        }

        self.push(
            "lstm",
            Tensor::raw(vec![batch, steps, hid], hidden),
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                b,
                cache: Box::new(LstmCache { gates, cells }),
            },
            &[x, w_ih, w_hh, b],
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    w_ih: Var,
    w_hh: Var,
    b: Var,
    cache: &LstmCache<T>,
    out: &Tensor<T>,
    gout: &Tensor<T>,
    need: &dyn Fn(Var) -> bool,
    acc: &mut Vec<(Var, Tensor<T>)>,
) {
    let [batch, steps, hid]: [usize; 3] = out.shape().try_into().unwrap();
    let in_f = tape.shape(x)[2];
    let g4 = 4 * hid;
    let one = T::one();
    let (gates, cells) = (&cache.gates, &cache.cells);
    let hidden = out.data();
    let gv = gout.data();
    let whh = tape.value(w_hh).data();

    let mut dgates = vec![T::zero(); batch * steps * g4];
    let mut dh_next = vec![T::zero(); batch * hid];
    let mut dc_next = vec![T::zero(); batch * hid];
    for t in (0..steps).rev() {
        for bi in 0..batch {
            let row = (bi * steps + t) * g4;
            let cell_row = (bi * steps + t) * hid;
            for j in 0..hid {
                let i = gates[row + j];
                let f = gates[row + hid + j];
                let g = gates[row + 2 * hid + j];
                let o = gates[row + 3 * hid + j];
                let tc = cells[cell_row + j].tanh();
                let dh = gv[cell_row + j] + dh_next[bi * hid + j];
                let dc = dh * o * (one - tc * tc) + dc_next[bi * hid + j];
                let c_prev = if t > 0 { cells[cell_row - hid + j] } else { T::zero() };
                dgates[row + j] = dc * g * i * (one - i);
                dgates[row + hid + j] = dc * c_prev * f * (one - f);
                dgates[row + 2 * hid + j] = dc * i * (one - g * g);
                dgates[row + 3 * hid + j] = dh * tc * o * (one - o);
                dc_next[bi * hid + j] = dc * f;
            }
        }
        if t > 0 {
            matmul(
                Mat::strided(&dgates[t * g4..], batch, g4, steps * g4),
                Mat::new(whh, g4, hid),
                &mut dh_next,
                hid,
                T::zero(),
            );
        }
    }

    let rows = batch * steps;
    let dg = Mat::new(&dgates, rows, g4);
    if need(x) {
        let mut dx = vec![T::zero(); rows * in_f];
        matmul(dg, Mat::new(tape.value(w_ih).data(), g4, in_f), &mut dx, in_f, T::zero());
        acc.push((x, Tensor::raw(tape.shape(x).to_vec(), dx)));
    }
    if need(w_ih) {
        let mut dw = vec![T::zero(); g4 * in_f];
        matmul(dg.t(), Mat::new(tape.value(x).data(), rows, in_f), &mut dw, in_f, T::zero());
        acc.push((w_ih, Tensor::raw(vec![g4, in_f], dw)));
    }
    if need(w_hh) {
        // hidden state entering each step: h_{t-1}, zero at t = 0
        let mut h_prev = vec![T::zero(); rows * hid];
        for bi in 0..batch {
            for t in 1..steps {
                let dst = (bi * steps + t) * hid;
                let src = (bi * steps + t - 1) * hid;
                h_prev[dst..dst + hid].copy_from_slice(&hidden[src..src + hid]);
            }
        }
        let mut dw = vec![T::zero(); g4 * hid];
        matmul(dg.t(), Mat::new(&h_prev, rows, hid), &mut dw, hid, T::zero());
        acc.push((w_hh, Tensor::raw(vec![g4, hid], dw)));
    }
    if need(b) {
        let mut db = vec![T::zero(); g4];
        for row in dgates.chunks_exact(g4) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        acc.push((b, Tensor::raw(vec![g4], db)));
    }
}
