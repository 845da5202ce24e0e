//! Pointwise arithmetic and activations.
//!
//! Binary operators accept equal shapes or a one-element operand that is
//! broadcast as a scalar. Non-smooth points (`abs` and `relu` at 0) take
//! subgradient 0.

use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum Bin {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy)]
pub(crate) enum Unary {
    Abs,
    Relu,
    Sigmoid,
    Tanh,
    Elu,
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let (na, nb): (usize, usize) = (a.iter().product(), b.iter().product());
    if a == b || nb == 1 {
        Ok(a.to_vec())
    } else if na == 1 {
        Ok(b.to_vec())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

fn binary_values<T: Real>(a: &Tensor<T>, b: &Tensor<T>, shape: Vec<usize>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let (da, db) = (a.data(), b.data());
    let data = match (da.len() == n, db.len() == n) {
        (true, true) => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
        (true, false) => da.iter().map(|&x| f(x, db[0])).collect(),
        (false, true) => db.iter().map(|&y| f(da[0], y)).collect(),
        (false, false) => vec![f(da[0], db[0])],
    };
    Tensor::raw(shape, data)
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    fn binary(&mut self, kind: Bin, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Bin::Add => "add",
            Bin::Sub => "sub",
            Bin::Mul => "mul",
        };
        let shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let (value, op) = match kind {
            Bin::Add => (binary_values(va, vb, shape, |x, y| x + y), Op::Add(a, b)),
            Bin::Sub => (binary_values(va, vb, shape, |x, y| x - y), Op::Sub(a, b)),
            Bin::Mul => (binary_values(va, vb, shape, |x, y| x * y), Op::Mul(a, b)),
        };
        self.push(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Bin::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Bin::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Bin::Mul, a, b)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| -x);
        self.push("neg", v, Op::Neg(a), &[a])
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        self.push("scale", v, Op::Scale(a, c), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.abs());
        self.push("abs", v, Op::Abs(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push("relu", v, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.tanh());
        self.push("tanh", v, Op::Tanh(a), &[a])
    }

    /// Exponential linear unit with unit scale.
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let v = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { x.exp_m1() });
        self.push("elu", v, Op::Elu(a), &[a])
    }
}

fn reduce_to<T: Real>(g: Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        g
    } else {
        Tensor::raw(shape.to_vec(), vec![g.sum()])
    }
}

pub(crate) fn add_backward<T: Real>(
    tape: &Tape<T>,
    a: Var,
    b: Var,
    g: &Tensor<T>,
    sign_b: T,
    acc: &mut Vec<(Var, Tensor<T>)>,
) {
    acc.push((a, reduce_to(g.clone(), tape.shape(a))));
    let gb = if sign_b == T::one() { g.clone() } else { g.map(|v| -v) };
    acc.push((b, reduce_to(gb, tape.shape(b))));
}

pub(crate) fn mul_backward<T: Real>(
    tape: &Tape<T>,
    a: Var,
    b: Var,
    g: &Tensor<T>,
    acc: &mut Vec<(Var, Tensor<T>)>,
) {
    let (va, vb) = (tape.value(a), tape.value(b));
    let shape = g.shape().to_vec();
    let ga = binary_values(g, vb, shape.clone(), |gv, y| gv * y);
    let gb = binary_values(g, va, shape, |gv, x| gv * x);
    acc.push((a, reduce_to(ga, tape.shape(a))));
    acc.push((b, reduce_to(gb, tape.shape(b))));
}

pub(crate) fn unary_backward<T: Real>(
    tape: &Tape<T>,
    a: Var,
    out: &Tensor<T>,
    g: &Tensor<T>,
    kind: Unary,
    acc: &mut Vec<(Var, Tensor<T>)>,
) {
    let x = tape.value(a).data();
    let y = out.data();
    let zero = T::zero();
    let one = T::one();
    let data: Vec<T> = match kind {
        Unary::Abs => g
            .data()
            .iter()
            .zip(x)
            .map(|(&gv, &xv)| {
                if xv > zero {
                    gv
                } else if xv < zero {
                    -gv
                } else {
                    zero
                }
            })
            .collect(),
        Unary::Relu => g
            .data()
            .iter()
            .zip(x)
            .map(|(&gv, &xv)| if xv > zero { gv } else { zero })
            .collect(),
        Unary::Sigmoid => g
            .data()
            .iter()
            .zip(y)
            .map(|(&gv, &yv)| gv * yv * (one - yv))
            .collect(),
        Unary::Tanh => g
            .data()
            .iter()
            .zip(y)
            .map(|(&gv, &yv)| gv * (one - yv * yv))
            .collect(),
        Unary::Elu => g
            .data()
            .iter()
            .zip(x.iter().zip(y))
            .map(|(&gv, (&xv, &yv))| if xv > zero { gv } else { gv * (yv + one) })
            .collect(),
    };
    acc.push((a, Tensor::raw(g.shape().to_vec(), data)));
}
