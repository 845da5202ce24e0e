use crate::error::{invalid, Result, TensorError};
use crate::ops::conv::Conv2dSpec;
use crate::ops::lstm::LstmCache;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, T),
    Abs(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    Sum(Var),
    Mean(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    },
    ConvTranspose2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    },
    Lstm {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        cache: Box<LstmCache<T>>,
    },
    AvgPoolAbs(Var),
    MeanChannels(Var),
    Concat(Var, Var),
    SoftThreshold {
        x: Var,
        tau: Var,
    },
    Mse(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Repeat {
        x: Var,
        axis: usize,
        factor: usize,
    },
}

pub(crate) struct Node<T: Real> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Records a forward computation for one reverse sweep.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order. [`Tape::backward`] consumes the tape.
pub struct Tape<T: Real = f64> {
    pub(crate) nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Enables or disables the per-op NaN/Inf check (on by default in debug builds).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input (parameter or probed input).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub(crate) fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(TensorError::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`, returning gradients for every
    /// differentiable node. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let loss_shape = self.shape(loss).to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(invalid(format!(
                "backward needs a scalar loss, got shape {loss_shape:?}"
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let leaves: Vec<bool> = self
            .nodes
            .iter()
            .map(|n| matches!(n.op, Op::Leaf) && n.requires_grad)
            .collect();
        grads[loss.0] = Some(Tensor::full(&loss_shape, T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (var, contrib) in self.backward_node(i, &g)? {
                debug_assert_eq!(contrib.shape(), shapes[var.0].as_slice());
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot => *slot = Some(contrib),
                }
            }
        }

        for (i, g) in grads.iter_mut().enumerate() {
            if !leaves[i] {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        use crate::ops::{conv, elementwise as ew, linear, lstm, reduce, shrink, structure};
        let need = |v: Var| self.requires_grad(v);
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => ew::add_backward(self, *a, *b, g, T::one(), &mut acc),
            Op::Sub(a, b) => ew::add_backward(self, *a, *b, g, -T::one(), &mut acc),
            Op::Mul(a, b) => ew::mul_backward(self, *a, *b, g, &mut acc),
            Op::Neg(a) => acc.push((*a, g.map(|v| -v))),
            Op::Scale(a, c) => {
                let c = *c;
                acc.push((*a, g.map(|v| v * c)));
            }
            Op::Abs(a) => ew::unary_backward(self, *a, out, g, ew::Unary::Abs, &mut acc),
            Op::Relu(a) => ew::unary_backward(self, *a, out, g, ew::Unary::Relu, &mut acc),
            Op::Sigmoid(a) => ew::unary_backward(self, *a, out, g, ew::Unary::Sigmoid, &mut acc),
            Op::Tanh(a) => ew::unary_backward(self, *a, out, g, ew::Unary::Tanh, &mut acc),
            Op::Elu(a) => ew::unary_backward(self, *a, out, g, ew::Unary::Elu, &mut acc),
            Op::Sum(a) => {
                let s = g.data()[0];
                acc.push((*a, Tensor::full(self.shape(*a), s)));
            }
            Op::Mean(a) => {
                let n = T::from_usize(self.value(*a).len()).unwrap();
                acc.push((*a, Tensor::full(self.shape(*a), g.data()[0] / n)));
            }
            Op::Linear { x, w, b } => linear::backward(self, *x, *w, *b, g, &need, &mut acc),
            Op::Conv2d { x, k, b, spec } => {
                conv::conv2d_backward(self, *x, *k, *b, spec, g, &need, &mut acc)
            }
            Op::ConvTranspose2d { x, k, b, spec } => {
                conv::conv_transpose2d_backward(self, *x, *k, *b, spec, g, &need, &mut acc)
            }
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                b,
                cache,
            } => lstm::backward(self, *x, *w_ih, *w_hh, *b, cache, out, g, &need, &mut acc),
            Op::AvgPoolAbs(x) => reduce::avg_pool_abs_backward(self, *x, g, &mut acc),
            Op::MeanChannels(x) => reduce::mean_channels_backward(self, *x, g, &mut acc),
            Op::Concat(a, b) => structure::concat_backward(self, *a, *b, g, &need, &mut acc),
            Op::SoftThreshold { x, tau } => {
                shrink::soft_threshold_backward(self, *x, *tau, g, &need, &mut acc)
            }
            Op::Mse(p, t) => reduce::mse_backward(self, *p, *t, g, &need, &mut acc),
            Op::Reshape(a) => acc.push((*a, g.clone().reshape(self.shape(*a))?)),
            Op::Permute(a, axes) => acc.push((*a, structure::permute_inverse(g, axes))),
            Op::Repeat { x, axis, factor } => {
                acc.push((*x, structure::repeat_backward(self.shape(*x), g, *axis, *factor)))
            }
        }
        acc.retain(|(v, _)| need(*v));
        Ok(acc)
    }
}

/// Gradients of a scalar loss with respect to every leaf of a tape.
pub struct Gradients<T: Real = f64> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`; leaves the loss does not depend on get zeros.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Moves the gradient for `v` out, leaving zeros behind.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}
