//! Soft-threshold attention: a learned, input-dependent shrinkage gate.
//!
//! For a feature map `X: [B, C, F, T]` the gate computes the mean absolute
//! activation `s = Avg|X|` per channel, an attention mask
//! `α = sigmoid(fc2(relu(fc1(s))))`, the threshold `τ = α·s` and returns the
//! soft-thresholded map `Y = sign(X)·max(|X| − τ, 0)`.

use std::fmt;
use std::str::FromStr;

use avcrn_tensor::{Real, Tape, Tensor, TensorError, Var};
use rand::Rng;

use crate::error::{invalid, Error, Result};

pub const DEFAULT_REDUCTION: usize = 4;

/// Granularity of the learned threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ThresholdMode {
    /// One threshold per item and channel.
    #[default]
    PerChannel,
    /// One threshold per item, `α·mean_c(s)`.
    Scalar,
}

impl ThresholdMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMode::PerChannel => "channel",
            ThresholdMode::Scalar => "scalar",
        }
    }
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channel" => Ok(ThresholdMode::PerChannel),
            "scalar" => Ok(ThresholdMode::Scalar),
            _ => Err(invalid(format!("unknown threshold mode `{s}`"))),
        }
    }
}

/// Width of the hidden layer for `channels` inputs.
pub fn bottleneck_width(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(1)
}

/// Parameters of one gate: `fc1: [h, C]`, `fc2: [C, h]` (or `[1, h]` in
/// scalar mode), with `h = max(1, C / r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StaUnit<T: Real = f64> {
    pub mode: ThresholdMode,
    pub fc1_w: Tensor<T>,
    pub fc1_b: Tensor<T>,
    pub fc2_w: Tensor<T>,
    pub fc2_b: Tensor<T>,
}

/// Tape handles to an [`StaUnit`]'s parameters.
#[derive(Clone, Copy, Debug)]
pub struct StaVars {
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

/// Intermediate values of one gate application.
#[derive(Clone, Copy, Debug)]
pub struct StaTrace {
    pub x: Var,
    /// `Avg|X|`, `[B, C]`.
    pub s: Var,
    /// First fully-connected layer before the relu.
    pub pre: Var,
    /// Attention mask, `[B, C]` or `[B, 1]`.
    pub alpha: Var,
    /// Threshold, same shape as `alpha`.
    pub tau: Var,
    pub y: Var,
}

fn fc_shapes(channels: usize, reduction: usize, mode: ThresholdMode) -> ([usize; 2], [usize; 2]) {
    let h = bottleneck_width(channels, reduction);
    let out = match mode {
        ThresholdMode::PerChannel => channels,
        ThresholdMode::Scalar => 1,
    };
    ([h, channels], [out, h])
}

impl<T: Real> StaUnit<T> {
    /// Weights uniform in `±1/sqrt(fan_in)`, zero biases.
    pub fn new<R: Rng + ?Sized>(channels: usize, reduction: usize, mode: ThresholdMode, rng: &mut R) -> Result<Self> {
        if channels == 0 || reduction == 0 {
            return Err(invalid("STA needs at least one channel and a positive reduction"));
        }
        let (s1, s2) = fc_shapes(channels, reduction, mode);
        let b1 = 1.0 / (s1[1] as f64).sqrt();
        let b2 = 1.0 / (s2[1] as f64).sqrt();
        Ok(Self {
            mode,
            fc1_w: Tensor::uniform(&s1, -b1, b1, rng),
            fc1_b: Tensor::zeros(&[s1[0]]),
            fc2_w: Tensor::uniform(&s2, -b2, b2, rng),
            fc2_b: Tensor::zeros(&[s2[0]]),
        })
    }

    /// All-zero weights and biases, so `α ≡ 0.5`.
    pub fn zeroed(channels: usize, reduction: usize, mode: ThresholdMode) -> Result<Self> {
        if channels == 0 || reduction == 0 {
            return Err(invalid("STA needs at least one channel and a positive reduction"));
        }
        let (s1, s2) = fc_shapes(channels, reduction, mode);
        Ok(Self {
            mode,
            fc1_w: Tensor::zeros(&s1),
            fc1_b: Tensor::zeros(&[s1[0]]),
            fc2_w: Tensor::zeros(&s2),
            fc2_b: Tensor::zeros(&[s2[0]]),
        })
    }

    pub fn channels(&self) -> usize {
        self.fc1_w.shape()[1]
    }

    pub fn n_params(&self) -> usize {
        self.fc1_w.len() + self.fc1_b.len() + self.fc2_w.len() + self.fc2_b.len()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> StaVars {
        StaVars {
            fc1_w: tape.leaf(self.fc1_w.clone()),
            fc1_b: tape.leaf(self.fc1_b.clone()),
            fc2_w: tape.leaf(self.fc2_w.clone()),
            fc2_b: tape.leaf(self.fc2_b.clone()),
        }
    }

    /// Applies the gate to a concrete map, returning `(Y, τ, α)`.
    pub fn apply(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let t = sta_forward(&mut tape, &vars, self.mode, xv)?;
        Ok((
            tape.value(t.y).clone(),
            tape.value(t.tau).clone(),
            tape.value(t.alpha).clone(),
        ))
    }
}

/// Records one gate application on `tape`. `x` is `[B, C, ...]` with `C`
/// matching the gate's width.
pub fn sta_forward<T: Real>(
    tape: &mut Tape<T>,
    p: &StaVars,
    mode: ThresholdMode,
    x: Var,
) -> avcrn_tensor::Result<StaTrace> {
    let xs = tape.shape(x);
    let width = tape.shape(p.fc1_w)[1];
    if xs.len() < 3 || xs[1] != width {
        return Err(TensorError::ShapeMismatch {
            op: "sta_forward",
            lhs: xs.to_vec(),
            rhs: tape.shape(p.fc1_w).to_vec(),
        });
    }
    let s = tape.global_avg_pool_abs(x)?;
    let pre = tape.linear(s, p.fc1_w, Some(p.fc1_b))?;
    let h = tape.relu(pre)?;
    let z = tape.linear(h, p.fc2_w, Some(p.fc2_b))?;
    let alpha = tape.sigmoid(z)?;
    let level = match mode {
        ThresholdMode::PerChannel => s,
        ThresholdMode::Scalar => tape.mean_channels(s)?,
    };
    let tau = tape.mul(alpha, level)?;
    let y = tape.soft_threshold(x, tau)?;
    Ok(StaTrace { x, s, pre, alpha, tau, y })
}

/// Fraction of entries that are exactly zero.
pub fn sta_sparsity<T: Real>(y: &Tensor<T>) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    y.data().iter().filter(|v| **v == T::zero()).count() as f64 / y.len() as f64
}
