//! Finite-difference verification of every differentiable operation and
//! of the whole network at 64-bit.
//!
//! Inputs are kept at least [`KINK_MARGIN`] away from the non-smooth points
//! of `abs`, `relu` and soft thresholding. In the end-to-end check, where
//! thousands of gate entries make that impossible for the input, each
//! sampled parameter whose ±step stencil would move any gate entry across
//! a kink is skipped and another one drawn.

use avcrn_tensor::gradcheck::{grad_check, projection_loss, relative_error, GradCheckOptions};
use avcrn_tensor::{Conv2dSpec, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{BoundParams, Model, ModelConfig};
use crate::sta::{sta_forward, StaUnit, ThresholdMode};

pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const STEP: f64 = 1e-5;
pub const KINK_MARGIN: f64 = 1e-3;
/// Parameters sampled in the end-to-end check.
pub const MODEL_SAMPLES: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < self.tolerance
    }
}

fn tensor_err(e: Error) -> TensorError {
    TensorError::InvalidArgument(e.to_string())
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    uniform(shape, rng).map(|v| if v.abs() < KINK_MARGIN { (3.0 * KINK_MARGIN).copysign(v) } else { v })
}

struct Suite {
    results: Vec<CheckResult>,
}

impl Suite {
    fn op<F>(&mut self, name: &str, inputs: &[Tensor], f: F) -> Result<()>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> avcrn_tensor::Result<Var>,
    {
        let report = grad_check(
            inputs,
            |t, v| {
                let y = f(t, v)?;
                if t.value(y).len() == 1 {
                    Ok(y)
                } else {
                    projection_loss(t, y, 99)
                }
            },
            GradCheckOptions {
                step: STEP,
                ..GradCheckOptions::default()
            },
        )?;
        self.results.push(CheckResult {
            name: name.to_string(),
            checked: report.checked,
            max_rel_err: report.max_rel_err,
            tolerance: OP_TOLERANCE,
        });
        Ok(())
    }
}

fn op_checks(s: &mut Suite, rng: &mut ChaCha8Rng) -> Result<()> {
    let a = uniform(&[3, 4], rng);
    let b = uniform(&[3, 4], rng);
    let c = uniform(&[1], rng);
    s.op("add", &[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]))?;
    s.op("sub", &[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]))?;
    s.op("mul", &[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]))?;
    s.op("mul (broadcast scalar)", &[a.clone(), c.clone()], |t, v| t.mul(v[0], v[1]))?;
    s.op("scale", std::slice::from_ref(&a), |t, v| t.scale(v[0], -1.75))?;

    let x = off_zero(&[2, 3, 4], rng).map(|v| 3.0 * v);
    s.op("neg", std::slice::from_ref(&x), |t, v| t.neg(v[0]))?;
    s.op("abs", std::slice::from_ref(&x), |t, v| t.abs(v[0]))?;
    s.op("relu", std::slice::from_ref(&x), |t, v| t.relu(v[0]))?;
    s.op("sigmoid", std::slice::from_ref(&x), |t, v| t.sigmoid(v[0]))?;
    s.op("tanh", std::slice::from_ref(&x), |t, v| t.tanh(v[0]))?;
    s.op("elu", std::slice::from_ref(&x), |t, v| t.elu(v[0]))?;
    s.op("sum", std::slice::from_ref(&x), |t, v| t.sum(v[0]))?;
    s.op("mean", &[x], |t, v| t.mean(v[0]))?;

    let x = uniform(&[2, 3, 4], rng);
    let w = uniform(&[2, 4], rng);
    let bias = uniform(&[2], rng);
    s.op("linear", &[x.clone(), w.clone(), bias], |t, v| t.linear(v[0], v[1], Some(v[2])))?;
    s.op("linear (no bias)", &[x, w], |t, v| t.linear(v[0], v[1], None))?;

    let x = uniform(&[2, 3, 8, 5], rng);
    let k = uniform(&[4, 3, 3, 3], rng);
    let kb = uniform(&[4], rng);
    for (name, stride) in [("conv2d stride (1,1)", (1, 1)), ("conv2d stride (2,1)", (2, 1))] {
        s.op(name, &[x.clone(), k.clone(), kb.clone()], |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::new(stride, (1, 1)))
        })?;
    }
    let x = uniform(&[2, 4, 4, 5], rng);
    let k = uniform(&[4, 3, 3, 3], rng);
    let kb = uniform(&[3], rng);
    let spec = Conv2dSpec::new((2, 1), (1, 1)).with_output_padding((1, 0));
    s.op("conv_transpose2d", &[x, k, kb], |t, v| t.conv_transpose2d(v[0], v[1], Some(v[2]), spec))?;

    let (hidden, input) = (5, 3);
    let inputs = [
        uniform(&[2, 4, input], rng),
        uniform(&[4 * hidden, input], rng),
        uniform(&[4 * hidden, hidden], rng),
        uniform(&[4 * hidden], rng),
    ];
    s.op("lstm", &inputs, |t, v| t.lstm(v[0], v[1], v[2], v[3]))?;

    let x = off_zero(&[2, 3, 4, 5], rng);
    s.op("global_avg_pool_abs", std::slice::from_ref(&x), |t, v| t.global_avg_pool_abs(v[0]))?;
    s.op("mean_channels", &[uniform(&[3, 4], rng)], |t, v| t.mean_channels(v[0]))?;
    s.op("concat_channels", &[x.clone(), uniform(&[2, 2, 4, 5], rng)], |t, v| t.concat_channels(v[0], v[1]))?;
    s.op("permute", std::slice::from_ref(&x), |t, v| t.permute(v[0], &[0, 3, 1, 2]))?;
    s.op("reshape", std::slice::from_ref(&x), |t, v| t.reshape(v[0], &[6, 20]))?;
    s.op("repeat_interleave", &[uniform(&[2, 5, 3], rng)], |t, v| t.repeat_interleave(v[0], 1, 4))?;

    let tau: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..0.6)).collect();
    let mut x = uniform(&[2, 3, 4, 5], rng);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        let t = tau[i / 20];
        if (v.abs() - t).abs() < KINK_MARGIN {
            *v = v.signum() * (t + 2.0 * KINK_MARGIN);
        }
    }
    let tau = Tensor::from_vec(&[2, 3], tau)?;
    s.op("soft_threshold", &[x.clone(), tau], |t, v| t.soft_threshold(v[0], v[1]))?;
    s.op("mse_loss", &[x, uniform(&[2, 3, 4, 5], rng)], |t, v| t.mse_loss(v[0], v[1]))?;
    Ok(())
}

/// Smallest distance of the gate's inputs from its kinks.
fn sta_margin(u: &StaUnit, x: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = u.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let t = sta_forward(&mut tape, &vars, u.mode, xv)?;
    let tau = tape.value(t.tau).data();
    let per = x.len() / tau.len();
    let thr = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| (v.abs() - tau[i / per]).abs());
    let pre = tape.value(t.pre).data().iter().map(|v| v.abs());
    let zero = x.data().iter().map(|v| v.abs());
    Ok(thr.chain(pre).chain(zero).fold(f64::INFINITY, f64::min))
}

fn sta_checks(s: &mut Suite, rng: &mut ChaCha8Rng) -> Result<()> {
    for (name, mode) in [("sta (per-channel)", ThresholdMode::PerChannel), ("sta (scalar)", ThresholdMode::Scalar)] {
        let (u, x) = loop {
            let u = StaUnit::<f64>::new(8, 4, mode, rng)?;
            let x = Tensor::uniform(&[2, 8, 3, 4], -2.0, 2.0, rng);
            if sta_margin(&u, &x)? > KINK_MARGIN {
                break (u, x);
            }
        };
        let inputs = [x, u.fc1_w, u.fc1_b, u.fc2_w, u.fc2_b];
        s.op(name, &inputs, |t, v| {
            let vars = crate::sta::StaVars {
                fc1_w: v[1],
                fc1_b: v[2],
                fc2_w: v[3],
                fc2_b: v[4],
            };
            Ok(sta_forward(t, &vars, mode, v[0])?.y)
        })?;
    }
    Ok(())
}

fn bottleneck_check(s: &mut Suite, rng: &mut ChaCha8Rng) -> Result<()> {
    let m = Model::new(ModelConfig {
        enc_channels: vec![2, 2, 2, 4],
        lstm_hidden: 8,
        video_dim: 8,
        ..ModelConfig::default()
    })?;
    let mut inputs = vec![uniform(&[2, 4, 5, 20], rng), uniform(&[2, 4, 5, 20], rng)];
    let first = inputs.len();
    let bottleneck: Vec<usize> = m
        .params
        .names()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.starts_with("lstm.") || n.starts_with("proj."))
        .map(|(i, _)| i)
        .collect();
    inputs.extend(bottleneck.iter().map(|&i| m.params.tensors()[i].clone()));
    let report = grad_check(
        &inputs,
        |t, v| {
            let mut all = m.bind(t).vars().to_vec();
            for (k, &i) in bottleneck.iter().enumerate() {
                all[i] = v[first + k];
            }
            let p = BoundParams::from_vars(all);
            let y = m.bottleneck(t, &p, v[0], v[1]).map_err(tensor_err)?;
            projection_loss(t, y, 7)
        },
        GradCheckOptions {
            step: STEP,
            samples: Some(300),
            seed: rng.random(),
            ..GradCheckOptions::default()
        },
    )?;
    s.results.push(CheckResult {
        name: "bottleneck (C=4, F=5)".into(),
        checked: report.checked,
        max_rel_err: report.max_rel_err,
        tolerance: MODEL_TOLERANCE,
    });
    Ok(())
}

fn loss_and_pattern(m: &Model, params: &[Tensor], x: &Tensor, v: &Tensor) -> Result<(f64, Vec<bool>)> {
    let mut tape = Tape::new();
    let p = BoundParams::from_vars(params.iter().map(|t| tape.leaf(t.clone())).collect());
    let (xv, vv) = (tape.constant(x.clone()), tape.constant(v.clone()));
    let (y, traces) = m.forward_traced(&mut tape, &p, xv, vv)?;
    let loss = projection_loss(&mut tape, y, 5)?;
    let mut pattern = Vec::new();
    for t in traces {
        let tau = tape.value(t.tau).data();
        let per = tape.value(t.x).len() / tau.len();
        pattern.extend(tape.value(t.x).data().iter().enumerate().map(|(i, z)| z.abs() > tau[i / per]));
        pattern.extend(tape.value(t.pre).data().iter().map(|&z| z > 0.0));
    }
    Ok((tape.value(loss).item()?, pattern))
}

/// End-to-end check of `cfg` on random inputs: [`MODEL_SAMPLES`] random
/// parameter entries whose stencils stay on one side of every kink.
pub fn model_check(cfg: ModelConfig, seed: u64) -> Result<CheckResult> {
    let m = Model::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&[2, 80, 20], &mut rng).map(|v| 2.0 * v);
    let v = uniform(&[2, 5, m.config.video_dim], &mut rng);
    let params: Vec<Tensor> = m.params.tensors().to_vec();

    let mut tape = Tape::new();
    let p = m.bind(&mut tape);
    let (xv, vv) = (tape.constant(x.clone()), tape.constant(v.clone()));
    let y = m.forward(&mut tape, &p, xv, vv)?;
    let loss = projection_loss(&mut tape, y, 5)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = p.vars().iter().map(|&v| grads.wrt(v)).collect();

    let (_, base) = loss_and_pattern(&m, &params, &x, &v)?;
    let sizes: Vec<usize> = params.iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    let mut work = params.clone();
    while checked < MODEL_SAMPLES {
        if skipped > 10 * MODEL_SAMPLES {
            return Err(Error::NumericDegenerate("too many stencils straddle a gate kink".into()));
        }
        let mut idx = rng.random_range(0..total);
        let mut which = 0;
        while idx >= sizes[which] {
            idx -= sizes[which];
            which += 1;
        }
        let orig = work[which].data()[idx];
        work[which].data_mut()[idx] = orig + STEP;
        let (up, pu) = loss_and_pattern(&m, &work, &x, &v)?;
        work[which].data_mut()[idx] = orig - STEP;
        let (down, pd) = loss_and_pattern(&m, &work, &x, &v)?;
        work[which].data_mut()[idx] = orig;
        if pu != base || pd != base {
            skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic[which].data()[idx], numeric, 1e-6));
        checked += 1;
    }
    Ok(CheckResult {
        name: String::new(),
        checked,
        max_rel_err: worst,
        tolerance: MODEL_TOLERANCE,
    })
}

/// Runs every check; the result order is stable.
pub fn run(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Suite { results: Vec::new() };
    op_checks(&mut s, &mut rng)?;
    sta_checks(&mut s, &mut rng)?;
    bottleneck_check(&mut s, &mut rng)?;
    let arms = [
        ("model (tiny, STA per-channel)", ModelConfig::tiny()),
        (
            "model (tiny, STA scalar)",
            ModelConfig {
                sta_mode: ThresholdMode::Scalar,
                ..ModelConfig::tiny()
            },
        ),
        (
            "model (tiny, no STA)",
            ModelConfig {
                sta_enabled: false,
                ..ModelConfig::tiny()
            },
        ),
    ];
    for (name, cfg) in arms {
        let mut r = model_check(cfg, rng.random())?;
        r.name = name.into();
        s.results.push(r);
    }
    Ok(s.results)
}
