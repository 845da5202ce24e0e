//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Check this many randomly chosen entries across all inputs; `None`
    /// checks every entry.
    pub samples: Option<usize>,
    pub seed: u64,
    /// Magnitudes below this are compared on an absolute scale.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples: None,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradMismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<GradMismatch>,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of `build` against central differences.
///
/// `build` receives a fresh tape and one leaf per input and must return a
/// scalar loss. It is re-run twice per checked entry.
pub fn grad_check<F>(inputs: &[Tensor<f64>], build: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let total: usize = inputs.iter().map(Tensor::len).sum();
    if total == 0 {
        return Err(invalid("nothing to check"));
    }
    let picks: Vec<usize> = match opts.samples {
        Some(k) if k < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = sample(&mut rng, total, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..total).collect(),
    };

    let mut work = inputs.to_vec();
    let mut report = GradCheckReport::default();
    for flat in picks {
        let (mut input, mut index) = (0, flat);
        while index >= inputs[input].len() {
            index -= inputs[input].len();
            input += 1;
        }
        let orig = work[input].data()[index];
        work[input].data_mut()[index] = orig + opts.step;
        let up = eval(&work)?;
        work[input].data_mut()[index] = orig - opts.step;
        let down = eval(&work)?;
        work[input].data_mut()[index] = orig;

        let numeric = (up - down) / (2.0 * opts.step);
        let a = analytic[input].data()[index];
        let rel_err = relative_error(a, numeric, opts.floor);
        report.checked += 1;
        if rel_err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(rel_err);
            report.worst = Some(GradMismatch {
                input,
                index,
                analytic: a,
                numeric,
                rel_err,
            });
        }
    }
    Ok(report)
}

/// Scalar loss `sum(y ⊙ R)` for a fixed pseudo-random `R`, so every output
/// element contributes to the checked gradient.
pub fn projection_loss(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::uniform(tape.shape(y), -1.0, 1.0, &mut rng);
    let r = tape.constant(r);
    let prod = tape.mul(y, r)?;
    tape.sum(prod)
}
