//! Training loop, chunk batching, and the enhancement pipeline.

mod ablation;
mod config;

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::Path;

use avcrn_tensor::optim::{clip_grad_norm, Adam, AdamConfig};
use avcrn_tensor::{Real, Tape, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use ablation::{ablate, Ablation, ArmResult, ARM_PLAIN, ARM_STA};
pub use config::TrainConfig;

use crate::datagen::{load_split, video_frames_for, AvExample, Split, VideoTrack, FRAMES_PER_SEGMENT};
use crate::dsp::{chunk, log_mel, mel_pseudo_inverse, stft, LogMelChunk, Waveform, CHUNK_FRAMES, HOP};
use crate::error::{invalid, io_err, Error, Result};
use crate::model::{save_checkpoint, Checkpoint, Model, Normalizer, TrainState};

const EVAL_BATCH: usize = 64;

/// Log-Mel chunks of a waveform (trailing partial chunk dropped).
pub fn waveform_chunks(w: &Waveform) -> Result<Vec<LogMelChunk>> {
    Ok(chunk(&log_mel(&stft(w)?)?))
}

/// Global log-Mel statistics of the noisy inputs of `examples`.
pub fn fit_normalizer(examples: &[AvExample]) -> Result<Normalizer> {
    let chunks = examples
        .iter()
        .map(|ex| waveform_chunks(&ex.noisy))
        .collect::<Result<Vec<_>>>()?;
    Normalizer::fit(chunks.iter().flatten())
}

/// Normalized training chunks held as flat `f32` rows.
#[derive(Clone, Debug, Default)]
pub struct ChunkSet {
    noisy: Vec<f32>,
    clean: Vec<f32>,
    video: Vec<f32>,
    video_dim: usize,
    len: usize,
}

impl ChunkSet {
    /// Every complete chunk of every example, paired with its clean target
    /// and video segment.
    pub fn from_examples(examples: &[AvExample], norm: &Normalizer) -> Result<Self> {
        let mut set = Self::default();
        let to_f32 = |c: &LogMelChunk| c.data().iter().map(|&v| norm.apply(v) as f32).collect::<Vec<_>>();
        for (i, ex) in examples.iter().enumerate() {
            if set.len == 0 {
                set.video_dim = ex.video.dim();
            } else if ex.video.dim() != set.video_dim {
                return Err(invalid(format!(
                    "example {i} has video width {}, earlier ones {}",
                    ex.video.dim(),
                    set.video_dim
                )));
            }
            let noisy = waveform_chunks(&ex.noisy)?;
            let clean = waveform_chunks(&ex.clean)?;
            if noisy.len() != clean.len() || noisy.len() != ex.video.n_segments() {
                return Err(invalid(format!(
                    "example {i}: {} noisy chunks, {} clean chunks, {} video segments",
                    noisy.len(),
                    clean.len(),
                    ex.video.n_segments()
                )));
            }
            for ((n, c), v) in noisy.iter().zip(&clean).zip(ex.video.segments()) {
                set.noisy.extend(to_f32(n));
                set.clean.extend(to_f32(c));
                set.video.extend_from_slice(v.values());
                set.len += 1;
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn video_dim(&self) -> usize {
        self.video_dim
    }

    /// `(noisy [B, 80, 20], clean [B, 80, 20], video [B, 5, D])` for the
    /// chunks at `idx`.
    pub fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Tensor<f32>, Tensor<f32>) {
        let (a, v) = (LogMelChunk::LEN, FRAMES_PER_SEGMENT * self.video_dim);
        let gather = |src: &[f32], row: usize| idx.iter().flat_map(|&i| src[i * row..(i + 1) * row].iter().copied()).collect();
        let b = idx.len();
        let shape_a = [b, crate::dsp::N_MELS, CHUNK_FRAMES];
        (
            Tensor::from_vec(&shape_a, gather(&self.noisy, a)).expect("chunk rows"),
            Tensor::from_vec(&shape_a, gather(&self.clean, a)).expect("chunk rows"),
            Tensor::from_vec(&[b, FRAMES_PER_SEGMENT, self.video_dim], gather(&self.video, v)).expect("video rows"),
        )
    }
}

/// Normalized chunks of the train and validation splits.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: ChunkSet,
    pub val: ChunkSet,
    pub norm: Normalizer,
}

impl TrainData {
    /// Fits the normalizer on `train` and chunks both splits.
    pub fn from_examples(train: &[AvExample], val: &[AvExample]) -> Result<Self> {
        let norm = fit_normalizer(train)?;
        let data = Self {
            train: ChunkSet::from_examples(train, &norm)?,
            val: ChunkSet::from_examples(val, &norm)?,
            norm,
        };
        if data.train.is_empty() || data.val.is_empty() {
            return Err(invalid("train and validation splits need at least one chunk each"));
        }
        Ok(data)
    }

    /// Loads the train and val splits of a corpus written by
    /// [`write_corpus`](crate::datagen::write_corpus).
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        Self::from_examples(&load_split(root, Split::Train)?, &load_split(root, Split::Val)?)
    }
}

/// `(step, loss)` for every optimizer step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace(pub Vec<(u64, f64)>);

impl LossTrace {
    /// One `step loss` pair per line; losses use the shortest text that
    /// reads back to the same value.
    pub fn to_text(&self) -> String {
        self.0.iter().fold(String::new(), |mut s, (step, loss)| {
            let _ = writeln!(s, "{step} {loss:?}");
            s
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let mut it = l.split_whitespace();
                let step = it.next().and_then(|s| s.parse().ok());
                let loss = it.next().and_then(|s| s.parse().ok());
                match (step, loss, it.next()) {
                    (Some(s), Some(v), None) => Ok((s, v)),
                    _ => Err(invalid(format!("loss trace line {}: expected `step loss`", i + 1))),
                }
            })
            .collect::<Result<_>>()
            .map(Self)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    std::fs::write(tmp, bytes).map_err(io_err(tmp))?;
    std::fs::rename(tmp, path).map_err(io_err(path))
}

/// Where [`train`] persists its artifacts; `None` keeps them in memory only.
#[derive(Clone, Copy, Debug, Default)]
pub struct Outputs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub trace: Option<&'a Path>,
}

/// Events reported to the training observer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Progress {
    Step { step: u64, loss: f64 },
    Epoch { epoch: usize, train_loss: f64, val_loss: f64, improved: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
    StepBudget,
    Interrupted,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters and optimizer state at the lowest validation loss.
    pub best: Checkpoint,
    pub trace: LossTrace,
    /// Validation loss after every epoch (and after a mid-epoch stop).
    pub val_losses: Vec<f64>,
    pub best_epoch: usize,
    pub steps: u64,
    pub stop: StopReason,
}

impl TrainOutcome {
    pub fn best_val_loss(&self) -> f64 {
        self.val_losses[self.best_epoch]
    }
}

/// Mean squared error of `model` over every chunk of `set`.
pub fn mean_loss<T: Real>(model: &Model<T>, set: &ChunkSet) -> Result<f64> {
    if set.is_empty() {
        return Err(invalid("no chunks to evaluate"));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut total = 0.0;
    for b in idx.chunks(EVAL_BATCH) {
        let (x, y, v) = set.batch(b);
        let mut tape = Tape::<T>::new();
        let p = model.bind(&mut tape);
        let (xv, yv, vv) = (tape.constant(x.cast()), tape.constant(y.cast()), tape.constant(v.cast()));
        let out = model.forward(&mut tape, &p, xv, vv)?;
        let loss = tape.mse_loss(out, yv)?;
        total += tape.value(loss).item()?.to_f64_lossless() * b.len() as f64;
    }
    Ok(total / set.len() as f64)
}

fn snapshot(model: &Model<f32>, adam: &Adam<f32>, state: TrainState) -> Checkpoint {
    Checkpoint {
        model: model.cast(),
        adam_m: adam.first_moments().iter().map(Tensor::cast).collect(),
        adam_v: adam.second_moments().iter().map(Tensor::cast).collect(),
        state,
    }
}

/// Visiting order of `n` training chunks in `epoch`: a pure function of
/// `(seed, epoch, n)`.
pub fn batch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One Adam update on a batch; returns the batch loss. The update is
/// skipped when the loss is not finite.
fn train_step(
    model: &mut Model<f32>,
    adam: &mut Adam<f32>,
    (x, y, v): (Tensor<f32>, Tensor<f32>, Tensor<f32>),
    clip: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape);
    let (xv, yv, vv) = (tape.constant(x), tape.constant(y), tape.constant(v));
    let pred = model.forward(&mut tape, &p, xv, vv)?;
    let loss_var = tape.mse_loss(pred, yv)?;
    let loss = f64::from(tape.value(loss_var).item()?);
    if !loss.is_finite() {
        return Ok(loss);
    }
    let mut grads = tape.backward(loss_var)?;
    let mut g: Vec<Tensor<f32>> = p.vars().iter().map(|&v| grads.take(v)).collect();
    clip_grad_norm(&mut g, clip);
    adam.step(model.params.tensors_mut(), &g)?;
    Ok(loss)
}

/// Trains a fresh model (32-bit) with Adam on MSE between predicted and
/// clean normalized log-Mel chunks.
///
/// After every epoch the validation loss is measured; each improvement is
/// written to `out.checkpoint` by write-then-rename, so an interrupted run
/// always leaves the previous best readable. The observer may stop the run
/// early by returning `Break`.
pub fn train(
    cfg: &TrainConfig,
    data: &TrainData,
    out: Outputs<'_>,
    mut observer: impl FnMut(&Progress) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.video_dim() != cfg.model.video_dim {
        return Err(invalid(format!(
            "corpus video width {} but the model expects {}",
            data.train.video_dim(),
            cfg.model.video_dim
        )));
    }
    let mut init = Model::new(cfg.model.clone())?;
    init.norm = data.norm;
    let mut model = init.cast::<f32>();
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_cfg, model.params.tensors());

    let mut trace = LossTrace::default();
    let mut val_losses = Vec::new();
    let mut best: Option<(usize, Checkpoint)> = None;
    let mut step = 0u64;
    let mut stop = StopReason::MaxEpochs;

    'epochs: for epoch in 0..cfg.max_epochs {
        let order = batch_order(cfg.seed(), epoch, data.train.len());
        let (mut sum, mut count) = (0.0, 0usize);
        let mut halted = false;
        for b in order.chunks(cfg.batch_size) {
            step += 1;
            let loss = train_step(&mut model, &mut adam, data.train.batch(b), cfg.grad_clip_norm).map_err(|e| match e {
                Error::Tensor(TensorError::NonFinite(_)) => Error::Diverged { step, loss: f64::NAN },
                e => e,
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }

            trace.0.push((step, loss));
            sum += loss;
            count += 1;
            if observer(&Progress::Step { step, loss }).is_break() {
                stop = StopReason::Interrupted;
                halted = true;
            } else if cfg.max_steps.is_some_and(|m| step >= m) {
                stop = StopReason::StepBudget;
                halted = true;
            }
            if halted {
                break;
            }
        }

        let val_loss = mean_loss(&model, &data.val)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { step, loss: val_loss });
        }
        val_losses.push(val_loss);
        let improved = best.as_ref().is_none_or(|(e, _)| val_loss < val_losses[*e]);
        if improved {
            let state = TrainState {
                step,
                epoch: epoch as u64 + 1,
                seed: cfg.seed(),
                best_val_loss: Some(val_loss),
            };
            let ck = snapshot(&model, &adam, state);
            if let Some(path) = out.checkpoint {
                save_checkpoint(&ck, path)?;
            }
            best = Some((epoch, ck));
        }
        if let Some(path) = out.trace {
            write_atomic(path, trace.to_text().as_bytes())?;
        }
        let train_loss = sum / count.max(1) as f64;
        let flow = observer(&Progress::Epoch {
            epoch,
            train_loss,
            val_loss,
            improved,
        });
        if halted {
            break 'epochs;
        }
        if flow.is_break() {
            stop = StopReason::Interrupted;
            break;
        }
        let best_epoch = best.as_ref().map_or(epoch, |(e, _)| *e);
        if epoch - best_epoch >= cfg.patience {
            stop = StopReason::EarlyStopping;
            break;
        }
    }

    let (best_epoch, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        trace,
        val_losses,
        best_epoch,
        steps: step,
        stop,
    })
}

/// Convenience wrapper: loads the corpus named by `cfg.corpus`.
pub fn train_on_corpus(
    cfg: &TrainConfig,
    out: Outputs<'_>,
    observer: impl FnMut(&Progress) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    let root = cfg
        .corpus
        .as_deref()
        .ok_or_else(|| Error::Config("no corpus given".into()))?;
    let data = TrainData::load(root)?;
    train(cfg, &data, out, observer)
}

/// Enhances `noisy` with the model: complete 20-frame chunks go through the
/// network, the log-Mel is reassembled and inverted with the noisy phase.
/// Samples after the last complete chunk are copied from the input, so the
/// output has the input's length.
pub fn enhance<T: Real>(model: &Model<T>, noisy: &Waveform, video: &VideoTrack) -> Result<Waveform> {
    let expected = video_frames_for(noisy.len());
    if video.n_frames() != expected {
        return Err(invalid(format!(
            "{} noisy samples need {expected} video frames, got {}",
            noisy.len(),
            video.n_frames()
        )));
    }
    let spec = stft(noisy)?;
    let mut mel = log_mel(&spec)?;
    let chunks = chunk(&mel);
    let segments: Vec<_> = video.segments().collect();
    let mut enhanced = Vec::with_capacity(chunks.len());
    for (c, v) in chunks.chunks(EVAL_BATCH).zip(segments.chunks(EVAL_BATCH)) {
        enhanced.extend(model.predict(c, v)?);
    }
    for (i, c) in enhanced.iter().enumerate() {
        mel.write_chunk(i * CHUNK_FRAMES, c)?;
    }
    let mut out = mel_pseudo_inverse(&mel, &spec)?.into_samples();
    let done = (chunks.len() * CHUNK_FRAMES * HOP).min(noisy.len());
    out.truncate(noisy.len());
    out[done..].copy_from_slice(&noisy.samples()[done..]);
    Waveform::new(out)
}
