//! The audio-visual convolution-recurrent network.
//!
//! An audio encoder halves the Mel axis at every level while a video
//! encoder projects the (time-upsampled) visual embeddings to the same
//! geometry. Each level's audio and visual maps are fused by a 1×1
//! convolution into a skip connection. The deepest maps of both streams go
//! through an LSTM bottleneck, and the decoder climbs back level by level,
//! joining each (optionally soft-threshold-gated) skip before upsampling.

mod checkpoint;
mod config;
mod params;

use avcrn_tensor::{Conv2dSpec, Real, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use params::{BoundParams, ParamStore};

use crate::datagen::{VideoSegment, FRAMES_PER_SEGMENT};
use crate::dsp::{LogMelChunk, CHUNK_FRAMES, N_MELS};
use crate::error::{invalid, Result};
use crate::sta::{sta_forward, StaTrace, StaUnit, StaVars};

const TIME_REPEAT: usize = CHUNK_FRAMES / FRAMES_PER_SEGMENT;

/// Affine map applied to log-Mel values before they enter the network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl Normalizer {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(mean.is_finite() && std.is_finite() && std > 0.0) {
            return Err(invalid(format!("invalid normalization mean {mean}, std {std}")));
        }
        Ok(Self { mean, std })
    }

    /// Mean and standard deviation of every value in `chunks`.
    pub fn fit<'a>(chunks: impl IntoIterator<Item = &'a LogMelChunk>) -> Result<Self> {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for c in chunks {
            for &v in c.data() {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return Err(invalid("cannot fit normalization on no data"));
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        Self::new(mean, var.sqrt().max(1e-6))
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Parameters plus configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real = f64> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub norm: Normalizer,
}

fn uniform_init<R: rand::Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<f64> {
    let bound = (3.0 / fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

fn spec_same(kernel: (usize, usize)) -> Conv2dSpec {
    Conv2dSpec::new((1, 1), (kernel.0 / 2, kernel.1 / 2))
}

fn spec_down(kernel: (usize, usize)) -> Conv2dSpec {
    Conv2dSpec::new((2, 1), (kernel.0 / 2, kernel.1 / 2))
}

fn spec_up(kernel: (usize, usize)) -> Conv2dSpec {
    spec_down(kernel).with_output_padding((1, 0))
}

/// Builds every parameter in a fixed order from `config.seed`. Gate
/// parameters come from their own stream, so toggling STA leaves every
/// other initial weight unchanged.
fn init_params(c: &ModelConfig) -> Result<ParamStore<f64>> {
    c.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut gate_rng = ChaCha8Rng::seed_from_u64(c.seed);
    gate_rng.set_stream(1);
    let mut p = ParamStore::new();
    let (kf, kt) = c.kernel;
    let ch = &c.enc_channels;
    let levels = c.levels();
    let cin = |l: usize| if l == 1 { 1 } else { ch[l - 2] };

    for l in 1..=levels {
        let (ci, co) = (cin(l), ch[l - 1]);
        p.insert(format!("enc.{l}.w"), uniform_init(&[co, ci, kf, kt], ci * kf * kt, &mut rng))?;
        p.insert(format!("enc.{l}.b"), Tensor::zeros(&[co]))?;
    }
    for l in 1..=levels {
        let width = ch[l - 1] * c.freq_at(l);
        p.insert(format!("vid.{l}.w"), uniform_init(&[width, c.video_dim], c.video_dim, &mut rng))?;
        p.insert(format!("vid.{l}.b"), Tensor::zeros(&[width]))?;
    }
    for l in 1..=levels {
        let co = ch[l - 1];
        p.insert(format!("fuse.{l}.w"), uniform_init(&[co, 2 * co, 1, 1], 2 * co, &mut rng))?;
        p.insert(format!("fuse.{l}.b"), Tensor::zeros(&[co]))?;
    }
    let deep = ch[levels - 1] * c.freq_at(levels);
    let h = c.lstm_hidden;
    for k in 0..c.lstm_layers {
        let input = if k == 0 { 2 * deep } else { h };
        let bound = 1.0 / (h as f64).sqrt();
        p.insert(format!("lstm.{k}.w_ih"), Tensor::uniform(&[4 * h, input], -bound, bound, &mut rng))?;
        p.insert(format!("lstm.{k}.w_hh"), Tensor::uniform(&[4 * h, h], -bound, bound, &mut rng))?;
        // forget gate starts open
        let mut b = vec![0.0; 4 * h];
        b[h..2 * h].fill(1.0);
        p.insert(format!("lstm.{k}.b"), Tensor::from_vec(&[4 * h], b)?)?;
    }
    p.insert("proj.w", uniform_init(&[deep, h], h, &mut rng))?;
    p.insert("proj.b", Tensor::zeros(&[deep]))?;
    for l in (1..=levels).rev() {
        let co = ch[l - 1];
        let up_out = if l == 1 { ch[0] } else { ch[l - 2] };
        if c.sta_enabled {
            let u = StaUnit::<f64>::new(co, c.sta_reduction, c.sta_mode, &mut gate_rng)?;
            p.insert(format!("dec.{l}.sta.fc1.w"), u.fc1_w)?;
            p.insert(format!("dec.{l}.sta.fc1.b"), u.fc1_b)?;
            p.insert(format!("dec.{l}.sta.fc2.w"), u.fc2_w)?;
            p.insert(format!("dec.{l}.sta.fc2.b"), u.fc2_b)?;
        }
        p.insert(format!("dec.{l}.conv.w"), uniform_init(&[co, 2 * co, kf, kt], 2 * co * kf * kt, &mut rng))?;
        p.insert(format!("dec.{l}.conv.b"), Tensor::zeros(&[co]))?;
        p.insert(format!("dec.{l}.up.w"), uniform_init(&[co, up_out, kf, kt], co * kf * kt, &mut rng))?;
        p.insert(format!("dec.{l}.up.b"), Tensor::zeros(&[up_out]))?;
    }
    p.insert("out.w", uniform_init(&[1, ch[0], 1, 1], ch[0], &mut rng))?;
    p.insert("out.b", Tensor::zeros(&[1]))?;
    Ok(p)
}

impl Model<f64> {
    /// Fresh model; parameters are a pure function of `config` (including
    /// its seed).
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Self {
            config,
            params,
            norm: Normalizer::default(),
        })
    }
}

impl<T: Real> Model<T> {
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            norm: self.norm,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.n_values()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        self.params.bind(tape)
    }

    fn var(&self, p: &BoundParams, name: &str) -> Result<Var> {
        self.params.var(p, name)
    }

    /// Encoder maps `[B, C_l, 80/2^l, 20]` for `l = 1..=L` from
    /// `x: [B, 1, 80, 20]`.
    pub fn audio_encoder(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Vec<Var>> {
        let s = tape.shape(x);
        if s.len() != 4 || s[1] != 1 || s[2] != N_MELS || s[3] != CHUNK_FRAMES {
            return Err(invalid(format!(
                "audio encoder expects [B, 1, {N_MELS}, {CHUNK_FRAMES}], got {s:?}"
            )));
        }
        let mut maps = Vec::with_capacity(self.config.levels());
        let mut h = x;
        for l in 1..=self.config.levels() {
            let (w, b) = (self.var(p, &format!("enc.{l}.w"))?, self.var(p, &format!("enc.{l}.b"))?);
            let z = tape.conv2d(h, w, Some(b), spec_down(self.config.kernel))?;
            h = tape.elu(z)?;
            maps.push(h);
        }
        Ok(maps)
    }

    /// Visual maps shaped like the audio encoder's, from `v: [B, 5, D]`.
    pub fn video_encoder(&self, tape: &mut Tape<T>, p: &BoundParams, v: Var) -> Result<Vec<Var>> {
        let s = tape.shape(v).to_vec();
        if s.len() != 3 || s[1] != FRAMES_PER_SEGMENT || s[2] != self.config.video_dim {
            return Err(invalid(format!(
                "video encoder expects [B, {FRAMES_PER_SEGMENT}, {}], got {s:?}",
                self.config.video_dim
            )));
        }
        let batch = s[0];
        let mut maps = Vec::with_capacity(self.config.levels());
        for l in 1..=self.config.levels() {
            let (c, f) = (self.config.enc_channels[l - 1], self.config.freq_at(l));
            let (w, b) = (self.var(p, &format!("vid.{l}.w"))?, self.var(p, &format!("vid.{l}.b"))?);
            let y = tape.linear(v, w, Some(b))?;
            let y = tape.repeat_interleave(y, 1, TIME_REPEAT)?;
            let y = tape.reshape(y, &[batch, CHUNK_FRAMES, c, f])?;
            maps.push(tape.permute(y, &[0, 2, 3, 1])?);
        }
        Ok(maps)
    }

    /// Joins level-`l` audio and visual maps into a `C_l`-channel map.
    pub fn fuse_layer(&self, tape: &mut Tape<T>, p: &BoundParams, l: usize, a: Var, v: Var) -> Result<Var> {
        if tape.shape(a) != tape.shape(v) {
            return Err(invalid(format!(
                "level {l} audio {:?} and visual {:?} maps differ",
                tape.shape(a),
                tape.shape(v)
            )));
        }
        let cat = tape.concat_channels(a, v)?;
        let (w, b) = (self.var(p, &format!("fuse.{l}.w"))?, self.var(p, &format!("fuse.{l}.b"))?);
        let z = tape.conv2d(cat, w, Some(b), Conv2dSpec::new((1, 1), (0, 0)))?;
        Ok(tape.elu(z)?)
    }

    /// LSTM over the 20 time steps of the flattened deepest audio and
    /// visual maps, projected back to the audio map's shape.
    pub fn bottleneck(&self, tape: &mut Tape<T>, p: &BoundParams, a: Var, v: Var) -> Result<Var> {
        let s = tape.shape(a).to_vec();
        if s.len() != 4 || tape.shape(v) != s.as_slice() {
            return Err(invalid(format!(
                "bottleneck needs equal 4-D maps, got {s:?} and {:?}",
                tape.shape(v)
            )));
        }
        let (batch, c, f, t) = (s[0], s[1], s[2], s[3]);
        let a2 = tape.reshape(a, &[batch, c * f, t])?;
        let v2 = tape.reshape(v, &[batch, c * f, t])?;
        let joined = tape.concat_channels(a2, v2)?;
        let mut h = tape.permute(joined, &[0, 2, 1])?;
        for k in 0..self.config.lstm_layers {
            let w_ih = self.var(p, &format!("lstm.{k}.w_ih"))?;
            let w_hh = self.var(p, &format!("lstm.{k}.w_hh"))?;
            let b = self.var(p, &format!("lstm.{k}.b"))?;
            h = tape.lstm(h, w_ih, w_hh, b)?;
        }
        let (w, b) = (self.var(p, "proj.w")?, self.var(p, "proj.b")?);
        let y = tape.linear(h, w, Some(b))?;
        let y = tape.permute(y, &[0, 2, 1])?;
        Ok(tape.reshape(y, &[batch, c, f, t])?)
    }

    fn sta_vars(&self, p: &BoundParams, l: usize) -> Result<StaVars> {
        Ok(StaVars {
            fc1_w: self.var(p, &format!("dec.{l}.sta.fc1.w"))?,
            fc1_b: self.var(p, &format!("dec.{l}.sta.fc1.b"))?,
            fc2_w: self.var(p, &format!("dec.{l}.sta.fc2.w"))?,
            fc2_b: self.var(p, &format!("dec.{l}.sta.fc2.b"))?,
        })
    }

    /// Climbs from the bottleneck output through the fused skips (ordered
    /// deep to shallow) to a `[B, 1, 80, 20]` map.
    pub fn decoder(&self, tape: &mut Tape<T>, p: &BoundParams, d: Var, skips: &[Var]) -> Result<Var> {
        self.decoder_traced(tape, p, d, skips).map(|(y, _)| y)
    }

    /// [`decoder`](Self::decoder) plus the trace of every gate, deep to
    /// shallow (empty when gating is off).
    pub fn decoder_traced(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        mut d: Var,
        skips: &[Var],
    ) -> Result<(Var, Vec<StaTrace>)> {
        let levels = self.config.levels();
        if skips.len() != levels {
            return Err(invalid(format!("decoder needs {levels} skips, got {}", skips.len())));
        }
        let k = self.config.kernel;
        let mut traces = Vec::new();
        for (l, &skip) in (1..=levels).rev().zip(skips) {
            if tape.shape(skip) != tape.shape(d) {
                return Err(invalid(format!(
                    "level {l} skip {:?} does not match decoder state {:?}",
                    tape.shape(skip),
                    tape.shape(d)
                )));
            }
            let gated = if self.config.sta_enabled {
                let vars = self.sta_vars(p, l)?;
                let t = sta_forward(tape, &vars, self.config.sta_mode, skip)?;
                traces.push(t);
                t.y
            } else {
                skip
            };
            let cat = tape.concat_channels(d, gated)?;
            let (w, b) = (self.var(p, &format!("dec.{l}.conv.w"))?, self.var(p, &format!("dec.{l}.conv.b"))?);
            let z = tape.conv2d(cat, w, Some(b), spec_same(k))?;
            let h = tape.elu(z)?;
            let (w, b) = (self.var(p, &format!("dec.{l}.up.w"))?, self.var(p, &format!("dec.{l}.up.b"))?);
            let z = tape.conv_transpose2d(h, w, Some(b), spec_up(k))?;
            d = tape.elu(z)?;
        }
        let (w, b) = (self.var(p, "out.w")?, self.var(p, "out.b")?);
        let y = tape.conv2d(d, w, Some(b), Conv2dSpec::new((1, 1), (0, 0)))?;
        Ok((y, traces))
    }

    /// Predicted normalized clean log-Mel `[B, 80, 20]` from normalized
    /// noisy log-Mel `[B, 80, 20]` and video `[B, 5, D]`.
    pub fn forward(&self, tape: &mut Tape<T>, p: &BoundParams, noisy: Var, video: Var) -> Result<Var> {
        self.forward_traced(tape, p, noisy, video).map(|(y, _)| y)
    }

    /// [`forward`](Self::forward) plus the gate traces.
    pub fn forward_traced(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        noisy: Var,
        video: Var,
    ) -> Result<(Var, Vec<StaTrace>)> {
        let s = tape.shape(noisy).to_vec();
        if s.len() != 3 || s[1] != N_MELS || s[2] != CHUNK_FRAMES {
            return Err(invalid(format!(
                "model input must be [B, {N_MELS}, {CHUNK_FRAMES}], got {s:?}"
            )));
        }
        if tape.shape(video).first() != Some(&s[0]) {
            return Err(invalid(format!(
                "batch sizes differ: audio {} vs video {:?}",
                s[0],
                tape.shape(video).first()
            )));
        }
        let x = tape.reshape(noisy, &[s[0], 1, N_MELS, CHUNK_FRAMES])?;
        let audio = self.audio_encoder(tape, p, x)?;
        let visual = self.video_encoder(tape, p, video)?;
        let mut skips = Vec::with_capacity(audio.len());
        for (l, (&a, &v)) in audio.iter().zip(&visual).enumerate().rev() {
            skips.push(self.fuse_layer(tape, p, l + 1, a, v)?);
        }
        let deepest = audio.len() - 1;
        let d = self.bottleneck(tape, p, audio[deepest], visual[deepest])?;
        let (out, traces) = self.decoder_traced(tape, p, d, &skips)?;
        let out = tape.reshape(out, &s)?;
        let out = if self.config.residual { tape.add(out, noisy)? } else { out };
        Ok((out, traces))
    }

    /// Runs the network on raw log-Mel chunks and their video segments,
    /// applying and undoing the stored normalization.
    pub fn predict(&self, noisy: &[LogMelChunk], video: &[VideoSegment<'_>]) -> Result<Vec<LogMelChunk>> {
        if noisy.len() != video.len() {
            return Err(invalid(format!(
                "{} audio chunks but {} video segments",
                noisy.len(),
                video.len()
            )));
        }
        if noisy.is_empty() {
            return Ok(Vec::new());
        }
        let (x, v) = self.batch_inputs(noisy, video)?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let xv = tape.constant(x);
        let vv = tape.constant(v);
        let y = self.forward(&mut tape, &p, xv, vv)?;
        tape.value(y)
            .data()
            .chunks_exact(LogMelChunk::LEN)
            .map(|c| LogMelChunk::from_vec(c.iter().map(|&v| self.norm.invert(v.to_f64_lossless())).collect()))
            .collect()
    }

    /// Normalized `[B, 80, 20]` audio and `[B, 5, D]` video tensors.
    pub fn batch_inputs(&self, noisy: &[LogMelChunk], video: &[VideoSegment<'_>]) -> Result<(Tensor<T>, Tensor<T>)> {
        let d = self.config.video_dim;
        let mut xa = Vec::with_capacity(noisy.len() * LogMelChunk::LEN);
        for c in noisy {
            xa.extend(c.data().iter().map(|&v| T::from_f64_lossy(self.norm.apply(v))));
        }
        let mut xv = Vec::with_capacity(video.len() * FRAMES_PER_SEGMENT * d);
        for seg in video {
            if seg.dim() != d {
                return Err(invalid(format!("video width {} but the model expects {d}", seg.dim())));
            }
            xv.extend(seg.values().iter().map(|&v| T::from_f64_lossy(f64::from(v))));
        }
        Ok((
            Tensor::from_vec(&[noisy.len(), N_MELS, CHUNK_FRAMES], xa)?,
            Tensor::from_vec(&[video.len(), FRAMES_PER_SEGMENT, d], xv)?,
        ))
    }
}
