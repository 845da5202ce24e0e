use std::fmt::Write as _;

use crate::config::KeyValues;
use crate::datagen::DEFAULT_VIDEO_DIM;
use crate::dsp::N_MELS;
use crate::error::{Error, Result};
use crate::sta::{ThresholdMode, DEFAULT_REDUCTION};

/// Network hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Channels of each encoder level; level `l` halves the Mel axis.
    pub enc_channels: Vec<usize>,
    /// `(frequency, time)` kernel extent of every 2-D convolution.
    pub kernel: (usize, usize),
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub video_dim: usize,
    pub sta_enabled: bool,
    pub sta_reduction: usize,
    pub sta_mode: ThresholdMode,
    /// Add the (normalized) noisy input to the decoder output.
    pub residual: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            enc_channels: vec![16, 32, 64, 128],
            kernel: (3, 3),
            lstm_hidden: 256,
            lstm_layers: 2,
            video_dim: DEFAULT_VIDEO_DIM,
            sta_enabled: true,
            sta_reduction: DEFAULT_REDUCTION,
            sta_mode: ThresholdMode::PerChannel,
            residual: true,
            seed: 0,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ModelConfig {
    /// `enc_channels [4, 8]`, `lstm_hidden 16`, `video_dim 8`.
    pub fn tiny() -> Self {
        Self {
            enc_channels: vec![4, 8],
            lstm_hidden: 16,
            video_dim: 8,
            ..Self::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.enc_channels.len()
    }

    /// Mel extent at encoder level `l` (1-based; level 0 is the input).
    pub fn freq_at(&self, l: usize) -> usize {
        N_MELS >> l
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.levels();
        if l < 2 {
            return Err(cfg_err("enc_channels needs at least two levels"));
        }
        if !N_MELS.is_multiple_of(1 << l) {
            return Err(cfg_err(format!(
                "{N_MELS} Mel bands cannot be halved {l} times"
            )));
        }
        if self.enc_channels.contains(&0) {
            return Err(cfg_err("every encoder level needs at least one channel"));
        }
        let (kf, kt) = self.kernel;
        if kf % 2 == 0 || kt % 2 == 0 || kf < 3 || kt == 0 {
            return Err(cfg_err(format!(
                "kernel {kf}x{kt} must be odd with a frequency extent of at least 3"
            )));
        }
        if self.lstm_hidden == 0 || self.lstm_layers == 0 {
            return Err(cfg_err("the bottleneck needs at least one LSTM layer of width ≥ 1"));
        }
        if self.video_dim == 0 {
            return Err(cfg_err("video_dim must be positive"));
        }
        if self.sta_reduction == 0 {
            return Err(cfg_err("sta_reduction must be positive"));
        }
        Ok(())
    }

    /// Canonical `key = value` text; [`from_text`](Self::from_text) parses it
    /// back to an equal config.
    pub fn to_text(&self) -> String {
        let list = self
            .enc_channels
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "enc_channels = {list}");
        let _ = writeln!(s, "kernel = {}, {}", self.kernel.0, self.kernel.1);
        let _ = writeln!(s, "lstm_hidden = {}", self.lstm_hidden);
        let _ = writeln!(s, "lstm_layers = {}", self.lstm_layers);
        let _ = writeln!(s, "video_dim = {}", self.video_dim);
        let _ = writeln!(s, "sta_enabled = {}", self.sta_enabled);
        let _ = writeln!(s, "sta_reduction = {}", self.sta_reduction);
        let _ = writeln!(s, "sta_mode = {}", self.sta_mode);
        let _ = writeln!(s, "residual = {}", self.residual);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// Takes the model keys out of `kv`, leaving the rest for the caller.
    pub fn take_from(kv: &mut KeyValues, mut base: Self) -> Result<Self> {
        if let Some(v) = kv.take_list("enc_channels")? {
            base.enc_channels = v;
        }
        if let Some(v) = kv.take_list::<usize>("kernel")? {
            match v[..] {
                [f, t] => base.kernel = (f, t),
                _ => return Err(cfg_err("kernel needs two values")),
            }
        }
        if let Some(v) = kv.take("lstm_hidden")? {
            base.lstm_hidden = v;
        }
        if let Some(v) = kv.take("lstm_layers")? {
            base.lstm_layers = v;
        }
        if let Some(v) = kv.take("video_dim")? {
            base.video_dim = v;
        }
        if let Some(v) = kv.take("sta_enabled")? {
            base.sta_enabled = v;
        }
        if let Some(v) = kv.take("sta_reduction")? {
            base.sta_reduction = v;
        }
        if let Some(v) = kv.take::<String>("sta_mode")? {
            base.sta_mode = v.parse().map_err(|e: Error| cfg_err(e.to_string()))?;
        }
        if let Some(v) = kv.take("residual")? {
            base.residual = v;
        }
        if let Some(v) = kv.take("seed")? {
            base.seed = v;
        }
        base.validate()?;
        Ok(base)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let cfg = Self::take_from(&mut kv, Self::default())?;
        kv.finish()?;
        Ok(cfg)
    }
}
