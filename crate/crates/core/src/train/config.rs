use std::fmt::Write as _;
use std::path::PathBuf;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Optimization settings plus the model they train.
///
/// `model.seed` drives both the parameter initialization and the batch
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub grad_clip_norm: f64,
    /// Hard cap on optimizer steps; validation runs once more when it hits.
    pub max_steps: Option<u64>,
    pub corpus: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: 1e-3,
            batch_size: 16,
            max_epochs: 25,
            patience: 10,
            grad_clip_norm: 5.0,
            max_steps: None,
            corpus: None,
        }
    }
}

impl TrainConfig {
    pub fn seed(&self) -> u64 {
        self.model.seed
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.grad_clip_norm.is_finite() && self.grad_clip_norm > 0.0) {
            return Err(Error::Config(format!(
                "grad_clip_norm must be positive, got {}",
                self.grad_clip_norm
            )));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Parses flat `key = value` text. Model keys and training keys share
    /// one namespace; anything unrecognized is an error.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut cfg = Self {
            model: ModelConfig::take_from(&mut kv, ModelConfig::default())?,
            ..Self::default()
        };
        if let Some(v) = kv.take("lr")? {
            cfg.lr = v;
        }
        if let Some(v) = kv.take("batch_size")? {
            cfg.batch_size = v;
        }
        if let Some(v) = kv.take("max_epochs")? {
            cfg.max_epochs = v;
        }
        if let Some(v) = kv.take("patience")? {
            cfg.patience = v;
        }
        if let Some(v) = kv.take("grad_clip_norm")? {
            cfg.grad_clip_norm = v;
        }
        cfg.max_steps = kv.take("max_steps")?;
        cfg.corpus = kv.take::<String>("corpus")?.map(PathBuf::from);
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.model.to_text();
        let _ = writeln!(s, "lr = {:e}", self.lr);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "grad_clip_norm = {:e}", self.grad_clip_norm);
        if let Some(n) = self.max_steps {
            let _ = writeln!(s, "max_steps = {n}");
        }
        if let Some(p) = &self.corpus {
            let _ = writeln!(s, "corpus = {}", p.display());
        }
        s
    }
}
