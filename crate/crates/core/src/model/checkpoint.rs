//! Binary checkpoint container.
//!
//! All integers are little-endian:
//!
//! ```text
//! magic      8 bytes   "AVCRNCK\0"
//! version    u32
//! config     u32 byte length, UTF-8 `key = value` model config
//! state      u32 byte length, UTF-8 `key = value` training state
//! count      u32 number of tensors
//! tensor*    u32 name length, UTF-8 name, u32 rank, rank × u64 extents,
//!            product(extents) × f64 values
//! ```
//!
//! Tensors are the model parameters in construction order, then
//! `adam.m/<param>` and `adam.v/<param>` when optimizer state is present,
//! then `norm.mean` and `norm.std` as rank-0 tensors. Trailing bytes are an
//! error.

use std::fmt::Write as _;
use std::path::Path;

use avcrn_tensor::Tensor;

use super::{Model, ModelConfig, Normalizer, ParamStore};
use crate::config::KeyValues;
use crate::error::{io_err, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AVCRNCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Progress of the run that produced a checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainState {
    /// Optimizer steps taken.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
    /// Seed of the batch-order generator; the order of epoch `e` is a pure
    /// function of `(seed, e)`.
    pub seed: u64,
    pub best_val_loss: Option<f64>,
}

impl TrainState {
    fn to_text(self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "step = {}", self.step);
        let _ = writeln!(s, "epoch = {}", self.epoch);
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(v) = self.best_val_loss {
            let _ = writeln!(s, "best_val_loss = {v:e}");
        }
        s
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let need = |v: Option<u64>, k: &str| v.ok_or_else(|| Error::Checkpoint(format!("state lacks `{k}`")));
        let state = Self {
            step: need(kv.take("step")?, "step")?,
            epoch: need(kv.take("epoch")?, "epoch")?,
            seed: need(kv.take("seed")?, "seed")?,
            best_val_loss: kv.take("best_val_loss")?,
        };
        kv.finish()?;
        Ok(state)
    }
}

/// A model plus the optimizer and run state needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f64>,
    /// Adam first and second moments, one per parameter; empty for an
    /// inference-only checkpoint.
    pub adam_m: Vec<Tensor<f64>>,
    pub adam_v: Vec<Tensor<f64>>,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn inference(model: Model<f64>) -> Self {
        Self {
            model,
            adam_m: Vec::new(),
            adam_v: Vec::new(),
            state: TrainState::default(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.model.params;
        if self.adam_m.len() != self.adam_v.len() || !(self.adam_m.is_empty() || self.adam_m.len() == p.len()) {
            return Err(Error::Checkpoint(format!(
                "{} first and {} second moments for {} parameters",
                self.adam_m.len(),
                self.adam_v.len(),
                p.len()
            )));
        }
        let mut out = Vec::with_capacity(16 + 8 * (3 * p.n_values()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_text(&mut out, &self.model.config.to_text())?;
        put_text(&mut out, &self.state.to_text())?;

        let mut tensors: Vec<(String, &Tensor<f64>)> = p.iter().map(|(n, t)| (n.to_string(), t)).collect();
        for (prefix, moments) in [("adam.m", &self.adam_m), ("adam.v", &self.adam_v)] {
            tensors.extend(p.names().iter().zip(moments).map(|(n, t)| (format!("{prefix}/{n}"), t)));
        }
        let mean = Tensor::scalar(self.model.norm.mean);
        let std = Tensor::scalar(self.model.norm.std);
        tensors.push(("norm.mean".into(), &mean));
        tensors.push(("norm.std".into(), &std));

        put_u32(&mut out, tensors.len())?;
        for (name, t) in tensors {
            put_text(&mut out, &name)?;
            put_u32(&mut out, t.rank())?;
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let config = ModelConfig::from_text(&r.text()?)?;
        let state = TrainState::from_text(&r.text()?)?;
        let expected = Model::new(config.clone())?.params;

        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        let (mut adam_m, mut adam_v) = (Vec::new(), Vec::new());
        let (mut mean, mut std) = (None, None);
        for _ in 0..count {
            let name = r.text()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|e| e as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .filter(|&n| n <= r.remaining() / 8)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` runs past the end of the data")))?;
            let data = r
                .take(8 * n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::from_vec(&shape, data)?;
            if let Some(base) = name.strip_prefix("adam.m/") {
                check_shape(&expected, base, &t)?;
                adam_m.push(t);
            } else if let Some(base) = name.strip_prefix("adam.v/") {
                check_shape(&expected, base, &t)?;
                adam_v.push(t);
            } else if name == "norm.mean" {
                mean = Some(t.item()?);
            } else if name == "norm.std" {
                std = Some(t.item()?);
            } else {
                check_shape(&expected, &name, &t)?;
                params.insert(name, t)?;
            }
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        if params.names() != expected.names() {
            return Err(Error::Checkpoint("parameter set does not match the stored config".into()));
        }
        if !(adam_m.is_empty() && adam_v.is_empty()) && (adam_m.len() != params.len() || adam_v.len() != params.len()) {
            return Err(Error::Checkpoint("incomplete optimizer state".into()));
        }
        let (Some(mean), Some(std)) = (mean, std) else {
            return Err(Error::Checkpoint("missing normalization statistics".into()));
        };
        let norm = Normalizer::new(mean, std).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self {
            model: Model { config, params, norm },
            adam_m,
            adam_v,
            state,
        })
    }
}

fn check_shape(expected: &ParamStore<f64>, name: &str, t: &Tensor<f64>) -> Result<()> {
    match expected.get(name) {
        Some(e) if e.shape() == t.shape() => Ok(()),
        Some(e) => Err(Error::Checkpoint(format!(
            "`{name}` has shape {:?}, config implies {:?}",
            t.shape(),
            e.shape()
        ))),
        None => Err(Error::Checkpoint(format!("unexpected tensor `{name}`"))),
    }
}

fn put_u32(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Checkpoint(format!("{n} does not fit in u32")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

fn put_text(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn text(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("text field is not UTF-8".into()))
    }
}

/// Writes `ck` next to `path` and renames it into place, so a reader never
/// sees a half-written file.
pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ck.to_bytes()?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    std::fs::write(tmp, &bytes).map_err(io_err(tmp))?;
    std::fs::rename(tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Checkpoint::from_bytes(&bytes)
}
