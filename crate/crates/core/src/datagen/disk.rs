use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{build_split, AvExample, NoiseFamily, Split, SynthSpec, VideoTrack};
use crate::dsp::wav::{read_wav, write_wav};
use crate::error::{io_err, Error, Result};

const VIDEO_MAGIC: &[u8; 4] = b"VEMB";
const VIDEO_VERSION: u32 = 1;
const VIDEO_HEADER: usize = 16;

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub snr_db: f64,
    pub seed: u64,
    pub noise_family: NoiseFamily,
    pub noise_param: f64,
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes `VEMB` | version | n_frames | dim (u32 LE each) then the
/// embeddings as f32 LE.
pub fn write_video(path: impl AsRef<Path>, v: &VideoTrack) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(VIDEO_HEADER + 4 * v.data().len());
    bytes.extend_from_slice(VIDEO_MAGIC);
    bytes.extend_from_slice(&VIDEO_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(v.n_frames() as u32).to_le_bytes());
    bytes.extend_from_slice(&(v.dim() as u32).to_le_bytes());
    for x in v.data() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_video(path: impl AsRef<Path>) -> Result<VideoTrack> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < VIDEO_HEADER || &bytes[..4] != VIDEO_MAGIC {
        return Err(format_err(path, "not a VEMB video feature file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (version, frames, dim) = (word(4), word(8), word(12));
    if version != VIDEO_VERSION as usize {
        return Err(format_err(path, format!("unsupported video format version {version}")));
    }
    let body = &bytes[VIDEO_HEADER..];
    if dim == 0 || body.len() != 4 * frames * dim {
        return Err(format_err(
            path,
            format!("header promises {frames}×{dim} values but {} bytes follow", body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    VideoTrack::new(dim, data).map_err(|e| format_err(path, e.to_string()))
}

fn example_dir(root: &Path, split: Split, index: usize) -> PathBuf {
    root.join(split.as_str()).join(format!("{index:05}"))
}

pub fn write_example(dir: impl AsRef<Path>, ex: &AvExample) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_wav(dir.join("clean.wav"), &ex.clean)?;
    write_wav(dir.join("noisy.wav"), &ex.noisy)?;
    write_video(dir.join("video.f32"), &ex.video)?;
    let meta = ExampleMeta {
        snr_db: ex.snr_db,
        seed: ex.seed,
        noise_family: ex.noise_family,
        noise_param: ex.noise_param,
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn load_example(dir: impl AsRef<Path>) -> Result<AvExample> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: ExampleMeta =
        serde_json::from_str(&text).map_err(|e| format_err(&meta_path, e.to_string()))?;
    let clean = read_wav(dir.join("clean.wav"))?;
    let noisy = read_wav(dir.join("noisy.wav"))?;
    if clean.len() != noisy.len() {
        return Err(format_err(
            dir,
            format!("clean has {} samples but noisy has {}", clean.len(), noisy.len()),
        ));
    }
    Ok(AvExample {
        clean,
        noisy,
        video: read_video(dir.join("video.f32"))?,
        snr_db: meta.snr_db,
        noise_family: meta.noise_family,
        noise_param: meta.noise_param,
        seed: meta.seed,
    })
}

/// Writes every split of `spec` under `root` (`root/<split>/<index>/`).
/// Audio is stored as 16-bit PCM, so loaded examples differ from the
/// in-memory ones by quantization.
pub fn write_corpus(spec: &SynthSpec, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    spec.validate()?;
    for split in Split::ALL {
        for (i, ex) in build_split(spec, split)?.iter().enumerate() {
            write_example(example_dir(root, split, i), ex)?;
        }
    }
    Ok(())
}

/// Loads every example of `split` under `root`, in index order.
pub fn load_split(root: impl AsRef<Path>, split: Split) -> Result<Vec<AvExample>> {
    let dir = root.as_ref().join(split.as_str());
    let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(&dir)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    entries.iter().map(load_example).collect()
}
