//! Deterministic synthetic audio-visual corpus: harmonic pseudo-speech,
//! three parametric noise families, SNR mixing and a visual stream derived
//! from the clean signal.

mod disk;
mod noise;
mod speech;
mod video;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use disk::{
    load_example, load_split, read_video, write_corpus, write_example, write_video, ExampleMeta,
};
pub use noise::{synth_noise, NoiseFamily};
pub use speech::{synth_speech, SpeechParams, ENVELOPE_FLOOR, MIN_SPEECH_SAMPLES, SPEECH_PEAK};
pub use video::{
    synth_video, video_frames_for, VideoSegment, VideoTrack, DEFAULT_VIDEO_DIM, FRAMES_PER_SEGMENT,
    VIDEO_FRAME_SAMPLES, VIDEO_JITTER,
};

use crate::config::KeyValues;
use crate::dsp::{mix_at_snr, Waveform, SAMPLE_RATE};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown split `{s}`")))
    }
}

/// Corpus recipe. Train and validation utterances are mixed at a uniform
/// random SNR; every test utterance is mixed at each of `snr_eval`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub utterance_secs: f64,
    pub snr_train_range: (f64, f64),
    pub snr_eval: Vec<f64>,
    pub video_dim: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_val: 50,
            n_test: 60,
            utterance_secs: 1.0,
            snr_train_range: (-10.0, 10.0),
            snr_eval: vec![0.0, -5.0],
            video_dim: DEFAULT_VIDEO_DIM,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(invalid("every split needs at least one utterance"));
        }
        let (lo, hi) = self.snr_train_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(format!("SNR range [{lo}, {hi}] is not well ordered")));
        }
        if self.snr_eval.is_empty() || self.snr_eval.iter().any(|s| !s.is_finite()) {
            return Err(invalid("snr_eval needs at least one finite value"));
        }
        if self.utterance_len() < MIN_SPEECH_SAMPLES {
            return Err(invalid(format!(
                "utterance_secs {} is below the 0.5 s minimum",
                self.utterance_secs
            )));
        }
        if self.video_dim == 0 {
            return Err(invalid("video_dim must be positive"));
        }
        Ok(())
    }

    pub fn utterance_len(&self) -> usize {
        (self.utterance_secs * SAMPLE_RATE as f64).round() as usize
    }

    /// Number of examples `split` holds.
    pub fn len(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test * self.snr_eval.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        Split::ALL.iter().all(|&s| self.len(s) == 0)
    }

    /// Reads a `key = value` recipe; absent keys keep their defaults.
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut spec = Self::default();
        if let Some(v) = kv.take("n_train")? {
            spec.n_train = v;
        }
        if let Some(v) = kv.take("n_val")? {
            spec.n_val = v;
        }
        if let Some(v) = kv.take("n_test")? {
            spec.n_test = v;
        }
        if let Some(v) = kv.take("utterance_secs")? {
            spec.utterance_secs = v;
        }
        if let Some(v) = kv.take_list::<f64>("snr_train_range")? {
            match v[..] {
                [lo, hi] => spec.snr_train_range = (lo, hi),
                _ => return Err(Error::Config("snr_train_range needs two values".into())),
            }
        }
        if let Some(v) = kv.take_list("snr_eval")? {
            spec.snr_eval = v;
        }
        if let Some(v) = kv.take("video_dim")? {
            spec.video_dim = v;
        }
        if let Some(v) = kv.take("seed")? {
            spec.seed = v;
        }
        kv.finish()?;
        spec.validate()?;
        Ok(spec)
    }
}

/// One aligned clean/noisy/video triple.
#[derive(Clone, Debug, PartialEq)]
pub struct AvExample {
    pub clean: Waveform,
    pub noisy: Waveform,
    pub video: VideoTrack,
    pub snr_db: f64,
    pub noise_family: NoiseFamily,
    pub noise_param: f64,
    /// Child seed the example was generated from.
    pub seed: u64,
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d4_9bb1_3311_49eb);
    z ^ (z >> 31)
}

/// Seed of utterance `index` in `split`; distinct across splits.
pub fn child_seed(seed: u64, split: Split, index: usize) -> u64 {
    mix64(mix64(mix64(seed) ^ split.tag()) ^ index as u64)
}

fn draw_family_param<R: Rng + ?Sized>(family: NoiseFamily, split: Split, rng: &mut R) -> f64 {
    let range = match split {
        Split::Test => family.test_range(),
        _ => family.train_range(),
    };
    let v = rng.random_range(range);
    if family == NoiseFamily::White && rng.random_bool(0.5) {
        -v
    } else {
        v
    }
}

/// Generates example `index` of `split`. Test examples enumerate
/// utterances × `snr_eval`, so consecutive test indices share one utterance
/// and one noise realization at different SNRs.
pub fn generate_example(spec: &SynthSpec, split: Split, index: usize) -> Result<AvExample> {
    spec.validate()?;
    if index >= spec.len(split) {
        return Err(invalid(format!(
            "{split} example {index} out of range ({} examples)",
            spec.len(split)
        )));
    }
    let (utt, snr_slot) = match split {
        Split::Test => (index / spec.snr_eval.len(), Some(index % spec.snr_eval.len())),
        _ => (index, None),
    };
    let seed = child_seed(spec.seed, split, utt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = spec.utterance_len();
    let clean = synth_speech(rng.random(), len)?;
    let video = synth_video(&clean, spec.video_dim, rng.random())?;
    let noise_family = match split {
        Split::Test => NoiseFamily::ALL[utt % NoiseFamily::ALL.len()],
        _ => NoiseFamily::ALL[rng.random_range(0..NoiseFamily::ALL.len())],
    };
    let noise_param = draw_family_param(noise_family, split, &mut rng);
    let extra = rng.random_range(0..SAMPLE_RATE as usize / 2);
    let noise = synth_noise(noise_family, noise_param, len + extra, &mut rng)?;
    let (lo, hi) = spec.snr_train_range;
    let train_snr = rng.random_range(lo..=hi);
    let snr_db = snr_slot.map_or(train_snr, |k| spec.snr_eval[k]);
    let noisy = mix_at_snr(&clean, &noise, snr_db, &mut rng)?.mixture;
    Ok(AvExample {
        clean,
        noisy,
        video,
        snr_db,
        noise_family,
        noise_param,
        seed,
    })
}

/// All three splits, in index order.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: Vec<AvExample>,
    pub val: Vec<AvExample>,
    pub test: Vec<AvExample>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[AvExample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn build_split(spec: &SynthSpec, split: Split) -> Result<Vec<AvExample>> {
    (0..spec.len(split)).map(|i| generate_example(spec, split, i)).collect()
}

/// Generates the whole corpus in memory; a pure function of `spec`.
pub fn build_corpus(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    Ok(Corpus {
        train: build_split(spec, Split::Train)?,
        val: build_split(spec, Split::Val)?,
        test: build_split(spec, Split::Test)?,
    })
}
