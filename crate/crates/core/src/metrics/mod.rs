//! Objective scoring: classic STOI and SI-SDR, plus corpus-level reports.

mod report;
mod resample;
mod si_sdr;
mod stoi;

pub use resample::resample;
pub use si_sdr::{si_sdr, SI_SDR_CAP_DB};
pub use stoi::{stoi, STOI_MIN_SAMPLES};
pub use report::{evaluate_corpus, evaluate_corpus_dir, score_pair, ConditionRow, EvalReport, UtteranceScore};
