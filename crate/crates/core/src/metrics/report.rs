use std::fmt::Write as _;
use std::path::Path;

use avcrn_tensor::Real;
use serde::{Deserialize, Serialize};

use super::{si_sdr, stoi};
use crate::datagen::{load_split, AvExample, NoiseFamily, Split};
use crate::dsp::Waveform;
use crate::error::Result;
use crate::model::Model;
use crate::train::enhance;

/// Scores of one test utterance before and after enhancement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub snr_db: f64,
    pub noise_family: NoiseFamily,
    pub stoi_noisy: f64,
    pub stoi_enh: f64,
    pub sisdr_noisy: f64,
    pub sisdr_enh: f64,
}

/// Mean scores over one test condition. `noise_family` is `None` for the
/// row pooling every family at that SNR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: String,
    pub snr_db: f64,
    pub noise_family: Option<NoiseFamily>,
    pub n: usize,
    pub stoi_noisy: f64,
    pub stoi_enh: f64,
    pub sisdr_noisy: f64,
    pub sisdr_enh: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub utterances: Vec<UtteranceScore>,
    pub rows: Vec<ConditionRow>,
}

const HEADER: &str = "# classic STOI and SI-SDR (dB, in place of PESQ); enhanced audio = \
mel pseudo-inverse of the predicted log-Mel with the noisy phase";

impl EvalReport {
    pub fn from_scores(utterances: Vec<UtteranceScore>) -> Self {
        let mut snrs: Vec<f64> = Vec::new();
        for u in &utterances {
            if !snrs.contains(&u.snr_db) {
                snrs.push(u.snr_db);
            }
        }
        snrs.sort_by(f64::total_cmp);
        let mut rows = Vec::new();
        for &snr in &snrs {
            let families = NoiseFamily::ALL.into_iter().map(Some).chain([None]);
            for fam in families {
                let group: Vec<&UtteranceScore> = utterances
                    .iter()
                    .filter(|u| u.snr_db == snr && fam.is_none_or(|f| f == u.noise_family))
                    .collect();
                if group.is_empty() {
                    continue;
                }
                let mean = |f: fn(&UtteranceScore) -> f64| group.iter().map(|u| f(u)).sum::<f64>() / group.len() as f64;
                rows.push(ConditionRow {
                    condition: format!("{snr}dB/{}", fam.map_or("all", NoiseFamily::as_str)),
                    snr_db: snr,
                    noise_family: fam,
                    n: group.len(),
                    stoi_noisy: mean(|u| u.stoi_noisy),
                    stoi_enh: mean(|u| u.stoi_enh),
                    sisdr_noisy: mean(|u| u.sisdr_noisy),
                    sisdr_enh: mean(|u| u.sisdr_enh),
                });
            }
        }
        Self { utterances, rows }
    }

    /// The row for `snr_db` and `family` (`None` = all families).
    pub fn row(&self, snr_db: f64, family: Option<NoiseFamily>) -> Option<&ConditionRow> {
        self.rows.iter().find(|r| r.snr_db == snr_db && r.noise_family == family)
    }

    /// Aligned text table, one row per condition.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{HEADER}");
        let _ = writeln!(
            s,
            "{:<14} {:>4} {:>10} {:>10} {:>11} {:>11}",
            "condition", "n", "stoi_noisy", "stoi_enh", "sisdr_noisy", "sisdr_enh"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<14} {:>4} {:>10.4} {:>10.4} {:>11.3} {:>11.3}",
                r.condition, r.n, r.stoi_noisy, r.stoi_enh, r.sisdr_noisy, r.sisdr_enh
            );
        }
        s
    }

    /// One JSON object per condition row, newline separated.
    pub fn to_records(&self) -> String {
        self.rows.iter().fold(String::new(), |mut s, r| {
            let _ = writeln!(s, "{}", serde_json::to_string(r).expect("plain data serializes"));
            s
        })
    }
}

/// Scores `noisy` and `enhanced` against `clean`.
pub fn score_pair(clean: &Waveform, noisy: &Waveform, enhanced: &Waveform) -> Result<[f64; 4]> {
    Ok([
        stoi(clean, noisy)?,
        stoi(clean, enhanced)?,
        si_sdr(clean, noisy)?,
        si_sdr(clean, enhanced)?,
    ])
}

/// Enhances every test example and reports mean STOI and SI-SDR per
/// (SNR, noise family), for the unprocessed and the enhanced signal.
pub fn evaluate_corpus<T: Real>(model: &Model<T>, test: &[AvExample]) -> Result<EvalReport> {
    let scores = test
        .iter()
        .map(|ex| {
            let enhanced = enhance(model, &ex.noisy, &ex.video)?;
            let [stoi_noisy, stoi_enh, sisdr_noisy, sisdr_enh] = score_pair(&ex.clean, &ex.noisy, &enhanced)?;
            Ok(UtteranceScore {
                snr_db: ex.snr_db,
                noise_family: ex.noise_family,
                stoi_noisy,
                stoi_enh,
                sisdr_noisy,
                sisdr_enh,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_scores(scores))
}

/// [`evaluate_corpus`] on the test split stored under `root`.
pub fn evaluate_corpus_dir<T: Real>(model: &Model<T>, root: impl AsRef<Path>) -> Result<EvalReport> {
    evaluate_corpus(model, &load_split(root, Split::Test)?)
}
