use std::fmt::Write as _;
use std::ops::ControlFlow;

use super::{train, Outputs, Progress, TrainConfig, TrainData, TrainOutcome};
use crate::datagen::AvExample;
use crate::error::Result;
use crate::metrics::{evaluate_corpus, EvalReport};
use crate::model::ModelConfig;

pub const ARM_PLAIN: &str = "AV-CRN";
pub const ARM_STA: &str = "AV-CRN+STA";

#[derive(Clone, Debug)]
pub struct ArmResult {
    pub name: &'static str,
    pub outcome: TrainOutcome,
    pub report: EvalReport,
}

/// Both arms trained from the same config, seed and data.
#[derive(Clone, Debug)]
pub struct Ablation {
    pub plain: ArmResult,
    pub sta: ArmResult,
}

/// Trains the arm without gates, then the gated arm, and scores both on
/// `test`.
pub fn ablate(
    cfg: &TrainConfig,
    data: &TrainData,
    test: &[AvExample],
    mut observer: impl FnMut(&'static str, &Progress) -> ControlFlow<()>,
) -> Result<Ablation> {
    let mut arm = |name: &'static str, sta_enabled: bool| -> Result<ArmResult> {
        let cfg = TrainConfig {
            model: ModelConfig {
                sta_enabled,
                ..cfg.model.clone()
            },
            ..cfg.clone()
        };
        let outcome = train(&cfg, data, Outputs::default(), |p| observer(name, p))?;
        let report = evaluate_corpus(&outcome.best.model, test)?;
        Ok(ArmResult { name, outcome, report })
    };
    Ok(Ablation {
        plain: arm(ARM_PLAIN, false)?,
        sta: arm(ARM_STA, true)?,
    })
}

impl Ablation {
    /// Rows `unprocessed`, `AV-CRN`, `AV-CRN+STA`; STOI and SI-SDR per test
    /// SNR, pooled over noise families, plus the best validation loss.
    pub fn to_table(&self) -> String {
        let snrs: Vec<f64> = self
            .sta
            .report
            .rows
            .iter()
            .filter(|r| r.noise_family.is_none())
            .map(|r| r.snr_db)
            .collect();
        let mut s = String::new();
        let _ = write!(s, "{:<12} {:>9}", "model", "val_loss");
        for snr in &snrs {
            let _ = write!(s, " {:>12} {:>13}", format!("stoi@{snr}dB"), format!("sisdr@{snr}dB"));
        }
        s.push('\n');
        let _ = write!(s, "{:<12} {:>9}", "unprocessed", "-");
        for &snr in &snrs {
            let r = self.sta.report.row(snr, None).expect("pooled row");
            let _ = write!(s, " {:>12.4} {:>13.3}", r.stoi_noisy, r.sisdr_noisy);
        }
        s.push('\n');
        for arm in [&self.plain, &self.sta] {
            let _ = write!(s, "{:<12} {:>9.5}", arm.name, arm.outcome.best_val_loss());
            for &snr in &snrs {
                let r = arm.report.row(snr, None).expect("pooled row");
                let _ = write!(s, " {:>12.4} {:>13.3}", r.stoi_enh, r.sisdr_enh);
            }
            s.push('\n');
        }
        s
    }
}
