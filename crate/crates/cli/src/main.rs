//! `avcrn`: synthetic data, training, enhancement, evaluation, gradient
//! checks and the STA ablation from the command line.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 when the command fails.

use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use avcrn::datagen::{load_split, read_video, write_corpus, Split, SynthSpec};
use avcrn::dsp::wav::{read_wav, write_wav};
use avcrn::gradsuite;
use avcrn::metrics::evaluate_corpus_dir;
use avcrn::model::load_checkpoint;
use avcrn::train::{ablate, enhance, train, Outputs, Progress, TrainConfig, TrainData};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "avcrn", version, about = "Audio-visual speech enhancement with soft-threshold attention")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic audio-visual corpus to a directory.
    SynthData {
        /// Corpus recipe (`key = value`); defaults apply to absent keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and keep the best-validation checkpoint.
    Train {
        /// Training config (`key = value`).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Where the best checkpoint is written.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Loss trace path (default: `<checkpoint>.loss.txt`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Train the ablation arm without soft-threshold gates.
        #[arg(long)]
        no_sta: bool,
    },
    /// Enhance one noisy WAV file given its video embeddings.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Noisy 16 kHz mono WAV.
        noisy: PathBuf,
        /// Video embedding file (`video.f32`).
        video: PathBuf,
        /// Enhanced WAV output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the corpus test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Also write line-delimited JSON records here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    GradCheck {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train both arms (with and without STA) and compare them.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the comparison table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn train_config(config: Option<&Path>, corpus: Option<PathBuf>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match config {
        Some(p) => TrainConfig::from_text(&read_text(p)?).with_context(|| format!("in {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if corpus.is_some() {
        cfg.corpus = corpus;
    }
    if let Some(s) = seed {
        cfg.model.seed = s;
    }
    Ok(cfg)
}

fn corpus_root(cfg: &TrainConfig) -> Result<&Path> {
    match cfg.corpus.as_deref() {
        Some(p) => Ok(p),
        None => bail!("no corpus: pass --corpus or set `corpus` in the config"),
    }
}

fn reporter(quiet: bool, tag: &'static str) -> impl FnMut(&Progress) -> ControlFlow<()> {
    move |p| {
        if let (false, Progress::Epoch { epoch, train_loss, val_loss, improved }) = (quiet, p) {
            let mark = if *improved { " *" } else { "" };
            eprintln!("{tag}epoch {:>3}  train {train_loss:.5}  val {val_loss:.5}{mark}", epoch + 1);
        }
        ControlFlow::Continue(())
    }
}

fn run(cli: Cli) -> Result<()> {
    let quiet = cli.quiet;
    match cli.command {
        Command::SynthData { config, out, seed } => {
            let mut spec = match &config {
                Some(p) => SynthSpec::from_config_text(&read_text(p)?).with_context(|| format!("in {}", p.display()))?,
                None => SynthSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            write_corpus(&spec, &out)?;
            if !quiet {
                eprintln!(
                    "wrote {} train, {} val, {} test examples to {}",
                    spec.len(Split::Train),
                    spec.len(Split::Val),
                    spec.len(Split::Test),
                    out.display()
                );
            }
        }
        Command::Train { config, corpus, checkpoint, out, seed, no_sta } => {
            let mut cfg = train_config(config.as_deref(), corpus, seed)?;
            if no_sta {
                cfg.model.sta_enabled = false;
            }
            cfg.validate()?;
            let data = TrainData::load(corpus_root(&cfg)?)?;
            let trace = out.unwrap_or_else(|| {
                let mut p = checkpoint.clone().into_os_string();
                p.push(".loss.txt");
                p.into()
            });
            let outputs = Outputs {
                checkpoint: Some(&checkpoint),
                trace: Some(&trace),
            };
            let result = train(&cfg, &data, outputs, reporter(quiet, ""))?;
            println!(
                "best epoch {} val loss {:.6} after {} steps ({:?}); checkpoint {}",
                result.best_epoch + 1,
                result.best_val_loss(),
                result.steps,
                result.stop,
                checkpoint.display()
            );
        }
        Command::Enhance { checkpoint, noisy, video, out } => {
            let model = load_checkpoint(&checkpoint)?.model;
            let wav = read_wav(&noisy)?;
            let track = read_video(&video)?;
            let enhanced = enhance(&model, &wav, &track)?;
            write_wav(&out, &enhanced)?;
        }
        Command::Evaluate { checkpoint, corpus, out } => {
            let model = load_checkpoint(&checkpoint)?.model;
            let report = evaluate_corpus_dir(&model, &corpus)?;
            print!("{}", report.to_table());
            if let Some(p) = out {
                fs::write(&p, report.to_records()).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::GradCheck { seed } => {
            let results = gradsuite::run(seed.unwrap_or(0))?;
            let mut failed = 0;
            for r in &results {
                if !r.passed() {
                    failed += 1;
                }
                if !quiet || !r.passed() {
                    let verdict = if r.passed() { "ok" } else { "FAIL" };
                    println!(
                        "{verdict:<4} {:<32} checked {:>4}  max rel err {:.3e} (< {:.0e})",
                        r.name, r.checked, r.max_rel_err, r.tolerance
                    );
                }
            }
            let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
            println!("max rel err {worst:.3e} over {} checks", results.len());
            if failed > 0 {
                bail!("{failed} gradient checks failed");
            }
        }
        Command::Ablate { config, corpus, seed, out } => {
            let cfg = train_config(config.as_deref(), corpus, seed)?;
            cfg.validate()?;
            let root = corpus_root(&cfg)?;
            let data = TrainData::load(root)?;
            let test = load_split(root, Split::Test)?;
            let mut tags = (reporter(quiet, "[AV-CRN] "), reporter(quiet, "[AV-CRN+STA] "));
            let result = ablate(&cfg, &data, &test, |arm, p| {
                if arm == avcrn::train::ARM_STA {
                    (tags.1)(p)
                } else {
                    (tags.0)(p)
                }
            })?;
            let table = result.to_table();
            print!("{table}");
            if let Some(p) = out {
                fs::write(&p, &table).with_context(|| format!("writing {}", p.display()))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
