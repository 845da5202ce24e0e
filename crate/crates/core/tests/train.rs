use std::ops::ControlFlow;
use std::sync::OnceLock;

use avcrn::datagen::{build_corpus, write_corpus, Corpus, NoiseFamily, SynthSpec, VideoTrack};
use avcrn::dsp::Waveform;
use avcrn::metrics::{evaluate_corpus, evaluate_corpus_dir, si_sdr, stoi, ConditionRow};
use avcrn::model::{load_checkpoint, Model, ModelConfig, Normalizer};
use avcrn::train::{
    batch_order, enhance, mean_loss, train, train_on_corpus, LossTrace, Outputs, Progress, StopReason, TrainConfig,
    TrainData,
};
use avcrn::Error;

fn spec() -> SynthSpec {
    SynthSpec {
        n_train: 12,
        n_val: 4,
        n_test: 3,
        video_dim: 8,
        seed: 5,
        ..SynthSpec::default()
    }
}

fn corpus() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| build_corpus(&spec()).unwrap())
}

fn data() -> &'static TrainData {
    static D: OnceLock<TrainData> = OnceLock::new();
    D.get_or_init(|| TrainData::from_examples(&corpus().train, &corpus().val).unwrap())
}

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        model: ModelConfig::tiny(),
        batch_size: 8,
        max_epochs: 3,
        ..TrainConfig::default()
    }
}

fn quiet(_: &Progress) -> ControlFlow<()> {
    ControlFlow::Continue(())
}

#[test]
fn chunk_set_covers_every_complete_chunk() {
    let d = data();
    // 1 s utterances: 100 frames, 5 chunks each
    assert_eq!(d.train.len(), 12 * 5);
    assert_eq!(d.val.len(), 4 * 5);
    assert_eq!(d.train.video_dim(), 8);
    let (x, y, v) = d.train.batch(&[3, 0]);
    assert_eq!(x.shape(), &[2, 80, 20]);
    assert_eq!(y.shape(), &[2, 80, 20]);
    assert_eq!(v.shape(), &[2, 5, 8]);
    let seg = corpus().train[0].video.segment(3).unwrap();
    assert_eq!(&v.data()[..40], seg.values());
}

#[test]
fn normalizer_is_fit_on_noisy_training_log_mel() {
    let chunks: Vec<_> = corpus()
        .train
        .iter()
        .flat_map(|ex| avcrn::train::waveform_chunks(&ex.noisy).unwrap())
        .collect();
    let vals: Vec<f64> = chunks.iter().flat_map(|c| c.data().to_vec()).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    let n = data().norm;
    assert!((n.mean - mean).abs() < 1e-9);
    assert!((n.std - var.sqrt()).abs() < 1e-9);
}

#[test]
fn ten_step_trace_is_bitwise_reproducible() {
    let cfg = TrainConfig {
        max_steps: Some(10),
        ..tiny_cfg()
    };
    let a = train(&cfg, data(), Outputs::default(), quiet).unwrap();
    let b = train(&cfg, data(), Outputs::default(), quiet).unwrap();
    assert_eq!(a.trace.0.len(), 10);
    assert_eq!(a.stop, StopReason::StepBudget);
    let bits = |t: &LossTrace| t.0.iter().map(|(s, l)| (*s, l.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a.trace), bits(&b.trace));
    assert_eq!(a.best.to_bytes().unwrap(), b.best.to_bytes().unwrap());

    let other = TrainConfig {
        model: ModelConfig { seed: 1, ..cfg.model.clone() },
        ..cfg
    };
    let c = train(&other, data(), Outputs::default(), quiet).unwrap();
    assert_ne!(bits(&a.trace), bits(&c.trace));
}

#[test]
fn batch_order_depends_on_seed_and_epoch_only() {
    let a = batch_order(3, 0, 50);
    let mut sorted = a.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    assert_eq!(a, batch_order(3, 0, 50));
    assert_ne!(a, batch_order(3, 1, 50));
    assert_ne!(a, batch_order(4, 0, 50));
}

#[test]
fn sta_toggle_changes_parameters_not_data() {
    let on = tiny_cfg();
    let off = TrainConfig {
        model: ModelConfig { sta_enabled: false, ..on.model.clone() },
        ..on.clone()
    };
    let pa = Model::new(on.model.clone()).unwrap().n_params();
    let pb = Model::new(off.model.clone()).unwrap().n_params();
    assert!(pa > pb);
    assert_eq!(on.seed(), off.seed());
    let cfg = |c: &TrainConfig| TrainConfig { max_steps: Some(1), ..c.clone() };
    let a = train(&cfg(&on), data(), Outputs::default(), quiet).unwrap();
    let b = train(&cfg(&off), data(), Outputs::default(), quiet).unwrap();
    assert_eq!(a.best.model.norm, b.best.model.norm);
}

#[test]
fn training_loss_falls_and_best_checkpoint_is_kept() {
    let dir = tempfile::tempdir().unwrap();
    let ck_path = dir.path().join("best.ckpt");
    let trace_path = dir.path().join("loss.txt");
    let cfg = TrainConfig {
        max_epochs: 5,
        ..tiny_cfg()
    };
    let mut epochs = Vec::new();
    let out = train(
        &cfg,
        data(),
        Outputs {
            checkpoint: Some(&ck_path),
            trace: Some(&trace_path),
        },
        |p| {
            if let Progress::Epoch { train_loss, .. } = p {
                epochs.push(*train_loss);
            }
            ControlFlow::Continue(())
        },
    )
    .unwrap();
    assert_eq!(epochs.len(), 5);
    assert!(epochs[4] < epochs[0], "{epochs:?}");

    let min = out.val_losses.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_val_loss(), min);
    assert_eq!(out.best.state.best_val_loss, Some(min));
    let on_disk = load_checkpoint(&ck_path).unwrap();
    assert_eq!(on_disk, out.best);
    assert_eq!(mean_loss(&on_disk.model.cast::<f32>(), &data().val).unwrap(), min);

    let trace = LossTrace::parse(&std::fs::read_to_string(&trace_path).unwrap()).unwrap();
    assert_eq!(trace, out.trace);
    assert_eq!(trace.0.len() as u64, out.steps);
    assert_eq!(trace.0.first().unwrap().0, 1);
}

#[test]
fn early_stopping_respects_patience() {
    let cfg = TrainConfig {
        lr: 0.05,
        max_epochs: 12,
        patience: 1,
        ..tiny_cfg()
    };
    let out = train(&cfg, data(), Outputs::default(), quiet).unwrap();
    let last = out.val_losses.len() - 1;
    match out.stop {
        StopReason::EarlyStopping => assert_eq!(last - out.best_epoch, 1),
        StopReason::MaxEpochs => assert_eq!(out.val_losses.len(), 12),
        other => panic!("unexpected stop {other:?}"),
    }
    for (e, &v) in out.val_losses.iter().enumerate() {
        assert!(v >= out.best_val_loss(), "epoch {e} beat the kept checkpoint");
    }
}

#[test]
fn divergence_names_the_step() {
    let cfg = TrainConfig {
        lr: 1e30,
        ..tiny_cfg()
    };
    match train(&cfg, data(), Outputs::default(), quiet) {
        Err(Error::Diverged { step, loss }) => {
            assert!(step >= 2);
            assert!(!loss.is_finite());
            let msg = Error::Diverged { step, loss }.to_string();
            assert!(msg.contains(&format!("step {step}")), "{msg}");
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn interrupted_run_leaves_previous_best_readable() {
    let dir = tempfile::tempdir().unwrap();
    let ck_path = dir.path().join("best.ckpt");
    let cfg = TrainConfig {
        max_epochs: 4,
        ..tiny_cfg()
    };
    let per_epoch = data().train.len().div_ceil(cfg.batch_size) as u64;
    let out = train(
        &cfg,
        data(),
        Outputs {
            checkpoint: Some(&ck_path),
            trace: None,
        },
        |p| match p {
            Progress::Step { step, .. } if *step == per_epoch + 2 => ControlFlow::Break(()),
            _ => ControlFlow::Continue(()),
        },
    )
    .unwrap();
    assert_eq!(out.stop, StopReason::Interrupted);
    let ck = load_checkpoint(&ck_path).unwrap();
    assert_eq!(ck, out.best);
    assert!(ck.state.step == per_epoch || ck.state.step == per_epoch + 2);

    // a crash during the next save leaves a partial temp file and the
    // previous checkpoint intact
    std::fs::write(dir.path().join("best.ckpt.tmp"), b"AVCRNCK\0\x01").unwrap();
    assert_eq!(load_checkpoint(&ck_path).unwrap(), ck);
}

#[test]
fn corpus_on_disk_trains_and_missing_corpus_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let small = SynthSpec {
        n_train: 2,
        n_val: 1,
        n_test: 1,
        ..spec()
    };
    write_corpus(&small, dir.path()).unwrap();
    let cfg = TrainConfig {
        max_steps: Some(2),
        corpus: Some(dir.path().to_path_buf()),
        ..tiny_cfg()
    };
    let out = train_on_corpus(&cfg, Outputs::default(), quiet).unwrap();
    assert_eq!(out.steps, 2);

    let missing = TrainConfig {
        corpus: Some(dir.path().join("nowhere")),
        ..cfg.clone()
    };
    match train_on_corpus(&missing, Outputs::default(), quiet) {
        Err(Error::Io { path, .. }) => assert!(path.starts_with(dir.path().join("nowhere"))),
        other => panic!("expected an I/O error, got {other:?}"),
    }
    assert!(train_on_corpus(&TrainConfig { corpus: None, ..cfg }, Outputs::default(), quiet).is_err());
}

/// Zero weights and a residual output make the network the identity map.
fn identity_model(dim: usize) -> Model {
    let mut m = Model::new(ModelConfig {
        video_dim: dim,
        ..ModelConfig::tiny()
    })
    .unwrap();
    for t in m.params.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    m.norm = Normalizer::new(1.0, 1.5).unwrap();
    m
}

#[test]
fn enhance_keeps_length_and_checks_video() {
    let m = Model::new(ModelConfig::tiny()).unwrap();
    let ex = &corpus().test[0];
    for len in [16000, 12345, 3300] {
        let noisy = Waveform::new(ex.noisy.samples()[..len].to_vec()).unwrap();
        let frames = avcrn::datagen::video_frames_for(len);
        let video = VideoTrack::new(8, ex.video.data()[..frames * 8].to_vec()).unwrap();
        let a = enhance(&m, &noisy, &video).unwrap();
        assert_eq!(a.len(), len);
        let b = enhance(&m, &noisy, &video).unwrap();
        assert_eq!(a, b);
        // the tail after the last complete chunk is passed through
        let done = frames / 5 * 20 * 160;
        assert_eq!(&a.samples()[done..], &noisy.samples()[done..]);
    }
    let short = VideoTrack::new(8, ex.video.data()[..8 * 20].to_vec()).unwrap();
    match enhance(&m, &ex.noisy, &short) {
        Err(Error::InvalidArgument(msg)) => assert!(msg.contains("25") && msg.contains("20"), "{msg}"),
        other => panic!("expected invalid argument, got {other:?}"),
    }
}

#[test]
fn identity_model_costs_only_the_reconstruction_floor() {
    let m = identity_model(8);
    for ex in &corpus().test {
        let out = enhance(&m, &ex.clean, &ex.video).unwrap();
        let db = si_sdr(&ex.clean, &out).unwrap();
        assert!(db >= 10.0, "SI-SDR {db}");
    }
}

#[test]
fn evaluation_report_structure() {
    let m = Model::new(ModelConfig::tiny()).unwrap();
    let test = &corpus().test;
    let report = evaluate_corpus(&m, test).unwrap();
    assert_eq!(report.utterances.len(), test.len());
    for snr in [-5.0, 0.0] {
        for fam in NoiseFamily::ALL {
            let row = report.row(snr, Some(fam)).unwrap();
            assert_eq!(row.n, 1);
        }
        assert_eq!(report.row(snr, None).unwrap().n, 3);
    }
    // unprocessed columns are direct scores of noisy against clean
    for (u, ex) in report.utterances.iter().zip(test) {
        assert_eq!(u.stoi_noisy, stoi(&ex.clean, &ex.noisy).unwrap());
        assert_eq!(u.sisdr_noisy, si_sdr(&ex.clean, &ex.noisy).unwrap());
    }
    let again = evaluate_corpus(&m, test).unwrap();
    assert_eq!(report, again);

    let records: Vec<ConditionRow> = report
        .to_records()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records, report.rows);
    let table = report.to_table();
    assert!(table.lines().any(|l| l.starts_with("-5dB/white")));
    assert!(table.lines().any(|l| l.starts_with("0dB/all")));
    assert!(table.contains("sisdr_enh"));
}

#[test]
fn evaluation_from_disk_matches_memory_and_names_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&spec(), dir.path()).unwrap();
    let m = identity_model(8);
    let from_disk = evaluate_corpus_dir(&m, dir.path()).unwrap();
    assert_eq!(from_disk.rows.len(), corpus_rows());
    std::fs::remove_file(dir.path().join("test/00001/video.f32")).unwrap();
    match evaluate_corpus_dir(&m, dir.path()) {
        Err(Error::Io { path, .. }) => assert!(path.ends_with("test/00001/video.f32")),
        other => panic!("expected an I/O error, got {other:?}"),
    }
}

fn corpus_rows() -> usize {
    2 * (NoiseFamily::ALL.len() + 1)
}
