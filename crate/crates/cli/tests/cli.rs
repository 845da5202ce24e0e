use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use avcrn::dsp::wav::read_wav;
use avcrn::metrics::ConditionRow;
use avcrn::model::load_checkpoint;

const SMALL_CORPUS: &str = "n_train = 6\nn_val = 2\nn_test = 2\nvideo_dim = 8\nseed = 3\n";
const TINY_MODEL: &str = "enc_channels = 4, 8\nlstm_hidden = 16\nlstm_layers = 1\nvideo_dim = 8\nsta_reduction = 2\nbatch_size = 4\n";

fn avcrn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avcrn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = avcrn(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("Usage"), "{}", text(&out.stderr));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = avcrn(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("--bogus"));
}

#[test]
fn help_exits_0() {
    let out = avcrn(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    for cmd in ["synth-data", "train", "enhance", "evaluate", "grad-check", "ablate"] {
        assert!(text(&out.stdout).contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn runtime_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let out = avcrn(&["evaluate", "--checkpoint", s(&missing), "--corpus", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("nope.ckpt"), "{}", text(&out.stderr));
}

#[test]
fn bad_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let ck = dir.path().join("m.ckpt");
    let out = avcrn(&["train", "--config", s(&cfg), "--corpus", s(dir.path()), "--checkpoint", s(&ck)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("learning_rate"), "{}", text(&out.stderr));
}

#[test]
fn grad_check_passes_and_reports_max_error() {
    let out = avcrn(&["grad-check", "--quiet"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stdout));
    let stdout = text(&out.stdout);
    let last = stdout.lines().last().unwrap();
    let value: f64 = last
        .strip_prefix("max rel err ")
        .and_then(|r| r.split_whitespace().next())
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("unexpected summary line {last:?}"));
    assert!(value < 1e-3, "{value}");
}

#[test]
fn synth_train_evaluate_enhance() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let spec = root.join("spec.cfg");
    fs::write(&spec, SMALL_CORPUS).unwrap();
    let corpus = root.join("corpus");
    let out = avcrn(&["synth-data", "--quiet", "--config", s(&spec), "--out", s(&corpus)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(fs::read_dir(corpus.join("train")).unwrap().count(), 6);

    let cfg = root.join("train.cfg");
    fs::write(&cfg, format!("{TINY_MODEL}max_epochs = 2\n")).unwrap();
    let ck = root.join("model.ckpt");
    let out = avcrn(&["train", "--quiet", "--config", s(&cfg), "--corpus", s(&corpus), "--checkpoint", s(&ck)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let loaded = load_checkpoint(&ck).unwrap();
    assert!(loaded.model.config.sta_enabled);
    let trace = fs::read_to_string(root.join("model.ckpt.loss.txt")).unwrap();
    assert!(trace.lines().count() as u64 >= loaded.state.step);
    for line in trace.lines() {
        let (step, loss) = line.split_once(' ').unwrap();
        step.parse::<u64>().unwrap();
        assert!(loss.parse::<f64>().unwrap().is_finite());
    }

    let records = root.join("eval.jsonl");
    let out = avcrn(&["evaluate", "--checkpoint", s(&ck), "--corpus", s(&corpus), "--out", s(&records)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let table = text(&out.stdout);
    assert!(table.contains("stoi_enh") && table.contains("sisdr_enh"), "{table}");
    let rows: Vec<ConditionRow> = fs::read_to_string(&records)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(rows.iter().any(|r| r.noise_family.is_none()));
    assert!(rows.iter().all(|r| r.stoi_enh.is_finite() && r.sisdr_enh.is_finite()));

    let example = corpus.join("test").join("00000");
    let enhanced = root.join("enhanced.wav");
    let out = avcrn(&[
        "enhance",
        "--checkpoint",
        s(&ck),
        s(&example.join("noisy.wav")),
        s(&example.join("video.f32")),
        "--out",
        s(&enhanced),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let noisy = read_wav(example.join("noisy.wav")).unwrap();
    assert_eq!(read_wav(&enhanced).unwrap().len(), noisy.len());

    // video belonging to nothing: wrong frame count
    let wrong = root.join("short.f32");
    let track = avcrn::datagen::read_video(example.join("video.f32")).unwrap();
    let cut = avcrn::datagen::VideoTrack::new(track.dim(), track.data()[..track.dim()].to_vec()).unwrap();
    avcrn::datagen::write_video(&wrong, &cut).unwrap();
    let out = avcrn(&["enhance", "--checkpoint", s(&ck), s(&example.join("noisy.wav")), s(&wrong), "--out", s(&enhanced)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("got 1"), "{}", text(&out.stderr));
}

#[test]
fn no_sta_flag_trains_the_plain_arm() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let spec = root.join("spec.cfg");
    fs::write(&spec, SMALL_CORPUS).unwrap();
    let corpus = root.join("corpus");
    assert!(avcrn(&["synth-data", "--quiet", "--config", s(&spec), "--out", s(&corpus)]).status.success());
    let cfg = root.join("train.cfg");
    fs::write(&cfg, format!("{TINY_MODEL}max_epochs = 1\n")).unwrap();
    let ck = root.join("plain.ckpt");
    let out = avcrn(&[
        "train", "--quiet", "--no-sta", "--seed", "9", "--config", s(&cfg), "--corpus", s(&corpus), "--checkpoint", s(&ck),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let loaded = load_checkpoint(&ck).unwrap();
    assert!(!loaded.model.config.sta_enabled);
    assert_eq!(loaded.model.config.seed, 9);
}

#[test]
fn ablate_prints_both_arms() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let spec = root.join("spec.cfg");
    fs::write(&spec, SMALL_CORPUS).unwrap();
    let corpus = root.join("corpus");
    assert!(avcrn(&["synth-data", "--quiet", "--config", s(&spec), "--out", s(&corpus)]).status.success());
    let cfg = root.join("train.cfg");
    fs::write(&cfg, format!("{TINY_MODEL}max_steps = 3\ncorpus = {}\n", s(&corpus))).unwrap();
    let table_path = root.join("ablation.txt");
    let out = avcrn(&["ablate", "--quiet", "--config", s(&cfg), "--out", s(&table_path)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let table = text(&out.stdout);
    let names: Vec<&str> = table
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_whitespace().next())
        .collect();
    for arm in ["AV-CRN", "AV-CRN+STA"] {
        assert!(names.contains(&arm), "{arm} row missing:\n{table}");
    }
    assert!(table.contains("stoi") && table.contains("sisdr"), "{table}");
    assert_eq!(fs::read_to_string(&table_path).unwrap(), table);
}
