use std::fs;
use std::path::Path;

use super::*;
use crate::ingest::{render_signal, EcgRecord, Label, RenderOptions, Split};
use crate::models::ModelKind;
use crate::synth::{self, SynthConfig, ToyCounts};

fn dataset(dir: &Path, counts: ToyCounts, seed: u64) -> std::path::PathBuf {
    let cfg = SynthConfig {
        duration: 6.0,
        ..Default::default()
    };
    synth::write_dataset(dir, &synth::toy_dataset(&counts, &cfg, seed)).unwrap();
    dir.join("manifest.csv")
}

fn small_counts() -> ToyCounts {
    ToyCounts {
        normal_train: 28,
        af_train: 4,
        normal_test: 6,
        af_test: 3,
    }
}

fn quick_config(manifest: &Path, out: &Path, model: ModelKind) -> RunConfig {
    let mut cfg = RunConfig {
        model,
        out_dir: out.to_path_buf(),
        ..Default::default()
    };
    cfg.data.manifest = Some(manifest.to_path_buf());
    cfg.data.target_fs = 100.0;
    cfg.data.length = 600;
    cfg.cwt.scales = 16;
    cfg.cwt.height = 16;
    cfg.cwt.width = 16;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 8;
    cfg.train.widths = [2, 2, 4, 4];
    cfg
}

#[test]
fn toml_round_trip_keeps_disabled_stages() {
    let mut cfg = RunConfig::default();
    cfg.denoise.notch = None;
    cfg.branches = BranchCount::Fixed(5);
    cfg.data.manifest = Some("data/manifest.csv".into());
    let text = cfg.to_toml();
    assert!(text.contains("notch = false"), "{text}");
    assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
}

#[test]
fn partial_toml_takes_defaults() {
    let cfg = RunConfig::from_toml("model = \"cnn1d_mb\"\nbranches = \"auto\"\n[train]\nepochs = 3\n").unwrap();
    assert_eq!(cfg.model, ModelKind::Cnn1dMb);
    assert_eq!(cfg.branches, BranchCount::Auto);
    assert_eq!(cfg.train.epochs, 3);
    assert_eq!(cfg.train.batch_size, 32);
    assert_eq!(cfg.train.lr, 1e-3);
    assert_eq!(cfg.seed, 0);
    assert_eq!(cfg.cwt.height, 128);
}

#[test]
fn bad_configs_are_config_errors() {
    for text in [
        "unknown_key = 1",
        "model = \"resnet50\"",
        "branches = \"many\"",
        "[train]\nlr = -1.0",
        "[cwt]\nf_max = 400.0",
        "model = \"cnn1d\"\nbranches = 3",
        "branches = 17",
        "[cwt]\nheight = 4",
    ] {
        let err = RunConfig::from_toml(text).and_then(|c| c.validate()).unwrap_err();
        assert_eq!(err.class(), ErrorClass::Config, "{text}: {err}");
    }
}

#[test]
fn branch_resolution() {
    let mut cfg = RunConfig::default();
    assert_eq!(cfg.resolve_branches(340, 48), 7);
    cfg.branches = BranchCount::Fixed(3);
    assert_eq!(cfg.resolve_branches(340, 48), 3);
    cfg.model = ModelKind::CwtResnet;
    cfg.branches = BranchCount::Auto;
    assert_eq!(cfg.resolve_branches(340, 48), 1);
    assert_eq!("auto".parse::<BranchCount>().unwrap(), BranchCount::Auto);
    assert_eq!("4".parse::<BranchCount>().unwrap(), BranchCount::Fixed(4));
}

#[test]
fn auto_branches_recorded_in_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), small_counts(), 1);
    let mut cfg = quick_config(&manifest, &dir.path().join("run"), ModelKind::Cnn1dMb);
    cfg.train.epochs = 1;
    let out = train(&cfg).unwrap();
    assert_eq!(out.branches, 7);
    let snap = RunConfig::load(&out.artifacts.config_snapshot).unwrap();
    assert_eq!(snap.branches, BranchCount::Fixed(7));
    let part = crate::sampler::MbTrainingSet::read_csv(&out.artifacts.partition).unwrap();
    assert_eq!(part.branches(), 7);
    assert_eq!(part.positives.len(), 4);
    let log = fs::read_to_string(&out.artifacts.loss_log).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn same_config_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), small_counts(), 2);
    let a = quick_config(&manifest, &dir.path().join("a"), ModelKind::CwtMbResnet);
    let b = quick_config(&manifest, &dir.path().join("b"), ModelKind::CwtMbResnet);
    let ra = train(&a).unwrap();
    let rb = train(&b).unwrap();
    let bytes = |p: &Path| fs::read(p).unwrap();
    assert_eq!(
        bytes(&ra.artifacts.partition),
        bytes(&rb.artifacts.partition)
    );
    assert_eq!(ra.epoch_losses, rb.epoch_losses);
    // headers differ only in out_dir; the tensors must match exactly
    let ca = crate::autodiff::checkpoint::Checkpoint::load(&ra.artifacts.checkpoint).unwrap();
    let cb = crate::autodiff::checkpoint::Checkpoint::load(&rb.artifacts.checkpoint).unwrap();
    assert_eq!(ca.params, cb.params);
    assert_eq!(ca.buffers, cb.buffers);
    assert_eq!(ca.optimizer, cb.optimizer);

    // rerun from the snapshot into the same directory: identical files
    let snap = RunConfig::load(&ra.artifacts.config_snapshot).unwrap();
    let before = bytes(&ra.artifacts.checkpoint);
    let split_before = bytes(&ra.artifacts.split_manifest);
    let again = train(&snap).unwrap();
    assert_eq!(bytes(&again.artifacts.checkpoint), before);
    assert_eq!(bytes(&again.artifacts.split_manifest), split_before);
}

#[test]
fn manifest_without_split_is_split_by_seed() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), small_counts(), 3);
    let mut m = crate::ingest::DatasetManifest::read_csv(&manifest).unwrap();
    m.entries.iter_mut().for_each(|e| e.split = None);
    let unsplit = dir.path().join("data/unsplit.csv");
    m.write_csv(&unsplit).unwrap();
    let mut cfg = quick_config(&unsplit, &dir.path().join("run"), ModelKind::Cnn1d);
    cfg.train.epochs = 1;
    let out = train(&cfg).unwrap();
    let used = crate::ingest::DatasetManifest::read_csv(&out.artifacts.split_manifest).unwrap();
    let n_test = used.with_split(Split::Test).len();
    // round(34 * 0.2) normal + round(7 * 0.2) AF
    assert_eq!(n_test, 7 + 1);
    assert!(out.test_report.is_some());
}

#[test]
fn evaluate_and_predict_agree() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), small_counts(), 4);
    let cfg = quick_config(&manifest, &dir.path().join("run"), ModelKind::CwtMbResnet);
    let out = train(&cfg).unwrap();
    let eval_dir = dir.path().join("eval");
    let report = evaluate(&out.artifacts.checkpoint, &manifest, &eval_dir).unwrap();
    assert_eq!(report.confusion.total(), 9);
    assert_eq!(Some(&report), out.test_report.as_ref());
    let scores = fs::read_to_string(eval_dir.join("scores.csv")).unwrap();
    let m = crate::ingest::DatasetManifest::read_csv(&manifest).unwrap();
    for line in scores.lines().skip(1).take(3) {
        let f: Vec<&str> = line.split(',').collect();
        let entry = m.entries.iter().find(|e| e.id == f[0]).unwrap();
        let p = predict(&out.artifacts.checkpoint, &entry.path).unwrap();
        let q = predict(&out.artifacts.checkpoint, &entry.path).unwrap();
        assert_eq!(p, q);
        assert!((0.0..=1.0).contains(&p.probability));
        let s: f64 = f[2].parse().unwrap();
        assert!((p.probability - s).abs() < 1e-12, "{} vs {s}", p.probability);
    }
}

#[test]
fn memorized_training_set_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let counts = ToyCounts {
        normal_train: 12,
        af_train: 6,
        normal_test: 0,
        af_test: 0,
    };
    let manifest = dataset(&dir.path().join("data"), counts, 5);
    let mut cfg = quick_config(&manifest, &dir.path().join("run"), ModelKind::Cnn1d);
    cfg.train.epochs = 60;
    cfg.train.batch_size = 18;
    cfg.train.lr = 3e-3;
    let out = train(&cfg).unwrap();
    assert!(out.test_report.is_none());
    let first = out.epoch_losses[0];
    let last = *out.epoch_losses.last().unwrap();
    assert!(last < 0.1 * first, "loss {first} -> {last}");
    // score the training split itself
    let mut m = crate::ingest::DatasetManifest::read_csv(&manifest).unwrap();
    m.entries.iter_mut().for_each(|e| e.split = None);
    let all = dir.path().join("all.csv");
    m.write_csv(&all).unwrap();
    let report = evaluate(&out.artifacts.checkpoint, &all, &dir.path().join("eval")).unwrap();
    assert_eq!(report.f1, 1.0);
    assert_eq!(report.confusion.total(), 18);
}

#[test]
fn architecture_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), small_counts(), 6);
    let mut cfg = quick_config(&manifest, &dir.path().join("run"), ModelKind::Cnn1d);
    cfg.train.epochs = 1;
    let out = train(&cfg).unwrap();
    let mut ckpt = crate::autodiff::checkpoint::Checkpoint::load(&out.artifacts.checkpoint).unwrap();
    let mut header: CheckpointHeader = serde_json::from_str(&ckpt.header).unwrap();
    header.run.data.length = 500;
    ckpt.header = serde_json::to_string(&header).unwrap();
    let bad = dir.path().join("bad.ckpt");
    ckpt.save(&bad).unwrap();
    let err = evaluate(&bad, &manifest, &dir.path().join("e")).unwrap_err();
    assert!(matches!(err, PipelineError::ArchitectureMismatch(_)), "{err}");
}

#[test]
fn digitize_continues_past_bad_images() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    fs::create_dir_all(&images).unwrap();
    let cfg = SynthConfig {
        duration: 2.0,
        ..Default::default()
    };
    for k in 0..3 {
        let x = synth::digitizer_signal(k, &cfg, 9);
        let rec = EcgRecord::new(format!("s{k}"), x.clone(), 300.0, Label::Normal).unwrap();
        let img = render_signal(&rec, &RenderOptions::new(600, 200)).unwrap();
        img.write_pgm(&images.join(format!("s{k}.pgm"))).unwrap();
        crate::ingest::save_csv_record(&images.join(format!("s{k}.csv")), &x).unwrap();
    }
    crate::ingest::PixelMatrix::new(50, 20)
        .write_pgm(&images.join("blank.pgm"))
        .unwrap();
    fs::write(images.join("junk.pgm"), b"not an image").unwrap();

    let out = dir.path().join("out");
    let s = digitize_dir(&images, &out, &DigitizeOptions::default()).unwrap();
    assert_eq!(s.succeeded(), 3);
    assert_eq!(s.failed(), 2);
    let blank = s.rows.iter().find(|r| r.id == "blank").unwrap();
    assert!(blank.error.contains("no signal pixels"), "{}", blank.error);
    for r in s.rows.iter().filter(|r| r.status == "ok") {
        assert!(r.pearson.unwrap() > 0.99, "{r:?}");
        assert!(out.join("records").join(format!("{}.csv", r.id)).exists());
    }
    let m = crate::ingest::DatasetManifest::read_csv(&s.manifest).unwrap();
    assert_eq!(m.entries.len(), 3);
    assert!(s.report.exists());

    let only_bad = dir.path().join("bad");
    fs::create_dir_all(&only_bad).unwrap();
    fs::write(only_bad.join("x.pgm"), b"P5\n").unwrap();
    let err = digitize_dir(&only_bad, &dir.path().join("o2"), &DigitizeOptions::default()).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Data);
}
