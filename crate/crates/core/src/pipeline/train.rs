use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};

use super::features::{load_records, FeatureSet};
use super::infer::{score_features, CheckpointHeader};
use super::{io_error, PipelineError, Result, RunConfig};
use crate::autodiff::checkpoint::Checkpoint;
use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph};
use crate::eval::{EvalReport, ScoredSample, DEFAULT_THRESHOLD};
use crate::ingest::{split_dataset, DatasetManifest, Label, Split};
use crate::models::{branch_membership, mb_loss, Classifier, Model};
use crate::sampler::{branch_batches, partition, MbTrainingSet};

/// Files written by a training run, all under the run's output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub checkpoint: PathBuf,
    /// `epoch,loss,seconds` per epoch.
    pub loss_log: PathBuf,
    pub config_snapshot: PathBuf,
    pub partition: PathBuf,
    /// Manifest with the split actually used.
    pub split_manifest: PathBuf,
    /// Present when the run had a test split.
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub artifacts: RunArtifacts,
    /// The input config with every automatic choice filled in.
    pub resolved: RunConfig,
    pub branches: usize,
    /// Mean per-sample loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub test_report: Option<EvalReport>,
    pub seconds: f64,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// The manifest as listed, or split by seed when it carries no split.
pub(crate) fn manifest_with_split(cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = cfg
        .data
        .manifest
        .as_deref()
        .ok_or_else(|| PipelineError::Config("no dataset manifest configured".into()))?;
    let manifest = DatasetManifest::read_csv(path)?;
    if manifest.entries.is_empty() {
        return Err(PipelineError::Data(format!("{} lists no records", path.display())));
    }
    let labelled = |e: &&crate::ingest::ManifestEntry| e.label != Label::Unlabeled;
    if manifest.entries.iter().filter(labelled).all(|e| e.split.is_some()) {
        return Ok(manifest);
    }
    Ok(split_dataset(&manifest, cfg.data.test_fraction, cfg.seed)?)
}

/// split → features → partition → Adam on the multi-branch loss →
/// checkpoint, loss log and config snapshot; then a test-set report.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let manifest = manifest_with_split(cfg)?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(io_error(out))?;
    let split_manifest = out.join("split_manifest.csv");
    manifest.write_csv(&split_manifest)?;
    let train_entries: Vec<_> = manifest
        .with_split(Split::Train)
        .into_iter()
        .filter(|e| e.label != Label::Unlabeled)
        .collect();
    let n_pos = train_entries.iter().filter(|e| e.label == Label::Af).count();
    let n_neg = train_entries.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PipelineError::Data(format!(
            "training split needs both classes ({n_pos} AF, {n_neg} normal)"
        )));
    }

    let branches = cfg.resolve_branches(n_neg, n_pos);
    let mut resolved = cfg.clone();
    resolved.branches = super::BranchCount::Fixed(branches);
    let config_snapshot = out.join("resolved_config.toml");
    resolved.save(&config_snapshot)?;

    let records = load_records(&train_entries, cfg.data.fs)?;
    let features = FeatureSet::build(&records, cfg)?;
    info!(
        "features for {} training records ({n_pos} AF, {n_neg} normal) in {:.1}s",
        features.len(),
        started.elapsed().as_secs_f64()
    );

    let ids: Vec<(String, Label)> = records.iter().map(|r| (r.id.clone(), r.label)).collect();
    let mut set = partition(&ids, branches, cfg.seed)?;
    if !set.is_balanced() {
        warn!("branch datasets are not balanced within [1/2, 2] for N_b = {branches}");
    }
    let partition_path = out.join("partition.csv");
    set.write_csv(&partition_path)?;

    let model_config = cfg.model_config(branches);
    let mut model = Model::new(model_config.clone(), cfg.seed)?;
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.train.lr,
        ..AdamConfig::default()
    });
    info!(
        "{} with {} branch(es), {} parameters",
        cfg.model,
        branches,
        model.params.numel()
    );

    let loss_log = out.join("loss.csv");
    let mut log = String::from("epoch,loss,seconds\n");
    let mut epoch_losses = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        if cfg.train.repartition_each_epoch && epoch > 0 {
            set = partition(&ids, branches, epoch_seed(cfg.seed, epoch))?;
        }
        let loss = run_epoch(&mut model, &mut adam, &features, &set, cfg, epoch)?;
        let secs = started.elapsed().as_secs_f64();
        info!("epoch {:>3}/{}  loss {loss:.5}  {secs:.1}s", epoch + 1, cfg.train.epochs);
        log.push_str(&format!("{},{loss},{secs:.3}\n", epoch + 1));
        epoch_losses.push(loss);
        fs::write(&loss_log, &log).map_err(io_error(&loss_log))?;
    }

    let header = CheckpointHeader {
        format: CheckpointHeader::FORMAT.into(),
        kind: cfg.model,
        model: model_config,
        epochs: cfg.train.epochs,
        run: resolved.clone(),
    };
    let checkpoint = out.join("model.ckpt");
    Checkpoint {
        header: serde_json::to_string(&header).expect("header serializes"),
        params: model.params.clone(),
        buffers: model.buffers.clone(),
        optimizer: Some(adam),
    }
    .save(&checkpoint)?;

    let test_entries: Vec<_> = manifest
        .with_split(Split::Test)
        .into_iter()
        .filter(|e| e.label != Label::Unlabeled)
        .collect();
    let has_both = [Label::Af, Label::Normal]
        .iter()
        .all(|l| test_entries.iter().any(|e| e.label == *l));
    let (test_report, report) = if has_both {
        let test_records = load_records(&test_entries, cfg.data.fs)?;
        let test_features = FeatureSet::build(&test_records, cfg)?;
        let scored = score_features(&model, &test_records, &test_features, cfg.train.batch_size)?;
        let report = EvalReport::compute(&scored, DEFAULT_THRESHOLD)?;
        let dir = out.join("eval");
        write_report(&dir, &report, &scored)?;
        info!("test AUROC {:.4}  AUPRC {:.4}  F1 {:.4}", report.auroc, report.auprc, report.f1);
        (Some(report), Some(dir.join("report.json")))
    } else {
        warn!("no labelled test split with both classes; skipping evaluation");
        (None, None)
    };

    Ok(TrainOutcome {
        artifacts: RunArtifacts {
            checkpoint,
            loss_log,
            config_snapshot,
            partition: partition_path,
            split_manifest,
            report,
        },
        resolved,
        branches,
        epoch_losses,
        test_report,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn run_epoch(
    model: &mut Model,
    adam: &mut AdamState,
    features: &FeatureSet,
    set: &MbTrainingSet,
    cfg: &RunConfig,
    epoch: usize,
) -> Result<f64> {
    let batches = branch_batches(set, cfg.train.batch_size, epoch_seed(cfg.seed, epoch));
    let (mut total, mut count) = (0.0, 0usize);
    for b in &batches {
        let x = features.batch(&b.ids)?;
        let mut g = Graph::new();
        let (pred, bound) = model.forward_train(&mut g, x)?;
        let membership = branch_membership(b.ids.len(), b.branch);
        let loss = mb_loss(&mut g, pred, &b.targets, &membership)?;
        g.backward(loss)?;
        total += g.value(loss).data()[0];
        count += b.ids.len();
        adam_step(&mut model.params, &bound.grads(&g), adam)?;
    }
    debug_assert_eq!(model.config.branches(), set.branches());
    Ok(total / count.max(1) as f64)
}

/// `report.json`, `roc.csv`, `pr.csv` and `scores.csv` under `dir`.
pub(crate) fn write_report(dir: &Path, report: &EvalReport, scored: &[ScoredSample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    report.write(dir)?;
    let path = dir.join("scores.csv");
    let mut text = String::from("id,label,score\n");
    for s in scored {
        text.push_str(&format!("{},{},{}\n", s.id, s.label, s.score));
    }
    fs::write(&path, text).map_err(io_error(&path))
}
