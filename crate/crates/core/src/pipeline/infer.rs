use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{extract_features, load_records, load_single, FeatureSet};
use super::train::write_report;
use super::{PipelineError, Result, RunConfig};
use crate::autodiff::checkpoint::Checkpoint;
use crate::eval::{EvalReport, ScoredSample, DEFAULT_THRESHOLD};
use crate::ingest::{DatasetManifest, EcgRecord, Label, Split};
use crate::models::{Classifier, Model, ModelConfig, ModelKind};

/// JSON header stored in every checkpoint: enough to rebuild the network
/// and its input features without the original config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub kind: ModelKind,
    pub model: ModelConfig,
    pub epochs: usize,
    pub run: RunConfig,
}

impl CheckpointHeader {
    pub const FORMAT: &'static str = "ecgwave-model";
}

/// A trained network with the settings that produced its inputs.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub header: CheckpointHeader,
    pub model: Model,
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let ckpt = Checkpoint::load(path)?;
    let header: CheckpointHeader = serde_json::from_str(&ckpt.header).map_err(|e| {
        PipelineError::Data(format!("{}: unreadable checkpoint header: {e}", path.display()))
    })?;
    if header.format != CheckpointHeader::FORMAT {
        return Err(PipelineError::Data(format!(
            "{}: unexpected checkpoint format '{}'",
            path.display(),
            header.format
        )));
    }
    let want = header.run.sample_shape();
    if header.model.sample_shape() != want {
        return Err(PipelineError::ArchitectureMismatch(format!(
            "network expects {:?} but the stored feature settings give {want:?}",
            header.model.sample_shape()
        )));
    }
    let reference = Model::new(header.model.clone(), 0)?;
    for (store, name) in [(&ckpt.params, "parameter"), (&ckpt.buffers, "buffer")] {
        let expected = if name == "parameter" {
            &reference.params
        } else {
            &reference.buffers
        };
        let same = store.len() == expected.len()
            && expected
                .iter()
                .all(|(k, t)| store.get(k).is_ok_and(|s| s.shape() == t.shape()));
        if !same {
            return Err(PipelineError::ArchitectureMismatch(format!(
                "{name} tensors in {} do not match the {} descriptor",
                path.display(),
                header.kind
            )));
        }
    }
    let model = Model {
        config: header.model.clone(),
        params: ckpt.params,
        buffers: ckpt.buffers,
    };
    Ok(LoadedModel { header, model })
}

impl LoadedModel {
    pub fn run_config(&self) -> &RunConfig {
        &self.header.run
    }

    /// Branch-averaged probabilities for already extracted features.
    pub fn score_features(&self, records: &[EcgRecord], features: &FeatureSet) -> Result<Vec<ScoredSample>> {
        score_features(&self.model, records, features, self.header.run.train.batch_size)
    }

    pub fn score_record(&self, record: &EcgRecord) -> Result<f64> {
        let cfg = &self.header.run;
        let x = extract_features(record, cfg)?;
        let mut shape = vec![1];
        shape.extend(cfg.sample_shape());
        let t = crate::autodiff::Tensor::new(shape, x)?;
        Ok(self.model.predict(t)?[0])
    }
}

pub(crate) fn score_features(
    model: &Model,
    records: &[EcgRecord],
    features: &FeatureSet,
    batch_size: usize,
) -> Result<Vec<ScoredSample>> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch_size.max(1)) {
        let ids: Vec<&str> = chunk.iter().map(|r| r.id.as_str()).collect();
        let scores = model.predict(features.batch(&ids)?)?;
        for (r, p) in chunk.iter().zip(scores) {
            let label = u8::from(r.label == Label::Af);
            out.push(ScoredSample::new(r.id.clone(), label, p)?);
        }
    }
    Ok(out)
}

/// Scores the labelled test entries of `manifest` (every labelled entry
/// when it has no split) and writes the report files to `out_dir`.
pub fn evaluate(checkpoint: &Path, manifest: &Path, out_dir: &Path) -> Result<EvalReport> {
    let loaded = load_model(checkpoint)?;
    let cfg = loaded.run_config();
    let manifest = DatasetManifest::read_csv(manifest)?;
    let labelled: Vec<_> = manifest
        .entries
        .iter()
        .filter(|e| e.label != Label::Unlabeled)
        .collect();
    let entries: Vec<_> = if labelled.iter().any(|e| e.split.is_some()) {
        labelled.into_iter().filter(|e| e.split == Some(Split::Test)).collect()
    } else {
        labelled
    };
    if entries.is_empty() {
        return Err(PipelineError::Data("no labelled records to evaluate".into()));
    }
    let records = load_records(&entries, cfg.data.fs)?;
    let features = FeatureSet::build(&records, cfg)?;
    let scored = loaded.score_features(&records, &features)?;
    let report = EvalReport::compute(&scored, DEFAULT_THRESHOLD)?;
    write_report(out_dir, &report, &scored)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub id: String,
    pub probability: f64,
    pub label: Label,
}

pub fn predict(checkpoint: &Path, record: &Path) -> Result<Prediction> {
    let loaded = load_model(checkpoint)?;
    let rec = load_single(record, loaded.run_config())?;
    let p = loaded.score_record(&rec)?;
    Ok(Prediction {
        id: rec.id,
        probability: p,
        label: if p >= DEFAULT_THRESHOLD { Label::Af } else { Label::Normal },
    })
}
