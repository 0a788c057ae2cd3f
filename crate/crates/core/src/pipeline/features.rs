use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use super::{PipelineError, Result, RunConfig};
use crate::autodiff::Tensor;
use crate::cwt::{cwt_transform_fft, scalogram_to_image, ScalogramImage, WaveletConfig};
use crate::ingest::{load_numeric_record, EcgRecord, Label, ManifestEntry};
use crate::preprocess::{denoise_chain, standardize, StandardizedSignal};

/// Denoised, fixed-length, z-normalized input series.
pub fn preprocess_record(record: &EcgRecord, cfg: &RunConfig) -> Result<StandardizedSignal> {
    let clean = denoise_chain(record, &cfg.denoise)?;
    Ok(standardize(&clean, cfg.data.length, cfg.data.target_fs))
}

pub fn scalogram_image(signal: &StandardizedSignal, cfg: &RunConfig) -> Result<ScalogramImage> {
    let c = &cfg.cwt;
    let wavelet = WaveletConfig::log_frequency_grid(signal.fs, c.scales, c.f_min, c.f_max)?;
    let s = cwt_transform_fft(&signal.samples, &wavelet)?;
    Ok(scalogram_to_image(&s, c.height, c.width, c.mode)?)
}

/// One flattened network input for `record`, laid out as
/// [`RunConfig::sample_shape`].
pub fn extract_features(record: &EcgRecord, cfg: &RunConfig) -> Result<Vec<f64>> {
    let signal = preprocess_record(record, cfg)?;
    if cfg.model.uses_scalogram() {
        Ok(scalogram_image(&signal, cfg)?.data)
    } else {
        Ok(signal.samples)
    }
}

/// Loads every entry at the configured sampling rate, in parallel.
pub fn load_records(entries: &[&ManifestEntry], fs: f64) -> Result<Vec<EcgRecord>> {
    entries
        .par_iter()
        .map(|e| {
            let mut r = load_numeric_record(&e.path, fs, e.label)?;
            r.id = e.id.clone();
            Ok(r)
        })
        .collect()
}

/// Precomputed inputs keyed by record id.
#[derive(Debug, Clone, Default)]
pub struct FeatureSet {
    pub shape: Vec<usize>,
    pub labels: HashMap<String, Label>,
    features: HashMap<String, Vec<f64>>,
}

impl FeatureSet {
    pub fn build(records: &[EcgRecord], cfg: &RunConfig) -> Result<Self> {
        let computed: Vec<(String, Vec<f64>)> = records
            .par_iter()
            .map(|r| Ok((r.id.clone(), extract_features(r, cfg)?)))
            .collect::<Result<_>>()?;
        let mut features = HashMap::with_capacity(computed.len());
        for (id, f) in computed {
            if features.insert(id.clone(), f).is_some() {
                return Err(PipelineError::Data(format!("duplicate record id '{id}'")));
            }
        }
        Ok(Self {
            shape: cfg.sample_shape(),
            labels: records.iter().map(|r| (r.id.clone(), r.label)).collect(),
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.features.get(id).map(Vec::as_slice)
    }

    /// Stacks the given samples into one `[N, ...shape]` tensor.
    pub fn batch<S: AsRef<str>>(&self, ids: &[S]) -> Result<Tensor> {
        let per: usize = self.shape.iter().product();
        let mut data = Vec::with_capacity(per * ids.len());
        for id in ids {
            let f = self
                .get(id.as_ref())
                .ok_or_else(|| PipelineError::Data(format!("no features for '{}'", id.as_ref())))?;
            data.extend_from_slice(f);
        }
        let mut shape = vec![ids.len()];
        shape.extend_from_slice(&self.shape);
        Ok(Tensor::new(shape, data)?)
    }
}

/// Loads one record file at the configured rate; its id is the file stem.
pub fn load_single(path: &Path, cfg: &RunConfig) -> Result<EcgRecord> {
    Ok(load_numeric_record(path, cfg.data.fs, Label::Unlabeled)?)
}
