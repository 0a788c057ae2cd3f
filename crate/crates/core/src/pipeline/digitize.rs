use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use super::{io_error, PipelineError, Result};
use crate::ingest::{
    binarize_and_remove_grid, column_samples, extract_trace, load_numeric_record, pearson, save_csv_record,
    trace_to_signal, DatasetManifest, EcgRecord, Label, ManifestEntry, PixelMatrix,
    DEFAULT_TRACE_THRESHOLD,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DigitizeOptions {
    /// Sampling rate assigned to the digitized columns.
    pub fs: f64,
    pub threshold: f64,
    pub label: Label,
}

impl Default for DigitizeOptions {
    fn default() -> Self {
        Self {
            fs: 300.0,
            threshold: DEFAULT_TRACE_THRESHOLD,
            label: Label::Unlabeled,
        }
    }
}

/// One line of `digitize_report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DigitizeRow {
    pub file: String,
    pub id: String,
    pub status: String,
    pub samples: usize,
    pub missing_columns: usize,
    /// Against `<stem>.csv` next to the image, when present.
    pub pearson: Option<f64>,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct DigitizeSummary {
    pub rows: Vec<DigitizeRow>,
    pub manifest: PathBuf,
    pub report: PathBuf,
}

impl DigitizeSummary {
    pub fn succeeded(&self) -> usize {
        self.rows.iter().filter(|r| r.status == "ok").count()
    }

    pub fn failed(&self) -> usize {
        self.rows.len() - self.succeeded()
    }
}

fn digitize_one(path: &Path, opts: &DigitizeOptions) -> Result<(EcgRecord, usize)> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let img = PixelMatrix::read_pgm(path)?;
    let bin = binarize_and_remove_grid(&img, opts.threshold);
    let trace = extract_trace(&bin)?;
    let rec = trace_to_signal(&trace, opts.fs, &id, opts.label)?;
    Ok((rec, trace.missing_columns()))
}

/// Digitizes every `.pgm` in `image_dir` into `out_dir/records/<stem>.csv`,
/// writing `manifest.csv` and `digitize_report.csv`. A failing image is
/// logged and reported; the rest still run. Errors only when nothing
/// succeeds.
pub fn digitize_dir(image_dir: &Path, out_dir: &Path, opts: &DigitizeOptions) -> Result<DigitizeSummary> {
    let mut images: Vec<PathBuf> = fs::read_dir(image_dir)
        .map_err(io_error(image_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    images.sort();
    if images.is_empty() {
        return Err(PipelineError::Data(format!("no .pgm images in {}", image_dir.display())));
    }
    let rec_dir = out_dir.join("records");
    fs::create_dir_all(&rec_dir).map_err(io_error(&rec_dir))?;

    let mut rows = Vec::with_capacity(images.len());
    let mut entries = Vec::new();
    for path in &images {
        let file = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        match digitize_one(path, opts) {
            Ok((rec, missing)) => {
                let out = rec_dir.join(format!("{}.csv", rec.id));
                save_csv_record(&out, &rec.samples)?;
                let reference = path.with_extension("csv");
                let r = reference
                    .exists()
                    .then(|| load_numeric_record(&reference, opts.fs, opts.label).ok())
                    .flatten()
                    .map(|src| pearson(&rec.samples, &column_samples(&src.samples, rec.len())));
                rows.push(DigitizeRow {
                    file,
                    id: rec.id.clone(),
                    status: "ok".into(),
                    samples: rec.len(),
                    missing_columns: missing,
                    pearson: r,
                    error: String::new(),
                });
                entries.push(ManifestEntry {
                    id: rec.id,
                    path: out,
                    label: opts.label,
                    split: None,
                });
            }
            Err(e) => {
                warn!("{}: {e}", path.display());
                rows.push(DigitizeRow {
                    id: path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                    file,
                    status: "failed".into(),
                    samples: 0,
                    missing_columns: 0,
                    pearson: None,
                    error: e.to_string(),
                });
            }
        }
    }

    let manifest = out_dir.join("manifest.csv");
    DatasetManifest::new(entries).write_csv(&manifest)?;
    let report = out_dir.join("digitize_report.csv");
    let mut w = csv::Writer::from_path(&report).map_err(|e| PipelineError::Data(e.to_string()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| PipelineError::Data(e.to_string()))?;
    }
    w.flush().map_err(io_error(&report))?;

    let summary = DigitizeSummary {
        rows,
        manifest,
        report,
    };
    info!("digitized {} of {} images", summary.succeeded(), summary.rows.len());
    if summary.succeeded() == 0 {
        return Err(PipelineError::Data(format!(
            "none of the {} images in {} could be digitized",
            summary.rows.len(),
            image_dir.display()
        )));
    }
    Ok(summary)
}
