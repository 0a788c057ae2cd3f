//! Recording loaders, chart-strip digitizer and dataset manifests.
//!
//! Two numeric record encodings are understood:
//!
//! * one-column CSV of decimal amplitudes, one sample per line;
//! * a raw little-endian vector: the 4-byte magic `ECG1`, a little-endian
//!   `u32` sample count, then that many `f32` samples.
//!
//! Chart strips are 8-bit binary PGM (`P5`) images. Pixel value `v` maps to
//! intensity `1 - v/255`, so the darkest ink reads as 1.0 and white paper
//! as 0.0.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Magic prefix of the raw binary record encoding.
pub const BINARY_MAGIC: &[u8; 4] = b"ECG1";

/// Default intensity threshold separating ink from grid lines.
pub const DEFAULT_TRACE_THRESHOLD: f64 = 0.99;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed file {path} (line {line}): {reason}")]
    MalformedFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("signal has no samples")]
    EmptySignal,
    #[error("image contains no signal pixels")]
    NoSignalPixels,
    #[error("degenerate render target: {0}")]
    DegenerateRange(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

pub type Result<T> = std::result::Result<T, IngestError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Rhythm annotation of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Af,
    Normal,
    Unlabeled,
}

impl Label {
    /// Binary training target: AF is the positive class.
    pub fn target(self) -> Option<f64> {
        match self {
            Label::Af => Some(1.0),
            Label::Normal => Some(0.0),
            Label::Unlabeled => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Af => "AF",
            Label::Normal => "Normal",
            Label::Unlabeled => "Unlabeled",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    /// Accepts the long names as well as the single-letter codes used by
    /// the public challenge reference files (`A`, `N`).
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "af" | "a" | "1" | "afib" => Ok(Label::Af),
            "normal" | "n" | "0" => Ok(Label::Normal),
            "unlabeled" | "" | "?" => Ok(Label::Unlabeled),
            other => Err(format!("unknown label '{other}'")),
        }
    }
}

/// One labeled single-lead recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgRecord {
    pub id: String,
    pub samples: Vec<f64>,
    /// Sampling frequency in Hz.
    pub fs: f64,
    pub label: Label,
}

impl EcgRecord {
    pub fn new(id: impl Into<String>, samples: Vec<f64>, fs: f64, label: Label) -> Result<Self> {
        if samples.is_empty() {
            return Err(IngestError::EmptySignal);
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(IngestError::InvalidRecord(format!("sampling rate {fs} must be > 0")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(IngestError::InvalidRecord(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            id: id.into(),
            samples,
            fs,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

fn record_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Loads a numeric record, sniffing the binary magic and falling back to CSV.
pub fn load_numeric_record(path: &Path, fs: f64, label: Label) -> Result<EcgRecord> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let samples = if bytes.starts_with(BINARY_MAGIC) {
        parse_binary(path, &bytes)?
    } else {
        parse_csv(path, &bytes)?
    };
    EcgRecord::new(record_id(path), samples, fs, label)
}

fn parse_binary(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    let malformed = |reason: &str| IngestError::MalformedFile {
        path: path.to_path_buf(),
        line: 0,
        reason: reason.to_string(),
    };
    if bytes.len() < 8 {
        return Err(malformed("truncated header"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload = &bytes[8..];
    if payload.len() != count * 4 {
        return Err(malformed(&format!(
            "header declares {count} samples but payload holds {} bytes",
            payload.len()
        )));
    }
    if count == 0 {
        return Err(IngestError::EmptySignal);
    }
    let samples: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(malformed("non-finite sample"));
    }
    Ok(samples)
}

fn parse_csv(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    let text = std::str::from_utf8(bytes).map_err(|_| IngestError::MalformedFile {
        path: path.to_path_buf(),
        line: 0,
        reason: "not UTF-8 text".into(),
    })?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.trim();
        if field.is_empty() {
            continue;
        }
        let value: f64 = field.parse().map_err(|_| IngestError::MalformedFile {
            path: path.to_path_buf(),
            line: i + 1,
            reason: format!("'{field}' is not a number"),
        })?;
        if !value.is_finite() {
            return Err(IngestError::MalformedFile {
                path: path.to_path_buf(),
                line: i + 1,
                reason: "non-finite value".into(),
            });
        }
        samples.push(value);
    }
    if samples.is_empty() {
        return Err(IngestError::EmptySignal);
    }
    Ok(samples)
}

/// Writes samples as one-column CSV.
pub fn save_csv_record(path: &Path, samples: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(samples.len() * 12);
    for v in samples {
        out.push_str(&format!("{v}\n"));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Writes samples in the `ECG1` binary encoding (values narrowed to f32).
pub fn save_binary_record(path: &Path, samples: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + samples.len() * 4);
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for v in samples {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(io_err(path))
}

/// Rasterized chart: intensities in `[0, 1]` addressed by column `m` and
/// row `n`, rows growing downward.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMatrix {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl PixelMatrix {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "pixel matrix must be at least 1x1");
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Builds a matrix from row-major intensities (row 0 first).
    pub fn from_rows(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(IngestError::InvalidRecord(format!(
                "{} intensities for a {width}x{height} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(IngestError::InvalidRecord("intensity outside [0,1]".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.data[n * self.width + m]
    }

    pub fn set(&mut self, m: usize, n: usize, v: f64) {
        debug_assert!((0.0..=1.0).contains(&v));
        self.data[n * self.width + m] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Parses a binary PGM (`P5`, maxval ≤ 255).
    pub fn read_pgm(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        let mut reader = BufReader::new(file);
        let malformed = |reason: &str| IngestError::MalformedFile {
            path: path.to_path_buf(),
            line: 0,
            reason: reason.to_string(),
        };
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            let mut line = String::new();
            if reader.read_line(&mut line).map_err(io_err(path))? == 0 {
                return Err(malformed("truncated PGM header"));
            }
            let content = line.split('#').next().unwrap_or("");
            tokens.extend(content.split_whitespace().map(str::to_string));
        }
        if tokens[0] != "P5" {
            return Err(malformed("expected binary PGM magic P5"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| malformed("bad PGM header field"));
        let width = parse(&tokens[1])?;
        let height = parse(&tokens[2])?;
        let maxval = parse(&tokens[3])?;
        if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
            return Err(malformed("unsupported PGM dimensions or maxval"));
        }
        let mut raw = vec![0u8; width * height];
        reader
            .read_exact(&mut raw)
            .map_err(|_| malformed("PGM pixel payload shorter than header declares"))?;
        let data = raw
            .iter()
            .map(|&v| 1.0 - (v as f64 / 255.0).min(1.0))
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Writes a binary PGM where intensity 1.0 (ink) becomes black.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).map_err(io_err(path))?;
        write!(file, "P5\n{} {}\n255\n", self.width, self.height).map_err(io_err(path))?;
        let raw: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (255.0 * (1.0 - v)).round().clamp(0.0, 255.0) as u8)
            .collect();
        file.write_all(&raw).map_err(io_err(path))
    }
}

/// Keeps only ink pixels: 1 where intensity ≥ `trace_threshold`, else 0.
pub fn binarize_and_remove_grid(img: &PixelMatrix, trace_threshold: f64) -> PixelMatrix {
    let data = img
        .data
        .iter()
        .map(|&v| if v >= trace_threshold { 1.0 } else { 0.0 })
        .collect();
    PixelMatrix {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Signal pixels of a binarized strip, reduced to one row per column.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePointSet {
    width: usize,
    height: usize,
    /// Retained row per column; `None` marks a column without ink.
    rows: Vec<Option<usize>>,
}

impl TracePointSet {
    pub fn from_columns(width: usize, height: usize, rows: Vec<Option<usize>>) -> Result<Self> {
        if rows.len() != width {
            return Err(IngestError::InvalidRecord(format!(
                "{} columns for width {width}",
                rows.len()
            )));
        }
        if rows.iter().flatten().any(|&n| n >= height) {
            return Err(IngestError::InvalidRecord("row index out of range".into()));
        }
        if rows.iter().all(Option::is_none) {
            return Err(IngestError::NoSignalPixels);
        }
        Ok(Self {
            width,
            height,
            rows,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn row(&self, m: usize) -> Option<usize> {
        self.rows[m]
    }

    /// Retained `(m, n)` points in column order.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .filter_map(|(m, r)| r.map(|n| (m, n)))
    }

    pub fn missing_columns(&self) -> usize {
        self.rows.iter().filter(|r| r.is_none()).count()
    }
}

/// Collects the ink pixels of a binary matrix and keeps the median row of
/// each column (lower median when the count is even).
pub fn extract_trace(bin: &PixelMatrix) -> Result<TracePointSet> {
    let mut rows = Vec::with_capacity(bin.width);
    let mut column = Vec::new();
    for m in 0..bin.width {
        column.clear();
        column.extend((0..bin.height).filter(|&n| bin.get(m, n) >= 1.0));
        rows.push(if column.is_empty() {
            None
        } else {
            Some(column[(column.len() - 1) / 2])
        });
    }
    TracePointSet::from_columns(bin.width, bin.height, rows)
}

/// Turns a trace into a pixel-unit signal of length `M`.
///
/// Amplitude is `N - 1 - n`. Interior gaps are linearly interpolated and
/// leading/trailing gaps take the nearest present value.
pub fn trace_to_signal(trace: &TracePointSet, fs: f64, id: &str, label: Label) -> Result<EcgRecord> {
    let amp = |n: usize| (trace.height - 1 - n) as f64;
    let present: Vec<(usize, f64)> = trace.points().map(|(m, n)| (m, amp(n))).collect();
    let (first, last) = match (present.first(), present.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(IngestError::NoSignalPixels),
    };
    let mut samples = vec![0.0; trace.width];
    for s in samples.iter_mut().take(first.0) {
        *s = first.1;
    }
    for pair in present.windows(2) {
        let (m0, v0) = pair[0];
        let (m1, v1) = pair[1];
        let span = (m1 - m0) as f64;
        for m in m0..m1 {
            samples[m] = v0 + (v1 - v0) * (m - m0) as f64 / span;
        }
    }
    for s in samples.iter_mut().skip(last.0) {
        *s = last.1;
    }
    EcgRecord::new(id, samples, fs, label)
}

/// Rendering options for [`render_signal`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub width: usize,
    pub height: usize,
    /// Grid line intensity; must stay below 1 so the digitizer can drop it.
    pub grid_intensity: Option<f64>,
    pub grid_spacing: usize,
}

impl RenderOptions {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            grid_intensity: Some(0.4),
            grid_spacing: 10,
        }
    }

    pub fn without_grid(mut self) -> Self {
        self.grid_intensity = None;
        self
    }
}

/// Value of `samples` at each of `width` evenly spaced columns.
pub fn column_samples(samples: &[f64], width: usize) -> Vec<f64> {
    let n = samples.len();
    (0..width)
        .map(|m| {
            if n == 1 || width == 1 {
                return samples[0];
            }
            let pos = m as f64 * (n - 1) as f64 / (width - 1) as f64;
            let i = (pos.floor() as usize).min(n - 2);
            let frac = pos - i as f64;
            samples[i] * (1.0 - frac) + samples[i + 1] * frac
        })
        .collect()
}

/// Draws a record as a chart strip: ink at 1.0, optional grid below 1.
///
/// Each column paints its own row plus half of the vertical gap towards
/// both neighbours.
pub fn render_signal(record: &EcgRecord, opts: &RenderOptions) -> Result<PixelMatrix> {
    let (w, h) = (opts.width, opts.height);
    if w < 2 || h < 2 {
        return Err(IngestError::DegenerateRange(format!(
            "render target {w}x{h} must be at least 2x2"
        )));
    }
    if let Some(g) = opts.grid_intensity {
        if !(0.0..1.0).contains(&g) {
            return Err(IngestError::DegenerateRange(format!(
                "grid intensity {g} must lie in [0,1)"
            )));
        }
    }
    let mut img = PixelMatrix::new(w, h);
    if let Some(g) = opts.grid_intensity {
        let spacing = opts.grid_spacing.max(1);
        for n in 0..h {
            for m in 0..w {
                if m % spacing == 0 || n % spacing == 0 {
                    img.set(m, n, g);
                }
            }
        }
    }
    let values = column_samples(&record.samples, w);
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let margin = (h / 20).max(if h > 2 { 1 } else { 0 });
    let top = margin as f64;
    let bottom = (h - 1 - margin) as f64;
    let rows: Vec<i64> = values
        .iter()
        .map(|&v| {
            if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
                ((h - 1) / 2) as i64
            } else {
                (top + (hi - v) / (hi - lo) * (bottom - top)).round() as i64
            }
        })
        .collect();
    for m in 0..w {
        let r = rows[m];
        let mut lo_row = r;
        let mut hi_row = r;
        for nb in [m.checked_sub(1), (m + 1 < w).then_some(m + 1)].into_iter().flatten() {
            // Half of the gap, rounded towards this column's own row.
            let half = (rows[nb] - r) / 2;
            lo_row = lo_row.min(r + half);
            hi_row = hi_row.max(r + half);
        }
        for n in lo_row..=hi_row {
            img.set(m, n as usize, 1.0);
        }
    }
    Ok(img)
}

/// Which side of the train/test split an entry falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub label: Label,
    pub split: Option<Split>,
}

/// Labeled record list with an optional train/test assignment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Seed that produced the current split, if any.
    pub split_seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    path: String,
    label: String,
    #[serde(default)]
    split: String,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self {
            entries,
            split_seed: None,
        }
    }

    /// Reads `id,path,label,split` CSV. Relative paths resolve against the
    /// manifest's directory.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        let mut entries = Vec::new();
        for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| csv_err(path, e))?;
            let bad = |reason: String| IngestError::MalformedFile {
                path: path.to_path_buf(),
                line,
                reason,
            };
            let label = row.label.parse::<Label>().map_err(bad)?;
            let split = if row.split.is_empty() {
                None
            } else {
                Some(row.split.parse::<Split>().map_err(bad)?)
            };
            let rec_path = PathBuf::from(&row.path);
            let rec_path = if rec_path.is_relative() {
                base.join(rec_path)
            } else {
                rec_path
            };
            entries.push(ManifestEntry {
                id: row.id,
                path: rec_path,
                label,
                split,
            });
        }
        Ok(Self::new(entries))
    }

    /// Writes the manifest; paths under `base` are stored relative to it.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for e in &self.entries {
            let p = e.path.strip_prefix(base).unwrap_or(&e.path);
            writer
                .serialize(ManifestRow {
                    id: e.id.clone(),
                    path: p.display().to_string(),
                    label: e.label.to_string(),
                    split: match e.split {
                        Some(Split::Train) => "train".into(),
                        Some(Split::Test) => "test".into(),
                        None => String::new(),
                    },
                })
                .map_err(|e| csv_err(path, e))?;
        }
        writer.flush().map_err(io_err(path))
    }

    pub fn with_split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Some(split)).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }
}

fn csv_err(path: &Path, e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    IngestError::MalformedFile {
        path: path.to_path_buf(),
        line,
        reason: e.to_string(),
    }
}

/// Stratified train/test split.
///
/// Each class contributes `round(count * test_fraction)` entries to the
/// test side, chosen by a seeded shuffle of that class.
pub fn split_dataset(
    manifest: &DatasetManifest,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(IngestError::InsufficientData(format!(
            "test fraction {test_fraction} outside [0,1]"
        )));
    }
    if manifest.entries.len() < 2 {
        return Err(IngestError::InsufficientData(
            "need at least two entries to split".into(),
        ));
    }
    for label in [Label::Af, Label::Normal] {
        if manifest.count(label) == 0 {
            return Err(IngestError::InsufficientData(format!("no {label} entries")));
        }
    }
    let mut out = manifest.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for label in [Label::Af, Label::Normal, Label::Unlabeled] {
        let mut idx: Vec<usize> = (0..out.entries.len())
            .filter(|&i| out.entries[i].label == label)
            .collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            out.entries[i].split = Some(if k < n_test { Split::Test } else { Split::Train });
        }
    }
    out.split_seed = Some(seed);
    Ok(out)
}

/// Pearson correlation of two equal-length series (0 for degenerate input).
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson: length mismatch");
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}
