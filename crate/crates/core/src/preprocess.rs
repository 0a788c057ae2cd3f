//! Denoising filters and fixed-length standardization.
//!
//! High- and low-pass stages are Butterworth cascades of second-order
//! sections designed with the prewarped bilinear transform; the power-line
//! stage is a single notch biquad. All filtering is forward-backward, so the
//! effective response is the squared magnitude with zero phase.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::EcgRecord;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("cutoff {cutoff} Hz is not inside (0, {nyquist}) Hz")]
    InvalidCutoff { cutoff: f64, nyquist: f64 },
    #[error("signal of {len} samples is shorter than 3x filter order {order}")]
    TooShort { len: usize, order: usize },
    #[error("invalid filter specification: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    HighPass,
    LowPass,
    Notch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    /// Cutoff (HP/LP) or centre (notch) frequency in Hz.
    pub cutoff: f64,
    /// Butterworth order. A notch is always a single biquad.
    pub order: usize,
    /// Notch quality factor; ignored by HP/LP.
    pub q: f64,
}

impl FilterSpec {
    pub fn high_pass(cutoff: f64, order: usize) -> Self {
        Self {
            kind: FilterKind::HighPass,
            cutoff,
            order,
            q: 0.0,
        }
    }

    pub fn low_pass(cutoff: f64, order: usize) -> Self {
        Self {
            kind: FilterKind::LowPass,
            cutoff,
            order,
            q: 0.0,
        }
    }

    pub fn notch(center: f64, q: f64) -> Self {
        Self {
            kind: FilterKind::Notch,
            cutoff: center,
            order: 2,
            q,
        }
    }

    fn effective_order(&self) -> usize {
        match self.kind {
            FilterKind::Notch => 2,
            _ => self.order,
        }
    }

    /// Second-order sections for sampling rate `fs`.
    pub fn design(&self, fs: f64) -> Result<Vec<Biquad>> {
        let nyquist = fs / 2.0;
        if !(self.cutoff > 0.0 && self.cutoff < nyquist) {
            return Err(PreprocessError::InvalidCutoff {
                cutoff: self.cutoff,
                nyquist,
            });
        }
        match self.kind {
            FilterKind::Notch => {
                if !(self.q > 0.0) {
                    return Err(PreprocessError::InvalidSpec(format!(
                        "notch Q must be > 0, got {}",
                        self.q
                    )));
                }
                Ok(vec![Biquad::notch(self.cutoff, self.q, fs)])
            }
            FilterKind::HighPass | FilterKind::LowPass => {
                if self.order == 0 {
                    return Err(PreprocessError::InvalidSpec("order must be >= 1".into()));
                }
                Ok(butterworth(self.kind, self.order, self.cutoff, fs))
            }
        }
    }
}

/// Normalized second-order section (`a[0] == 1`), transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn normalized(b: [f64; 3], a: [f64; 3]) -> Self {
        let a0 = a[0];
        Self {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [1.0, a[1] / a0, a[2] / a0],
        }
    }

    fn notch(f0: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
        // -3 dB bandwidth of exactly f0 / q after the bilinear transform
        let beta = (w0 / (2.0 * q)).tan();
        let c = w0.cos();
        Self::normalized([1.0, -2.0 * c, 1.0], [1.0 + beta, -2.0 * c, 1.0 - beta])
    }

    /// DC gain.
    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2])
    }

    /// Largest pole magnitude.
    pub fn pole_radius(&self) -> f64 {
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            a2.sqrt()
        } else {
            let s = disc.sqrt();
            ((-a1 + s) / 2.0).abs().max(((-a1 - s) / 2.0).abs())
        }
    }

    /// State reached after an infinitely long unit step.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

fn butterworth(kind: FilterKind, order: usize, fc: f64, fs: f64) -> Vec<Biquad> {
    let w0 = 2.0 * std::f64::consts::PI * fc / fs;
    let (sin_w, cos_w) = (w0.sin(), w0.cos());
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for k in 1..=order / 2 {
        let theta = (order + 1 - 2 * k) as f64 * std::f64::consts::PI / (2 * order) as f64;
        let q = 1.0 / (2.0 * theta.cos());
        let alpha = sin_w / (2.0 * q);
        let a = [1.0 + alpha, -2.0 * cos_w, 1.0 - alpha];
        let b = match kind {
            FilterKind::LowPass => [(1.0 - cos_w) / 2.0, 1.0 - cos_w, (1.0 - cos_w) / 2.0],
            _ => [(1.0 + cos_w) / 2.0, -(1.0 + cos_w), (1.0 + cos_w) / 2.0],
        };
        sections.push(Biquad::normalized(b, a));
    }
    if order % 2 == 1 {
        let k = (w0 / 2.0).tan();
        let a = [1.0, (k - 1.0) / (k + 1.0), 0.0];
        let b = match kind {
            FilterKind::LowPass => [k / (1.0 + k), k / (1.0 + k), 0.0],
            _ => [1.0 / (1.0 + k), -1.0 / (1.0 + k), 0.0],
        };
        sections.push(Biquad { b, a });
    }
    sections
}

/// Magnitude response of a cascade at `f` Hz.
pub fn magnitude_response(sections: &[Biquad], f: f64, fs: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f / fs;
    sections
        .iter()
        .map(|s| {
            let eval = |c: &[f64; 3]| {
                let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
                let im = -c[1] * w.sin() - c[2] * (2.0 * w).sin();
                (re * re + im * im).sqrt()
            };
            eval(&s.b) / eval(&s.a)
        })
        .product()
}

fn run_cascade(sections: &[Biquad], x: &mut [f64]) {
    let mut level = x[0];
    for s in sections {
        let zi = s.step_state();
        s.run(x, [zi[0] * level, zi[1] * level]);
        level *= s.dc_gain();
    }
}

/// Zero-phase forward-backward filtering. Each pass starts from the
/// steady state of a step at its first sample, so constant input passes
/// through without edge transients.
pub fn filtfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    if y.is_empty() {
        return y;
    }
    run_cascade(sections, &mut y);
    y.reverse();
    run_cascade(sections, &mut y);
    y.reverse();
    y
}

pub fn apply_filter(record: &EcgRecord, spec: &FilterSpec) -> Result<EcgRecord> {
    let sections = spec.design(record.fs)?;
    let order = spec.effective_order();
    if record.samples.len() < 3 * order {
        return Err(PreprocessError::TooShort {
            len: record.samples.len(),
            order,
        });
    }
    Ok(EcgRecord {
        samples: filtfilt(&sections, &record.samples),
        ..record.clone()
    })
}

/// Stage settings for [`denoise_chain`]; `None` skips a stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiseConfig {
    #[serde(with = "stage")]
    pub high_pass: Option<f64>,
    #[serde(with = "stage")]
    pub notch: Option<f64>,
    pub notch_q: f64,
    #[serde(with = "stage")]
    pub low_pass: Option<f64>,
    pub order: usize,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            high_pass: Some(0.5),
            notch: Some(60.0),
            notch_q: 30.0,
            low_pass: Some(40.0),
            order: 4,
        }
    }
}

/// A stage frequency in Hz, or `false` when the stage is off.
mod stage {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Hz(f64),
        Off(bool),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(f) => Repr::Hz(*f),
            None => Repr::Off(false),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Hz(f) => Ok(Some(f)),
            Repr::Off(false) => Ok(None),
            Repr::Off(true) => Err(serde::de::Error::custom(
                "a filter stage takes a frequency in Hz or false",
            )),
        }
    }
}

impl DenoiseConfig {
    pub fn stages(&self) -> Vec<FilterSpec> {
        let mut out = Vec::new();
        if let Some(f) = self.high_pass {
            out.push(FilterSpec::high_pass(f, self.order));
        }
        if let Some(f) = self.notch {
            out.push(FilterSpec::notch(f, self.notch_q));
        }
        if let Some(f) = self.low_pass {
            out.push(FilterSpec::low_pass(f, self.order));
        }
        out
    }
}

/// High-pass, then notch, then low-pass.
pub fn denoise_chain(record: &EcgRecord, config: &DenoiseConfig) -> Result<EcgRecord> {
    config
        .stages()
        .iter()
        .try_fold(record.clone(), |r, spec| apply_filter(&r, spec))
}

/// Fixed-length, z-normalized network input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedSignal {
    pub samples: Vec<f64>,
    pub fs: f64,
    /// Mean removed during normalization.
    pub mean: f64,
    /// Standard deviation divided out (0 for constant input).
    pub std: f64,
}

impl StandardizedSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Linear-interpolation resampling.
pub fn resample_linear(samples: &[f64], fs: f64, target_fs: f64) -> Vec<f64> {
    if samples.len() < 2 || (fs - target_fs).abs() < 1e-12 {
        return samples.to_vec();
    }
    let n = samples.len();
    let out_len = ((n - 1) as f64 * target_fs / fs).floor() as usize + 1;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * fs / target_fs;
            let j = (pos.floor() as usize).min(n - 2);
            let frac = pos - j as f64;
            samples[j] * (1.0 - frac) + samples[j + 1] * frac
        })
        .collect()
}

/// Center-crop or symmetrically zero-pad to `len` samples.
pub fn fit_length(samples: &[f64], len: usize) -> Vec<f64> {
    let n = samples.len();
    if n >= len {
        let start = (n - len) / 2;
        samples[start..start + len].to_vec()
    } else {
        let left = (len - n) / 2;
        let mut out = vec![0.0; len];
        out[left..left + n].copy_from_slice(samples);
        out
    }
}

pub fn standardize(record: &EcgRecord, target_length: usize, target_fs: f64) -> StandardizedSignal {
    assert!(!record.samples.is_empty(), "standardize: empty record");
    let resampled = resample_linear(&record.samples, record.fs, target_fs);
    let constant = resampled.iter().all(|&v| v == resampled[0]);
    let mut samples = fit_length(&resampled, target_length);
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if constant || std <= 1e-12 * mean.abs().max(1.0) {
        samples.iter_mut().for_each(|v| *v = 0.0);
        return StandardizedSignal {
            samples,
            fs: target_fs,
            mean,
            std: 0.0,
        };
    }
    samples.iter_mut().for_each(|v| *v = (*v - mean) / std);
    StandardizedSignal {
        samples,
        fs: target_fs,
        mean,
        std,
    }
}
