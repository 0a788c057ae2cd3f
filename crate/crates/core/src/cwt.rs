//! Mexican-hat continuous wavelet transform and scalogram images.
//!
//! Coefficients follow
//! `T(a, b) = a^{-1/2} Σ_t x[t] ψ((t - b) / a)` with time measured in
//! samples, zero padding outside the signal and the wavelet truncated where
//! `|(t - b) / a| > 8`. A scale maps to the pseudo-frequency
//! `F = Fc · fs / a`.

use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Conventional centre frequency of the Mexican-hat wavelet.
pub const MEXICAN_HAT_CENTER_FREQUENCY: f64 = 0.25;

/// Support half-width in units of the scale.
pub const SUPPORT: f64 = 8.0;

#[derive(Debug, Error)]
pub enum CwtError {
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid wavelet configuration: {0}")]
    InvalidConfig(String),
    #[error("signal needs at least 2 samples, got {0}")]
    SignalTooShort(usize),
    #[error("image must be at least 8x8, got {0}x{1}")]
    ImageTooSmall(usize, usize),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed scalogram file: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, CwtError>;

/// Negated, normalized second derivative of a Gaussian.
pub fn mexican_hat(t: f64) -> f64 {
    let norm = 2.0 / (3f64.sqrt() * std::f64::consts::PI.powf(0.25));
    norm * (-t * t / 2.0).exp() * (1.0 - t * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MotherWavelet {
    #[default]
    MexicanHat,
}

impl MotherWavelet {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            MotherWavelet::MexicanHat => mexican_hat(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletConfig {
    pub mother: MotherWavelet,
    /// Strictly increasing, positive scales in samples.
    pub scales: Vec<f64>,
    pub center_frequency: f64,
    pub fs: f64,
}

impl WaveletConfig {
    pub fn new(scales: Vec<f64>, center_frequency: f64, fs: f64) -> Result<Self> {
        if scales.is_empty() {
            return Err(CwtError::InvalidConfig("no scales".into()));
        }
        if let Some(&a) = scales.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(CwtError::NonPositiveScale(a));
        }
        if scales.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CwtError::InvalidConfig("scales must be strictly increasing".into()));
        }
        if !(center_frequency > 0.0) || !(fs > 0.0) {
            return Err(CwtError::InvalidConfig(
                "centre frequency and sampling rate must be positive".into(),
            ));
        }
        Ok(Self {
            mother: MotherWavelet::MexicanHat,
            scales,
            center_frequency,
            fs,
        })
    }

    /// `n` scales whose pseudo-frequencies are log-spaced from `f_max`
    /// down to `f_min`.
    pub fn log_frequency_grid(fs: f64, n: usize, f_min: f64, f_max: f64) -> Result<Self> {
        if n < 2 || !(f_min > 0.0 && f_max > f_min) {
            return Err(CwtError::InvalidConfig(format!(
                "frequency grid needs n >= 2 and 0 < f_min < f_max (n={n}, {f_min}..{f_max})"
            )));
        }
        let fc = MEXICAN_HAT_CENTER_FREQUENCY;
        let ratio = (f_max / f_min).ln();
        let scales = (0..n)
            .map(|i| {
                let f = f_max * (-(ratio * i as f64) / (n - 1) as f64).exp();
                fc * fs / f
            })
            .collect();
        Self::new(scales, fc, fs)
    }

    /// Pseudo-frequency of every scale, in grid order.
    pub fn frequencies(&self) -> Vec<f64> {
        self.scales
            .iter()
            .map(|&a| self.center_frequency * self.fs / a)
            .collect()
    }
}

/// Larger of the two frequency gaps adjacent to grid index `i`.
pub fn grid_step(freqs: &[f64], i: usize) -> f64 {
    let below = i.checked_sub(1).map_or(0.0, |j| (freqs[j] - freqs[i]).abs());
    let above = freqs.get(i + 1).map_or(0.0, |f| (f - freqs[i]).abs());
    below.max(above)
}

pub fn scale_to_frequency(a: f64, config: &WaveletConfig) -> Result<f64> {
    if !(a > 0.0) {
        return Err(CwtError::NonPositiveScale(a));
    }
    Ok(config.center_frequency * config.fs / a)
}

/// CWT coefficients, one row per scale and one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalogram {
    coefficients: Vec<f64>,
    n_times: usize,
    pub scales: Vec<f64>,
    pub fs: f64,
}

impl Scalogram {
    pub fn from_rows(rows: Vec<Vec<f64>>, scales: Vec<f64>, fs: f64) -> Self {
        assert_eq!(rows.len(), scales.len(), "one row per scale");
        let n_times = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_times), "ragged scalogram");
        Self {
            coefficients: rows.concat(),
            n_times,
            scales,
            fs,
        }
    }

    pub fn n_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coefficients[i * self.n_times..(i + 1) * self.n_times]
    }

    pub fn get(&self, scale: usize, b: usize) -> f64 {
        self.coefficients[scale * self.n_times + b]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coefficients
    }

    /// Index of the scale with the largest mean `|T|`.
    pub fn dominant_scale(&self) -> usize {
        (0..self.n_scales())
            .map(|i| {
                let r = self.row(i);
                (i, r.iter().map(|v| v.abs()).sum::<f64>() / r.len() as f64)
            })
            .fold((0, f64::NEG_INFINITY), |best, (i, e)| if e > best.1 { (i, e) } else { best })
            .0
    }
}

fn kernel(mother: MotherWavelet, a: f64) -> (usize, Vec<f64>) {
    let half = (SUPPORT * a).floor() as usize;
    let norm = 1.0 / a.sqrt();
    let taps = (0..=2 * half)
        .map(|k| {
            let u = k as f64 - half as f64;
            norm * mother.eval(u / a)
        })
        .collect();
    (half, taps)
}

fn check_signal(signal: &[f64]) -> Result<()> {
    if signal.len() < 2 {
        return Err(CwtError::SignalTooShort(signal.len()));
    }
    Ok(())
}

/// Reference transform by direct truncated convolution.
pub fn cwt_transform(signal: &[f64], config: &WaveletConfig) -> Result<Scalogram> {
    check_signal(signal)?;
    let n = signal.len();
    let rows: Vec<Vec<f64>> = config
        .scales
        .par_iter()
        .map(|&a| {
            let (half, taps) = kernel(config.mother, a);
            (0..n)
                .map(|b| {
                    let lo = b.saturating_sub(half);
                    let hi = (b + half).min(n - 1);
                    (lo..=hi)
                        .map(|t| signal[t] * taps[t + half - b])
                        .sum::<f64>()
                })
                .collect()
        })
        .collect();
    Ok(Scalogram::from_rows(rows, config.scales.clone(), config.fs))
}

/// FFT fast path; matches [`cwt_transform`] to rounding error.
pub fn cwt_transform_fft(signal: &[f64], config: &WaveletConfig) -> Result<Scalogram> {
    check_signal(signal)?;
    let n = signal.len();
    let max_half = config
        .scales
        .iter()
        .map(|&a| (SUPPORT * a).floor() as usize)
        .max()
        .unwrap_or(0);
    let size = (n + max_half + 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);

    let mut spectrum: Vec<Complex<f64>> = signal
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    forward.process(&mut spectrum);

    let rows: Vec<Vec<f64>> = config
        .scales
        .par_iter()
        .map(|&a| {
            let (half, taps) = kernel(config.mother, a);
            let mut buf = vec![Complex::new(0.0, 0.0); size];
            for (k, &w) in taps.iter().enumerate() {
                let u = k as isize - half as isize;
                buf[u.rem_euclid(size as isize) as usize] = Complex::new(w, 0.0);
            }
            forward.process(&mut buf);
            for (b, s) in buf.iter_mut().zip(&spectrum) {
                *b *= s;
            }
            inverse.process(&mut buf);
            let scale = 1.0 / size as f64;
            buf[..n].iter().map(|c| c.re * scale).collect()
        })
        .collect();
    Ok(Scalogram::from_rows(rows, config.scales.clone(), config.fs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImageMode {
    #[default]
    Absolute,
    Signed,
}

/// Min-max normalized scalogram raster, row-major, rows = scales.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalogramImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ScalogramImage {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| (255.0 * v).round().clamp(0.0, 255.0) as u8));
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm())?;
        Ok(())
    }

    /// Little-endian `u32` height, `u32` width, then `f32` values row-major.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.data.len());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(CwtError::Malformed("truncated header".into()));
        }
        let height = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let payload = &bytes[8..];
        if payload.len() != 4 * height * width {
            return Err(CwtError::Malformed(format!(
                "{}x{} grid needs {} bytes, found {}",
                height,
                width,
                4 * height * width,
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Self {
            height,
            width,
            data,
        })
    }
}

/// Overlap weights mapping `src` cells onto `dst` equal-width bins.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let step = src as f64 / dst as f64;
    (0..dst)
        .map(|j| {
            let lo = j as f64 * step;
            let hi = (j + 1) as f64 * step;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|c| {
                    let overlap = (hi.min((c + 1) as f64) - lo.max(c as f64)).max(0.0);
                    (overlap > 0.0).then_some((c, overlap / step))
                })
                .collect()
        })
        .collect()
}

/// Area-averaged resize to `height`×`width`, then min-max to `[0, 1]`.
/// Constant inputs give a uniform 0.5 image.
pub fn scalogram_to_image(
    s: &Scalogram,
    height: usize,
    width: usize,
    mode: ImageMode,
) -> Result<ScalogramImage> {
    if height < 8 || width < 8 {
        return Err(CwtError::ImageTooSmall(height, width));
    }
    let value = |v: f64| match mode {
        ImageMode::Absolute => v.abs(),
        ImageMode::Signed => v,
    };
    let col_w = area_weights(s.n_times(), width);
    let row_w = area_weights(s.n_scales(), height);
    let narrowed: Vec<Vec<f64>> = (0..s.n_scales())
        .map(|r| {
            let row = s.row(r);
            col_w
                .iter()
                .map(|ws| ws.iter().map(|&(c, w)| w * value(row[c])).sum())
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(height * width);
    for ws in &row_w {
        for j in 0..width {
            data.push(ws.iter().map(|&(r, w)| w * narrowed[r][j]).sum::<f64>());
        }
    }
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    if !(range > 1e-12 * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE)) {
        data.iter_mut().for_each(|v| *v = 0.5);
    } else {
        data.iter_mut().for_each(|v| *v = ((*v - lo) / range).clamp(0.0, 1.0));
    }
    Ok(ScalogramImage {
        height,
        width,
        data,
    })
}
