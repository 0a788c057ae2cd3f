//! Synthetic single-lead ECGs.
//!
//! Beats are sums of Gaussian bumps (P, Q, R, S, T) placed on an RR
//! sequence. Sinus rhythm gets a near-constant RR and a P wave; AF gets an
//! irregular RR, no P wave and a low-amplitude fibrillatory baseline.
//! Every generator is a pure function of its seed.

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::{self, DatasetManifest, EcgRecord, IngestError, Label, ManifestEntry, Split};

/// Recording settings shared by the generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub fs: f64,
    /// Seconds.
    pub duration: f64,
    /// Standard deviation of additive white noise.
    pub noise: f64,
    /// Peak amplitude of the slow baseline wander.
    pub wander: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            fs: 300.0,
            duration: 10.0,
            noise: 0.02,
            wander: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn len(&self) -> usize {
        (self.fs * self.duration).round() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One Gaussian component of a beat, timed relative to the R peak.
#[derive(Debug, Clone, Copy)]
struct Wave {
    amp: f64,
    offset: f64,
    width: f64,
}

const P_WAVE: Wave = Wave {
    amp: 0.15,
    offset: -0.18,
    width: 0.025,
};
const QRS: [Wave; 3] = [
    Wave {
        amp: -0.12,
        offset: -0.028,
        width: 0.008,
    },
    Wave {
        amp: 1.0,
        offset: 0.0,
        width: 0.011,
    },
    Wave {
        amp: -0.25,
        offset: 0.03,
        width: 0.009,
    },
];
const T_WAVE: Wave = Wave {
    amp: 0.3,
    offset: 0.26,
    width: 0.045,
};

fn add_wave(x: &mut [f64], fs: f64, center: f64, w: Wave, gain: f64) {
    let c = center + w.offset;
    let lo = (((c - 5.0 * w.width) * fs).floor().max(0.0)) as usize;
    let hi = (((c + 5.0 * w.width) * fs).ceil().max(0.0) as usize).min(x.len());
    for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
        let d = (i as f64 / fs - c) / w.width;
        *v += gain * w.amp * (-0.5 * d * d).exp();
    }
}

/// R-peak times from an RR sequence, starting a random fraction of the
/// first interval into the record.
fn beat_times(rr: impl Iterator<Item = f64>, first: f64, duration: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = first;
    for r in rr {
        if t > duration + 0.5 {
            break;
        }
        out.push(t);
        t += r;
    }
    out
}

/// Bare QRS complexes at the given beat times.
pub fn qrs_train(len: usize, fs: f64, beats: &[f64], amplitude: f64) -> Vec<f64> {
    let mut x = vec![0.0; len];
    for &t in beats {
        for w in QRS {
            add_wave(&mut x, fs, t, w, amplitude);
        }
    }
    x
}

pub fn sine(len: usize, fs: f64, freq: f64, amplitude: f64, phase: f64) -> Vec<f64> {
    (0..len)
        .map(|i| amplitude * (2.0 * PI * freq * i as f64 / fs + phase).sin())
        .collect()
}

fn add_noise<R: Rng>(x: &mut [f64], cfg: &SynthConfig, rng: &mut R) {
    let f = rng.random_range(0.1..0.4);
    let phase = rng.random_range(0.0..2.0 * PI);
    let normal = Normal::new(0.0, cfg.noise.max(0.0)).expect("finite noise level");
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / cfg.fs;
        *v += cfg.wander * (2.0 * PI * f * t + phase).sin();
        if cfg.noise > 0.0 {
            *v += normal.sample(rng);
        }
    }
}

/// Sinus rhythm: 55-100 bpm, RR jitter of about 2 %, P-QRS-T beats.
pub fn normal_ecg<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Vec<f64> {
    let n = cfg.len();
    let mean_rr = 60.0 / rng.random_range(55.0..100.0);
    let jitter = Normal::new(0.0, 0.02 * mean_rr).expect("positive rr");
    let rr: Vec<f64> = (0..(cfg.duration / mean_rr) as usize + 4)
        .map(|_| (mean_rr + jitter.sample(rng)).max(0.3))
        .collect();
    let first = rng.random_range(0.2..0.2 + mean_rr);
    let beats = beat_times(rr.into_iter(), first, cfg.duration);
    let gain = rng.random_range(0.8..1.2);
    let mut x = qrs_train(n, cfg.fs, &beats, gain);
    for &t in &beats {
        add_wave(&mut x, cfg.fs, t, P_WAVE, gain);
        add_wave(&mut x, cfg.fs, t, T_WAVE, gain);
    }
    add_noise(&mut x, cfg, rng);
    x
}

/// Atrial fibrillation: 70-140 bpm with log-normal RR variability, no P
/// wave, fibrillatory waves at 4-9 Hz.
pub fn af_ecg<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Vec<f64> {
    let n = cfg.len();
    let mean_rr: f64 = 60.0 / rng.random_range(70.0..140.0);
    let spread = Normal::new(0.0f64, 0.25).expect("positive spread");
    let rr: Vec<f64> = (0..(cfg.duration / 0.3) as usize + 4)
        .map(|_| (mean_rr * spread.sample(rng).exp()).clamp(0.3, 1.6))
        .collect();
    let first = rng.random_range(0.1..0.1 + mean_rr);
    let beats = beat_times(rr.into_iter(), first, cfg.duration);
    let gain = rng.random_range(0.8..1.2);
    let mut x = qrs_train(n, cfg.fs, &beats, gain);
    for &t in &beats {
        add_wave(&mut x, cfg.fs, t, T_WAVE, gain);
    }
    for _ in 0..3 {
        let f = rng.random_range(4.0..9.0);
        let amp = rng.random_range(0.03..0.08);
        let phase = rng.random_range(0.0..2.0 * PI);
        for (i, v) in x.iter_mut().enumerate() {
            *v += amp * (2.0 * PI * f * i as f64 / cfg.fs + phase).sin();
        }
    }
    add_noise(&mut x, cfg, rng);
    x
}

/// One labelled synthetic record; the rhythm follows the label.
pub fn synthetic_record(id: &str, label: Label, cfg: &SynthConfig, seed: u64) -> EcgRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = match label {
        Label::Af => af_ecg(cfg, &mut rng),
        _ => normal_ecg(cfg, &mut rng),
    };
    EcgRecord::new(id, samples, cfg.fs, label).expect("generator output is finite")
}

/// Signal mix for digitizer round trips: record `k` alternates between a
/// sum of two sines and a QRS train on a sine baseline.
pub fn digitizer_signal(k: usize, cfg: &SynthConfig, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let n = cfg.len();
    let base = sine(n, cfg.fs, rng.random_range(0.2..2.0), 1.0, rng.random_range(0.0..2.0 * PI));
    if k % 2 == 0 {
        let extra = sine(n, cfg.fs, rng.random_range(2.0..6.0), 0.5, rng.random_range(0.0..2.0 * PI));
        base.iter().zip(&extra).map(|(a, b)| a + b).collect()
    } else {
        let rr = 60.0 / rng.random_range(50.0..110.0);
        let beats = beat_times(std::iter::repeat(rr), rng.random_range(0.1..rr), cfg.duration);
        let qrs = qrs_train(n, cfg.fs, &beats, 2.0);
        base.iter().zip(&qrs).map(|(a, b)| 0.3 * a + b).collect()
    }
}

/// Class and split sizes of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyCounts {
    pub normal_train: usize,
    pub af_train: usize,
    pub normal_test: usize,
    pub af_test: usize,
}

impl Default for ToyCounts {
    /// 400 normal and 60 AF records, 340 / 48 of them for training.
    fn default() -> Self {
        Self {
            normal_train: 340,
            af_train: 48,
            normal_test: 60,
            af_test: 12,
        }
    }
}

impl ToyCounts {
    pub fn total(&self) -> usize {
        self.normal_train + self.af_train + self.normal_test + self.af_test
    }
}

/// Records with their split, in a fixed order (normal then AF, train then
/// test). Record `i` is generated from `seed + i`.
pub fn toy_dataset(counts: &ToyCounts, cfg: &SynthConfig, seed: u64) -> Vec<(EcgRecord, Split)> {
    let groups = [
        (Label::Normal, Split::Train, counts.normal_train, "n"),
        (Label::Normal, Split::Test, counts.normal_test, "nt"),
        (Label::Af, Split::Train, counts.af_train, "a"),
        (Label::Af, Split::Test, counts.af_test, "at"),
    ];
    let mut out = Vec::with_capacity(counts.total());
    for (label, split, count, prefix) in groups {
        for i in 0..count {
            let k = out.len() as u64;
            let rec = synthetic_record(&format!("{prefix}{i:04}"), label, cfg, seed.wrapping_add(k));
            out.push((rec, split));
        }
    }
    out
}

/// Writes each record as `records/<id>.csv` plus `manifest.csv` under
/// `dir`, returning the manifest.
pub fn write_dataset(dir: &Path, records: &[(EcgRecord, Split)]) -> Result<DatasetManifest, IngestError> {
    let rec_dir = dir.join("records");
    fs::create_dir_all(&rec_dir).map_err(|e| io_error(&rec_dir, e))?;
    let mut entries = Vec::with_capacity(records.len());
    for (rec, split) in records {
        let path = rec_dir.join(format!("{}.csv", rec.id));
        ingest::save_csv_record(&path, &rec.samples)?;
        entries.push(ManifestEntry {
            id: rec.id.clone(),
            path,
            label: rec.label,
            split: Some(*split),
        });
    }
    let manifest = DatasetManifest::new(entries);
    manifest.write_csv(&dir.join("manifest.csv"))?;
    Ok(manifest)
}

fn io_error(path: &Path, e: io::Error) -> IngestError {
    IngestError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}
