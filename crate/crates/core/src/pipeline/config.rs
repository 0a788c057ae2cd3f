use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_error, PipelineError, Result};
use crate::cwt::ImageMode;
use crate::models::{Cnn1dConfig, ModelConfig, ModelKind, ResNet18Config, MAX_BRANCHES};
use crate::preprocess::DenoiseConfig;

/// Number of output branches: derived from the class ratio, or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "BranchRepr", into = "BranchRepr")]
pub enum BranchCount {
    #[default]
    Auto,
    Fixed(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BranchRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<BranchRepr> for BranchCount {
    type Error = String;

    fn try_from(r: BranchRepr) -> std::result::Result<Self, String> {
        match r {
            BranchRepr::Count(n) => Ok(Self::Fixed(n)),
            BranchRepr::Word(w) if w.eq_ignore_ascii_case("auto") => Ok(Self::Auto),
            BranchRepr::Word(w) => Err(format!("branches must be \"auto\" or a count, got '{w}'")),
        }
    }
}

impl From<BranchCount> for BranchRepr {
    fn from(b: BranchCount) -> Self {
        match b {
            BranchCount::Auto => Self::Word("auto".into()),
            BranchCount::Fixed(n) => Self::Count(n),
        }
    }
}

impl fmt::Display for BranchCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for BranchCount {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.parse::<usize>() {
            Ok(n) => Ok(Self::Fixed(n)),
            Err(_) => BranchRepr::Word(s.to_string()).try_into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSettings {
    /// CSV manifest `id,path,label,split`.
    pub manifest: Option<PathBuf>,
    /// Sampling rate of the stored records.
    pub fs: f64,
    /// Used only when the manifest carries no split.
    pub test_fraction: f64,
    /// Rate and length of the network input series.
    pub target_fs: f64,
    pub length: usize,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            manifest: None,
            fs: 300.0,
            test_fraction: 0.2,
            target_fs: 300.0,
            length: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CwtSettings {
    pub scales: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub height: usize,
    pub width: usize,
    pub mode: ImageMode,
}

impl Default for CwtSettings {
    fn default() -> Self {
        Self {
            scales: 64,
            f_min: 1.0,
            f_max: 40.0,
            height: 128,
            width: 128,
            mode: ImageMode::Absolute,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Draw a fresh negative partition every epoch instead of once per run.
    pub repartition_each_epoch: bool,
    /// ResNet18 stage widths.
    pub widths: [usize; 4],
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            repartition_each_epoch: false,
            widths: [64, 128, 256, 512],
        }
    }
}

/// Everything a run depends on. Serialized as TOML; the resolved copy
/// written next to the outputs reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: ModelKind,
    pub branches: BranchCount,
    pub data: DataSettings,
    pub denoise: DenoiseConfig,
    pub cwt: CwtSettings,
    pub train: TrainSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            model: ModelKind::CwtMbResnet,
            branches: BranchCount::Auto,
            data: DataSettings::default(),
            denoise: DenoiseConfig::default(),
            cwt: CwtSettings::default(),
            train: TrainSettings::default(),
        }
    }
}

fn bad(msg: String) -> PipelineError {
    PipelineError::Config(msg)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        Self::from_toml(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(io_error(path))
    }

    /// Range checks for every numeric field.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !(d.fs > 0.0 && d.fs.is_finite()) || !(d.target_fs > 0.0 && d.target_fs.is_finite()) {
            return Err(bad(format!("sampling rates must be positive (fs={}, target_fs={})", d.fs, d.target_fs)));
        }
        if !(0.0..1.0).contains(&d.test_fraction) {
            return Err(bad(format!("test_fraction {} outside [0, 1)", d.test_fraction)));
        }
        if d.length < 16 {
            return Err(bad(format!("input length {} below 16 samples", d.length)));
        }
        let c = &self.cwt;
        if c.scales < 2 {
            return Err(bad(format!("need at least 2 scales, got {}", c.scales)));
        }
        if !(c.f_min > 0.0 && c.f_max > c.f_min && c.f_max <= d.target_fs / 2.0) {
            return Err(bad(format!(
                "CWT band {}..{} Hz must satisfy 0 < f_min < f_max <= {}",
                c.f_min,
                c.f_max,
                d.target_fs / 2.0
            )));
        }
        if c.height < 8 || c.width < 8 {
            return Err(bad(format!("image size {}x{} below 8x8", c.height, c.width)));
        }
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(bad("epochs and batch_size must be >= 1".into()));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(bad(format!("learning rate {} must be positive", t.lr)));
        }
        if t.widths.contains(&0) {
            return Err(bad(format!("zero stage width in {:?}", t.widths)));
        }
        if let BranchCount::Fixed(n) = self.branches {
            if n == 0 || n > MAX_BRANCHES {
                return Err(bad(format!("branches {n} outside 1..={MAX_BRANCHES}")));
            }
        }
        if self.model.multi_branch() {
            return Ok(());
        }
        if let BranchCount::Fixed(n) = self.branches {
            if n != 1 {
                return Err(bad(format!("{} is single-branch but branches = {n}", self.model)));
            }
        }
        Ok(())
    }

    /// Branch count for a training set with the given class sizes.
    pub fn resolve_branches(&self, n_neg: usize, n_pos: usize) -> usize {
        if !self.model.multi_branch() {
            return 1;
        }
        match self.branches {
            BranchCount::Fixed(n) => n,
            BranchCount::Auto => crate::sampler::default_branch_count(n_neg, n_pos),
        }
    }

    /// Network input shape of one sample.
    pub fn sample_shape(&self) -> Vec<usize> {
        if self.model.uses_scalogram() {
            vec![1, self.cwt.height, self.cwt.width]
        } else {
            vec![1, self.data.length]
        }
    }

    pub fn model_config(&self, branches: usize) -> ModelConfig {
        if self.model.uses_scalogram() {
            ModelConfig::Resnet18(ResNet18Config {
                in_channels: 1,
                height: self.cwt.height,
                width: self.cwt.width,
                widths: self.train.widths,
                branches,
            })
        } else {
            ModelConfig::Cnn1d(Cnn1dConfig::new(self.data.length, branches))
        }
    }
}
