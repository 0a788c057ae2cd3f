use serde::{Deserialize, Serialize};

use super::{check_branches, Classifier, Forward, Init, ModelError, Parameters, Result};
use crate::autodiff::Var;

/// Three convolution + max-pool stages over a standardized series; batch
/// norm after the first convolution; one fully connected output stage over
/// the flattened features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Cnn1dConfig {
    pub in_channels: usize,
    pub length: usize,
    pub channels: [usize; 3],
    pub kernels: [usize; 3],
    pub pool: usize,
    pub branches: usize,
}

impl Default for Cnn1dConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            length: 3000,
            channels: [16, 32, 64],
            kernels: [7, 5, 3],
            pool: 2,
            branches: 1,
        }
    }
}

impl Cnn1dConfig {
    pub fn new(length: usize, branches: usize) -> Self {
        Self {
            length,
            branches,
            ..Default::default()
        }
    }

    /// Series length after the three pooling stages.
    pub fn pooled_length(&self) -> usize {
        (0..3).fold(self.length, |l, _| (l - self.pool) / self.pool + 1)
    }

    pub fn feature_count(&self) -> usize {
        self.channels[2] * self.pooled_length()
    }
}

impl Classifier for Cnn1dConfig {
    fn branches(&self) -> usize {
        self.branches
    }

    fn sample_shape(&self) -> Vec<usize> {
        vec![self.in_channels, self.length]
    }

    fn validate(&self) -> Result<()> {
        check_branches(self.branches)?;
        if self.in_channels == 0 || self.channels.contains(&0) {
            return Err(ModelError::InvalidConfig("zero channel count".into()));
        }
        if self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(ModelError::InvalidConfig(format!(
                "kernel sizes must be odd for same padding, got {:?}",
                self.kernels
            )));
        }
        if self.pool == 0 || self.length < self.pool.pow(3) {
            return Err(ModelError::InvalidConfig(format!(
                "length {} too short for three pools of {}",
                self.length, self.pool
            )));
        }
        Ok(())
    }

    fn init_parameters(&self, seed: u64) -> Parameters {
        let mut init = Init::new(seed);
        let [c1, c2, c3] = self.channels;
        let [k1, k2, k3] = self.kernels;
        init.conv("conv1.weight".into(), &[c1, self.in_channels, k1]);
        init.batch_norm("bn1", c1);
        init.conv("conv2.weight".into(), &[c2, c1, k2]);
        init.dense("conv2.bias".into(), &[c2], c1 * k2);
        init.conv("conv3.weight".into(), &[c3, c2, k3]);
        init.dense("conv3.bias".into(), &[c3], c2 * k3);
        let feat = self.feature_count();
        init.dense("head.weight".into(), &[self.branches, feat], feat);
        init.dense("head.bias".into(), &[self.branches], feat);
        init.out
    }

    fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let n = f.graph.shape(x)[0];
        let [k1, k2, k3] = self.kernels;
        let w1 = f.param("conv1.weight")?;
        let h = f.graph.conv1d(x, w1, None, 1, k1 / 2)?;
        let h = f.batch_norm("bn1", h)?;
        let h = f.graph.relu(h)?;
        let mut h = f.graph.max_pool1d(h, self.pool, self.pool, 0)?;
        for (stage, k) in [(2, k2), (3, k3)] {
            let w = f.param(&format!("conv{stage}.weight"))?;
            let b = f.param(&format!("conv{stage}.bias"))?;
            h = f.graph.conv1d(h, w, Some(b), 1, k / 2)?;
            h = f.graph.relu(h)?;
            h = f.graph.max_pool1d(h, self.pool, self.pool, 0)?;
        }
        let flat = f.graph.reshape(h, &[n, self.feature_count()])?;
        let (hw, hb) = (f.param("head.weight")?, f.param("head.bias")?);
        let z = f.graph.linear(flat, hw, Some(hb))?;
        Ok(f.graph.sigmoid(z)?)
    }
}
