use serde::{Deserialize, Serialize};

use super::{check_branches, Classifier, Forward, Init, ModelError, Parameters, Result};
use crate::autodiff::Var;

/// 18-layer residual network: a 7×7 stride-2 stem with 3×3 max pooling,
/// four stages of two basic blocks, global average pooling and the
/// branch head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResNet18Config {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Channels per stage.
    pub widths: [usize; 4],
    pub branches: usize,
}

impl Default for ResNet18Config {
    fn default() -> Self {
        Self {
            in_channels: 1,
            height: 128,
            width: 128,
            widths: [64, 128, 256, 512],
            branches: 1,
        }
    }
}

pub const BLOCKS_PER_STAGE: usize = 2;

impl ResNet18Config {
    pub fn new(height: usize, width: usize, branches: usize) -> Self {
        Self {
            height,
            width,
            branches,
            ..Default::default()
        }
    }

    /// Convolution plus fully-connected layers on the main path.
    pub fn layer_count(&self) -> usize {
        1 + 4 * BLOCKS_PER_STAGE * 2 + 1
    }

    fn blocks(&self) -> impl Iterator<Item = (String, usize, usize, usize)> + '_ {
        (0..4).flat_map(move |s| {
            (0..BLOCKS_PER_STAGE).map(move |b| {
                let c_in = match (s, b) {
                    (0, 0) => self.widths[0],
                    (_, 0) => self.widths[s - 1],
                    _ => self.widths[s],
                };
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                (format!("layer{}.{b}", s + 1), c_in, self.widths[s], stride)
            })
        })
    }
}

/// Basic block `relu(F(x) + shortcut(x))` with
/// `F = bn2(conv2(relu(bn1(conv1(x)))))`. A `{prefix}.proj` 1×1 strided
/// convolution plus batch norm replaces the identity shortcut when
/// `project` is set.
pub fn residual_block(f: &mut Forward<'_>, prefix: &str, x: Var, stride: usize, project: bool) -> Result<Var> {
    let w1 = f.param(&format!("{prefix}.conv1.weight"))?;
    let h = f.graph.conv2d(x, w1, None, stride, 1)?;
    let h = f.batch_norm(&format!("{prefix}.bn1"), h)?;
    let h = f.graph.relu(h)?;
    let w2 = f.param(&format!("{prefix}.conv2.weight"))?;
    let h = f.graph.conv2d(h, w2, None, 1, 1)?;
    let h = f.batch_norm(&format!("{prefix}.bn2"), h)?;
    let shortcut = if project {
        let wp = f.param(&format!("{prefix}.proj.conv.weight"))?;
        let s = f.graph.conv2d(x, wp, None, stride, 0)?;
        f.batch_norm(&format!("{prefix}.proj.bn"), s)?
    } else {
        x
    };
    let y = f.graph.add(h, shortcut)?;
    Ok(f.graph.relu(y)?)
}

impl Classifier for ResNet18Config {
    fn branches(&self) -> usize {
        self.branches
    }

    fn sample_shape(&self) -> Vec<usize> {
        vec![self.in_channels, self.height, self.width]
    }

    fn validate(&self) -> Result<()> {
        check_branches(self.branches)?;
        if self.in_channels == 0 || self.height == 0 || self.width == 0 || self.widths.contains(&0) {
            return Err(ModelError::InvalidConfig(format!("degenerate resnet config {self:?}")));
        }
        Ok(())
    }

    fn init_parameters(&self, seed: u64) -> Parameters {
        let mut init = Init::new(seed);
        init.conv("stem.conv.weight".into(), &[self.widths[0], self.in_channels, 7, 7]);
        init.batch_norm("stem.bn", self.widths[0]);
        for (prefix, c_in, c_out, stride) in self.blocks() {
            init.conv(format!("{prefix}.conv1.weight"), &[c_out, c_in, 3, 3]);
            init.batch_norm(&format!("{prefix}.bn1"), c_out);
            init.conv(format!("{prefix}.conv2.weight"), &[c_out, c_out, 3, 3]);
            init.batch_norm(&format!("{prefix}.bn2"), c_out);
            if stride != 1 || c_in != c_out {
                init.conv(format!("{prefix}.proj.conv.weight"), &[c_out, c_in, 1, 1]);
                init.batch_norm(&format!("{prefix}.proj.bn"), c_out);
            }
        }
        let feat = self.widths[3];
        init.dense("head.weight".into(), &[self.branches, feat], feat);
        init.dense("head.bias".into(), &[self.branches], feat);
        init.out
    }

    fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let w = f.param("stem.conv.weight")?;
        let h = f.graph.conv2d(x, w, None, 2, 3)?;
        let h = f.batch_norm("stem.bn", h)?;
        let h = f.graph.relu(h)?;
        let mut h = f.graph.max_pool2d(h, 3, 2, 1)?;
        for (prefix, c_in, c_out, stride) in self.blocks() {
            h = residual_block(f, &prefix, h, stride, stride != 1 || c_in != c_out)?;
        }
        let pooled = f.graph.global_avg_pool(h)?;
        let (hw, hb) = (f.param("head.weight")?, f.param("head.bias")?);
        let z = f.graph.linear(pooled, hw, Some(hb))?;
        Ok(f.graph.sigmoid(z)?)
    }
}
