//! Classifiers: ResNet18 over scalogram images, a three-stage 1D CNN over
//! raw series, and the multi-branch output head shared by both.
//!
//! Every network ends in `N_b` sigmoid outputs, shape `[N, N_b]`. The
//! single-branch variants are the same networks with `N_b = 1`.

mod cnn1d;
mod resnet;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    gradcheck, AutodiffError, BatchNormOptions, BoundParams, Graph, ParamStore, RunningStats, Tensor, Var,
};

pub use cnn1d::Cnn1dConfig;
pub use resnet::{residual_block, ResNet18Config};

/// Probability clamp inside the loss.
pub const PROB_EPS: f64 = 1e-7;

/// Upper bound on the number of output branches.
pub const MAX_BRANCHES: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("sample {0} belongs to no branch dataset")]
    MembershipMismatch(usize),
    #[error("no branch outputs to average")]
    EmptyBranches,
    #[error("branch probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// The four experimental arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    CwtMbResnet,
    CwtResnet,
    #[serde(rename = "cnn1d_mb")]
    Cnn1dMb,
    #[serde(rename = "cnn1d")]
    Cnn1d,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [Self::CwtMbResnet, Self::CwtResnet, Self::Cnn1dMb, Self::Cnn1d];

    /// Consumes scalogram images rather than 1D series.
    pub fn uses_scalogram(self) -> bool {
        matches!(self, Self::CwtMbResnet | Self::CwtResnet)
    }

    pub fn multi_branch(self) -> bool {
        matches!(self, Self::CwtMbResnet | Self::Cnn1dMb)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::CwtMbResnet => "cwt_mb_resnet",
            Self::CwtResnet => "cwt_resnet",
            Self::Cnn1dMb => "cnn1d_mb",
            Self::Cnn1d => "cnn1d",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ModelError::InvalidConfig(format!("unknown model kind '{s}'")))
    }
}

/// Trainable parameters plus non-trainable buffers (batch-norm running
/// statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub params: ParamStore,
    pub buffers: ParamStore,
}

/// State threaded through one forward pass.
pub struct Forward<'a> {
    pub graph: &'a mut Graph,
    pub params: &'a BoundParams,
    pub buffers: &'a mut ParamStore,
    pub training: bool,
}

impl Forward<'_> {
    pub fn param(&self, name: &str) -> Result<Var> {
        Ok(self.params.get(name)?)
    }

    /// Batch norm with affine `{prefix}.gamma/beta` and running statistics
    /// `{prefix}.running_mean/var`.
    pub fn batch_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let mean_key = format!("{prefix}.running_mean");
        let var_key = format!("{prefix}.running_var");
        let mut mean = self.buffers.remove(&mean_key)?;
        let mut var = self.buffers.remove(&var_key)?;
        let opts = BatchNormOptions {
            training: self.training,
            ..Default::default()
        };
        let out = self.graph.batch_norm(
            x,
            Some(gamma),
            Some(beta),
            RunningStats {
                mean: &mut mean,
                var: &mut var,
            },
            opts,
        );
        self.buffers.insert(mean_key, mean);
        self.buffers.insert(var_key, var);
        Ok(out?)
    }
}

/// A network producing `[N, N_b]` branch probabilities.
pub trait Classifier {
    fn branches(&self) -> usize;

    /// Shape of one input sample, without the batch axis.
    fn sample_shape(&self) -> Vec<usize>;

    fn validate(&self) -> Result<()>;

    /// Deterministic given `seed`.
    fn init_parameters(&self, seed: u64) -> Parameters;

    fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var>;
}

/// Architecture descriptor stored in checkpoint headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ModelConfig {
    Resnet18(ResNet18Config),
    Cnn1d(Cnn1dConfig),
}

impl ModelConfig {
    fn inner(&self) -> &dyn Classifier {
        match self {
            Self::Resnet18(c) => c,
            Self::Cnn1d(c) => c,
        }
    }
}

impl Classifier for ModelConfig {
    fn branches(&self) -> usize {
        self.inner().branches()
    }

    fn sample_shape(&self) -> Vec<usize> {
        self.inner().sample_shape()
    }

    fn validate(&self) -> Result<()> {
        self.inner().validate()
    }

    fn init_parameters(&self, seed: u64) -> Parameters {
        self.inner().init_parameters(seed)
    }

    fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        self.inner().forward(f, x)
    }
}

/// Configuration plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub buffers: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let Parameters { params, buffers } = config.init_parameters(seed);
        Ok(Self {
            config,
            params,
            buffers,
        })
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        let want = self.config.sample_shape();
        if x.shape().len() != want.len() + 1 || x.shape()[1..] != want[..] {
            return Err(ModelError::Autodiff(AutodiffError::ShapeMismatch(format!(
                "model expects [N, {want:?}], got {:?}",
                x.shape()
            ))));
        }
        Ok(())
    }

    /// Training-mode forward pass on a fresh graph. Running statistics are
    /// updated in place.
    pub fn forward_train(&mut self, g: &mut Graph, x: Tensor) -> Result<(Var, BoundParams)> {
        self.check_batch(&x)?;
        let bound = self.params.bind(g);
        let xv = g.constant(x);
        let mut f = Forward {
            graph: g,
            params: &bound,
            buffers: &mut self.buffers,
            training: true,
        };
        let out = self.config.forward(&mut f, xv)?;
        Ok((out, bound))
    }

    /// Eval-mode branch probabilities, one row per sample.
    pub fn predict_branches(&self, x: Tensor) -> Result<Vec<Vec<f64>>> {
        self.check_batch(&x)?;
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let xv = g.constant(x);
        let mut buffers = self.buffers.clone();
        let mut f = Forward {
            graph: &mut g,
            params: &bound,
            buffers: &mut buffers,
            training: false,
        };
        let out = self.config.forward(&mut f, xv)?;
        let b = self.config.branches();
        Ok(g.value(out).data().chunks(b).map(<[f64]>::to_vec).collect())
    }

    /// Branch-averaged probabilities.
    pub fn predict(&self, x: Tensor) -> Result<Vec<f64>> {
        self.predict_branches(x)?.iter().map(|row| mb_predict(row)).collect()
    }
}

/// Multi-branch binary cross-entropy
/// `L = -Σ_j Σ_i I(j ∈ D_i)[y_j ln p_ij + (1 - y_j) ln(1 - p_ij)]`.
/// `membership[j]` lists the branches sample `j` is counted in.
pub fn mb_loss(g: &mut Graph, pred: Var, targets: &[f64], membership: &[Vec<usize>]) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    let [n, branches] = shape[..] else {
        return Err(AutodiffError::ShapeMismatch(format!("mb_loss prediction {shape:?}")).into());
    };
    if membership.len() != n || targets.len() != n {
        return Err(AutodiffError::ShapeMismatch(format!(
            "mb_loss: {n} predictions, {} targets, {} memberships",
            targets.len(),
            membership.len()
        ))
        .into());
    }
    let mut mask = vec![0.0; n * branches];
    for (j, m) in membership.iter().enumerate() {
        if m.is_empty() || m.iter().any(|&i| i >= branches) {
            return Err(ModelError::MembershipMismatch(j));
        }
        for &i in m {
            mask[j * branches + i] = 1.0;
        }
    }
    Ok(g.bce_masked(pred, targets, &mask, PROB_EPS)?)
}

/// Membership for a batch drawn from one branch dataset.
pub fn branch_membership(n: usize, branch: usize) -> Vec<Vec<usize>> {
    vec![vec![branch]; n]
}

/// Average of the branch outputs.
pub fn mb_predict(branch_probs: &[f64]) -> Result<f64> {
    if branch_probs.is_empty() {
        return Err(ModelError::EmptyBranches);
    }
    if let Some(&p) = branch_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(ModelError::ProbabilityOutOfRange(p));
    }
    // offsets from the first value keep equal inputs exact
    let base = branch_probs[0];
    let n = branch_probs.len() as f64;
    Ok(base + branch_probs.iter().map(|p| p - base).sum::<f64>() / n)
}

/// Seeded initializer that fills a [`Parameters`] set layer by layer.
pub(crate) struct Init {
    rng: ChaCha8Rng,
    pub out: Parameters,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            out: Parameters {
                params: ParamStore::new(),
                buffers: ParamStore::new(),
            },
        }
    }

    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.out.params.insert(name, Tensor::new(shape.to_vec(), data).unwrap());
    }

    /// Convolution kernel, uniform in `±sqrt(6 / fan_in)`.
    pub fn conv(&mut self, name: String, shape: &[usize]) {
        let fan_in: usize = shape[1..].iter().product();
        self.uniform(name, shape, (6.0 / fan_in as f64).sqrt());
    }

    /// Bias or dense weight, uniform in `±1 / sqrt(fan_in)`.
    pub fn dense(&mut self, name: String, shape: &[usize], fan_in: usize) {
        self.uniform(name, shape, 1.0 / (fan_in as f64).sqrt());
    }

    pub fn batch_norm(&mut self, prefix: &str, channels: usize) {
        let p = &mut self.out.params;
        p.insert(format!("{prefix}.gamma"), Tensor::ones(&[channels]));
        p.insert(format!("{prefix}.beta"), Tensor::zeros(&[channels]));
        let b = &mut self.out.buffers;
        b.insert(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]));
        b.insert(format!("{prefix}.running_var"), Tensor::ones(&[channels]));
    }
}

fn check_branches(b: usize) -> Result<()> {
    if b == 0 || b > MAX_BRANCHES {
        return Err(ModelError::InvalidConfig(format!(
            "branch count must be in 1..={MAX_BRANCHES}, got {b}"
        )));
    }
    Ok(())
}

/// Worst relative error between analytic and central-difference gradients
/// of a ResNet18 plus multi-branch loss, over every parameter. Runs a
/// training-mode batch of four random inputs with mixed membership.
pub fn resnet_gradient_check(cfg: &ResNet18Config, seed: u64) -> Result<f64> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = cfg.init_parameters(rng.random());
    let n = 4;
    let shape = [n, cfg.in_channels, cfg.height, cfg.width];
    let numel = shape.iter().product();
    let x = Tensor::new(shape.to_vec(), (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let names: Vec<String> = p.params.names().cloned().collect();
    let inputs: Vec<Tensor> = p.params.iter().map(|(_, t)| t.clone()).collect();
    let targets = [1.0, 0.0, 1.0, 0.0];
    let membership: Vec<Vec<usize>> = (0..n)
        .map(|j| if targets[j] == 1.0 { (0..cfg.branches).collect() } else { vec![j % cfg.branches] })
        .collect();
    let mut f = |g: &mut Graph, vars: &[Var]| -> crate::autodiff::Result<Var> {
        let bound = BoundParams::from_vars(&names, vars);
        let mut buffers = p.buffers.clone();
        let xv = g.constant(x.clone());
        let mut fw = Forward {
            graph: g,
            params: &bound,
            buffers: &mut buffers,
            training: true,
        };
        let run = |fw: &mut Forward<'_>| -> Result<Var> {
            let probs = cfg.forward(fw, xv)?;
            mb_loss(fw.graph, probs, &targets, &membership)
        };
        run(&mut fw).map_err(|e| match e {
            ModelError::Autodiff(e) => e,
            other => AutodiffError::ShapeMismatch(other.to_string()),
        })
    };
    Ok(gradcheck::check(&mut f, &inputs, gradcheck::STEP)?)
}

#[cfg(test)]
mod tests;
