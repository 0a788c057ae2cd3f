//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape once in reverse and leaves
//! `∂loss/∂leaf` on every leaf created with `requires_grad`. A graph is
//! single-use: a second `backward` fails with
//! [`AutodiffError::GraphConsumed`].
//!
//! Layouts are NCHW for images and NCL for series; a missing batch axis is
//! accepted by the convolution primitives and treated as `N = 1`.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub(crate) mod kernels;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use params::{BoundParams, ParamStore};
pub use tensor::Tensor;

use kernels::{ConvGeometry, PoolGeometry};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Batch-norm hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormOptions {
    pub eps: f64,
    pub momentum: f64,
    pub training: bool,
}

impl Default for BatchNormOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
            training: true,
        }
    }
}

/// Running statistics of one batch-norm layer.
#[derive(Debug)]
pub struct RunningStats<'a> {
    pub mean: &'a mut Tensor,
    pub var: &'a mut Tensor,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Sigmoid(Var),
    Reshape(Var),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        geom: PoolGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        channels: usize,
        spatial: usize,
        training: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Bce {
        p: Var,
        targets: Vec<f64>,
        mask: Vec<f64>,
        eps: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
    op: Op,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf node; gradients are retained only when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, parents: &[Var], op: Op, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite(name));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn zip_map(&self, a: Var, b: Var, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.same_shape(tb, op)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect()).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "add", |x, y| x + y)?;
        self.push(v, &[a, b], Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "sub", |x, y| x - y)?;
        self.push(v, &[a, b], Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "mul", |x, y| x * y)?;
        self.push(v, &[a, b], Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.map(a, |x| x * s);
        self.push(v, &[a], Op::Scale(a, s), "scale")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), &[a], Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.map(a, |x| x.max(0.0));
        self.push(v, &[a], Op::Relu(a), "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.map(a, sigmoid);
        self.push(v, &[a], Op::Sigmoid(a), "sigmoid")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshaped(shape)?;
        self.push(v, &[a], Op::Reshape(a), "reshape")
    }

    /// 2D convolution (cross-correlation) of `x` `[N,C,H,W]` or `[C,H,W]`
    /// with `w` `[O,C,kh,kw]` and optional bias `[O]`. Out-of-range reads
    /// are zero.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (n, c, h, wd, batched) = match xs.as_slice() {
            [n, c, h, w] => (*n, *c, *h, *w, true),
            [c, h, w] => (1, *c, *h, *w, false),
            other => return Err(AutodiffError::ShapeMismatch(format!("conv2d input {other:?}"))),
        };
        let [o, ci, kh, kw] = ws[..] else {
            return Err(AutodiffError::ShapeMismatch(format!("conv2d kernel {ws:?}")));
        };
        let geom = ConvGeometry {
            n,
            c_in: c,
            h,
            w: wd,
            c_out: o,
            kh,
            kw,
            sh: stride,
            sw: stride,
            ph: pad,
            pw: pad,
        };
        self.check_conv(&geom, ci, b)?;
        let out_shape = if batched {
            vec![n, o, geom.out_h(), geom.out_w()]
        } else {
            vec![o, geom.out_h(), geom.out_w()]
        };
        self.conv(x, w, b, geom, out_shape)
    }

    /// 1D convolution of `x` `[N,C,L]` or `[C,L]` with `w` `[O,C,k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (n, c, l, batched) = match xs.as_slice() {
            [n, c, l] => (*n, *c, *l, true),
            [c, l] => (1, *c, *l, false),
            other => return Err(AutodiffError::ShapeMismatch(format!("conv1d input {other:?}"))),
        };
        let [o, ci, k] = ws[..] else {
            return Err(AutodiffError::ShapeMismatch(format!("conv1d kernel {ws:?}")));
        };
        let geom = ConvGeometry {
            n,
            c_in: c,
            h: 1,
            w: l,
            c_out: o,
            kh: 1,
            kw: k,
            sh: 1,
            sw: stride,
            ph: 0,
            pw: pad,
        };
        self.check_conv(&geom, ci, b)?;
        let out_shape = if batched {
            vec![n, o, geom.out_w()]
        } else {
            vec![o, geom.out_w()]
        };
        self.conv(x, w, b, geom, out_shape)
    }

    fn check_conv(&self, g: &ConvGeometry, kernel_c_in: usize, b: Option<Var>) -> Result<()> {
        if kernel_c_in != g.c_in {
            return Err(AutodiffError::ShapeMismatch(format!(
                "input has {} channels, kernel expects {kernel_c_in}",
                g.c_in
            )));
        }
        if g.sh == 0 || g.sw == 0 {
            return Err(AutodiffError::ShapeMismatch("stride must be >= 1".into()));
        }
        if g.h + 2 * g.ph < g.kh || g.w + 2 * g.pw < g.kw {
            return Err(AutodiffError::ShapeMismatch(format!(
                "padded input {}x{} smaller than kernel {}x{}",
                g.h + 2 * g.ph,
                g.w + 2 * g.pw,
                g.kh,
                g.kw
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [g.c_out] {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "bias {:?} for {} output channels",
                    self.shape(b),
                    g.c_out
                )));
            }
        }
        Ok(())
    }

    fn conv(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry, shape: Vec<usize>) -> Result<Var> {
        let out = kernels::conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let value = Tensor::new(shape, out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(value, &parents, Op::Conv { x, w, b, geom }, "conv")
    }

    fn pool_geometry(&self, x: Var, k: (usize, usize), s: (usize, usize), p: (usize, usize), spatial_dims: usize) -> Result<(PoolGeometry, Vec<usize>)> {
        let xs = self.shape(x).to_vec();
        if xs.len() < spatial_dims + 1 {
            return Err(AutodiffError::ShapeMismatch(format!("pool input {xs:?}")));
        }
        let lead = &xs[..xs.len() - spatial_dims];
        let (h, w) = if spatial_dims == 2 {
            (xs[xs.len() - 2], xs[xs.len() - 1])
        } else {
            (1, xs[xs.len() - 1])
        };
        let g = PoolGeometry {
            planes: lead.iter().product(),
            h,
            w,
            kh: k.0,
            kw: k.1,
            sh: s.0,
            sw: s.1,
            ph: p.0,
            pw: p.1,
        };
        if g.sh == 0 || g.sw == 0 || g.kh == 0 || g.kw == 0 || g.h + 2 * g.ph < g.kh || g.w + 2 * g.pw < g.kw || g.ph >= g.kh || g.pw >= g.kw {
            return Err(AutodiffError::ShapeMismatch(format!(
                "pool window {k:?}/stride {s:?}/pad {p:?} on {xs:?}"
            )));
        }
        let mut shape = lead.to_vec();
        if spatial_dims == 2 {
            shape.push(g.out_h());
        }
        shape.push(g.out_w());
        Ok((g, shape))
    }

    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let (g, shape) = self.pool_geometry(x, (k, k), (stride, stride), (pad, pad), 2)?;
        self.max_pool(x, g, shape)
    }

    pub fn max_pool1d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let (g, shape) = self.pool_geometry(x, (1, k), (1, stride), (0, pad), 1)?;
        self.max_pool(x, g, shape)
    }

    fn max_pool(&mut self, x: Var, g: PoolGeometry, shape: Vec<usize>) -> Result<Var> {
        let (out, argmax) = kernels::max_pool_forward(self.value(x).data(), &g);
        let value = Tensor::new(shape, out)?;
        self.push(value, &[x], Op::MaxPool { x, argmax }, "max_pool")
    }

    /// Average pooling without padding.
    pub fn avg_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (g, shape) = self.pool_geometry(x, (k, k), (stride, stride), (0, 0), 2)?;
        self.avg_pool(x, g, shape)
    }

    pub fn avg_pool1d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (g, shape) = self.pool_geometry(x, (1, k), (1, stride), (0, 0), 1)?;
        self.avg_pool(x, g, shape)
    }

    /// Mean over every axis after the first two: `[N,C,...]` → `[N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 {
            return Err(AutodiffError::ShapeMismatch(format!("global_avg_pool input {xs:?}")));
        }
        let spatial: usize = xs[2..].iter().product();
        let g = PoolGeometry {
            planes: xs[0] * xs[1],
            h: 1,
            w: spatial,
            kh: 1,
            kw: spatial,
            sh: 1,
            sw: spatial,
            ph: 0,
            pw: 0,
        };
        self.avg_pool(x, g, vec![xs[0], xs[1]])
    }

    fn avg_pool(&mut self, x: Var, geom: PoolGeometry, shape: Vec<usize>) -> Result<Var> {
        let out = kernels::avg_pool_forward(self.value(x).data(), &geom);
        let value = Tensor::new(shape, out)?;
        self.push(value, &[x], Op::AvgPool { x, geom }, "avg_pool")
    }

    /// Per-channel normalization of `[N,C,...]`. Training mode normalizes
    /// with biased batch statistics and folds them into `running` with the
    /// configured momentum (unbiased variance); eval mode uses `running`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        running: RunningStats<'_>,
        opts: BatchNormOptions,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(AutodiffError::ShapeMismatch(format!("batch_norm input {xs:?}")));
        }
        let (n, channels) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        for (v, what) in [(gamma, "gamma"), (beta, "beta")] {
            if let Some(v) = v {
                if self.shape(v) != [channels] {
                    return Err(AutodiffError::ShapeMismatch(format!(
                        "batch_norm {what} {:?} for {channels} channels",
                        self.shape(v)
                    )));
                }
            }
        }
        if running.mean.shape() != [channels] || running.var.shape() != [channels] {
            return Err(AutodiffError::ShapeMismatch("batch_norm running stats".into()));
        }
        let count = (n * spatial) as f64;
        let data = self.value(x).data();
        let mut xhat = vec![0.0; data.len()];
        let mut inv_std = vec![0.0; channels];
        for c in 0..channels {
            let plane = |i: usize| (i * channels + c) * spatial;
            let (mean, var) = if opts.training {
                let mut s = 0.0;
                for i in 0..n {
                    s += data[plane(i)..plane(i) + spatial].iter().sum::<f64>();
                }
                let mean = s / count;
                let mut sq = 0.0;
                for i in 0..n {
                    sq += data[plane(i)..plane(i) + spatial]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = sq / count;
                let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
                let m = opts.momentum;
                running.mean.data_mut()[c] = (1.0 - m) * running.mean.data()[c] + m * mean;
                running.var.data_mut()[c] = (1.0 - m) * running.var.data()[c] + m * unbiased;
                (mean, var)
            } else {
                (running.mean.data()[c], running.var.data()[c])
            };
            let inv = 1.0 / (var + opts.eps).sqrt();
            inv_std[c] = inv;
            for i in 0..n {
                for k in plane(i)..plane(i) + spatial {
                    xhat[k] = (data[k] - mean) * inv;
                }
            }
        }
        let g = gamma.map(|v| self.value(v).data().to_vec());
        let b = beta.map(|v| self.value(v).data().to_vec());
        let mut out = xhat.clone();
        for (k, o) in out.iter_mut().enumerate() {
            let c = (k / spatial) % channels;
            if let Some(g) = &g {
                *o *= g[c];
            }
            if let Some(b) = &b {
                *o += b[c];
            }
        }
        let value = Tensor::new(xs, out)?;
        let mut parents = vec![x];
        parents.extend(gamma);
        parents.extend(beta);
        self.push(
            value,
            &parents,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                channels,
                spatial,
                training: opts.training,
            },
            "batch_norm",
        )
    }

    /// Fully connected layer: `x` `[N,F]`, `w` `[O,F]`, bias `[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (&[n, f], &[o, fw]) = (&xs[..], &ws[..]) else {
            return Err(AutodiffError::ShapeMismatch(format!("linear {xs:?} x {ws:?}")));
        };
        if f != fw {
            return Err(AutodiffError::ShapeMismatch(format!("linear {xs:?} x {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(AutodiffError::ShapeMismatch(format!("linear bias {:?}", self.shape(b))));
            }
        }
        let mut out = vec![0.0; n * o];
        kernels::gemm(n, f, o, self.value(x).data(), false, self.value(w).data(), true, 0.0, &mut out);
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(o) {
                for (v, bb) in row.iter_mut().zip(bd) {
                    *v += bb;
                }
            }
        }
        let value = Tensor::new(vec![n, o], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(value, &parents, Op::Linear { x, w, b }, "linear")
    }

    /// Masked binary cross-entropy summed over `[N,B]` probabilities:
    /// `-Σ mask·(y·ln p + (1-y)·ln(1-p))` with `p` clamped to `[eps, 1-eps]`.
    pub fn bce_masked(&mut self, p: Var, targets: &[f64], mask: &[f64], eps: f64) -> Result<Var> {
        let ps = self.shape(p).to_vec();
        let [n, branches] = ps[..] else {
            return Err(AutodiffError::ShapeMismatch(format!("bce input {ps:?}")));
        };
        if targets.len() != n || mask.len() != n * branches {
            return Err(AutodiffError::ShapeMismatch(format!(
                "bce: {} targets / {} mask entries for {ps:?}",
                targets.len(),
                mask.len()
            )));
        }
        let data = self.value(p).data();
        let mut loss = 0.0;
        for i in 0..n {
            let y = targets[i];
            for j in 0..branches {
                let m = mask[i * branches + j];
                if m == 0.0 {
                    continue;
                }
                let q = data[i * branches + j].clamp(eps, 1.0 - eps);
                loss -= m * (y * q.ln() + (1.0 - y) * (1.0 - q).ln());
            }
        }
        self.push(
            Tensor::scalar(loss),
            &[p],
            Op::Bce {
                p,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                eps,
            },
            "bce",
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(AutodiffError::GraphConsumed);
        }
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NotScalar(shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(&shape));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                self.nodes[i].grad = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn like(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape")
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, self.like(*b, gd.iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let ga = gd.iter().zip(vb).map(|(g, y)| g * y).collect();
                let gb = gd.iter().zip(va).map(|(g, x)| g * x).collect();
                self.accumulate(grads, *a, self.like(*a, ga));
                self.accumulate(grads, *b, self.like(*b, gb));
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, *a, self.like(*a, gd.iter().map(|v| v * s).collect()));
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, self.like(*a, vec![gd[0]; n]));
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                let ga = gd.iter().zip(va).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *a, self.like(*a, ga));
            }
            Op::Sigmoid(a) => {
                let out = node.value.data();
                let ga = gd.iter().zip(out).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, *a, self.like(*a, ga));
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, self.like(*a, gd.to_vec()));
            }
            Op::Conv { x, w, b, geom } => {
                let need_dx = self.nodes[x.0].requires_grad;
                let (dx, dw, db) = kernels::conv_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    geom,
                    need_dx,
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                self.accumulate(grads, *w, self.like(*w, dw));
                if let Some(b) = b {
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (g, &idx) in gd.iter().zip(argmax) {
                    dx[idx] += g;
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::AvgPool { x, geom } => {
                let dx = kernels::avg_pool_backward(gd, geom);
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                channels,
                spatial,
                training,
            } => {
                let (channels, spatial) = (*channels, *spatial);
                let n = xhat.len() / (channels * spatial);
                let count = (n * spatial) as f64;
                let gamma_v = gamma.map(|v| self.value(v).data().to_vec());
                let mut dgamma = vec![0.0; channels];
                let mut dbeta = vec![0.0; channels];
                let mut dx = vec![0.0; xhat.len()];
                for c in 0..channels {
                    let scale = gamma_v.as_ref().map_or(1.0, |g| g[c]);
                    let idx = (0..n).flat_map(|i| {
                        let start = (i * channels + c) * spatial;
                        start..start + spatial
                    });
                    let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
                    for k in idx.clone() {
                        sum_dy += gd[k];
                        sum_dy_xhat += gd[k] * xhat[k];
                    }
                    dgamma[c] = sum_dy_xhat;
                    dbeta[c] = sum_dy;
                    let inv = inv_std[c];
                    if *training {
                        for k in idx {
                            dx[k] = scale * inv * (gd[k] - sum_dy / count - xhat[k] * sum_dy_xhat / count);
                        }
                    } else {
                        for k in idx {
                            dx[k] = scale * inv * gd[k];
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
                if let Some(gm) = gamma {
                    self.accumulate(grads, *gm, self.like(*gm, dgamma));
                }
                if let Some(bt) = beta {
                    self.accumulate(grads, *bt, self.like(*bt, dbeta));
                }
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (n, f) = (xs[0], xs[1]);
                let o = self.shape(*w)[0];
                if self.nodes[x.0].requires_grad {
                    let mut dx = vec![0.0; n * f];
                    kernels::gemm(n, o, f, gd, false, self.value(*w).data(), false, 0.0, &mut dx);
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                let mut dw = vec![0.0; o * f];
                kernels::gemm(o, n, f, gd, true, self.value(*x).data(), false, 0.0, &mut dw);
                self.accumulate(grads, *w, self.like(*w, dw));
                if let Some(b) = b {
                    let mut db = vec![0.0; o];
                    for row in gd.chunks(o) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::Bce { p, targets, mask, eps } => {
                let pd = self.value(*p).data();
                let branches = self.shape(*p)[1];
                let dp = pd
                    .iter()
                    .enumerate()
                    .map(|(k, &q)| {
                        let m = mask[k];
                        if m == 0.0 || q < *eps || q > 1.0 - eps {
                            return 0.0;
                        }
                        let y = targets[k / branches];
                        -gd[0] * m * (y / q - (1.0 - y) / (1.0 - q))
                    })
                    .collect();
                self.accumulate(grads, *p, self.like(*p, dp));
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests;
