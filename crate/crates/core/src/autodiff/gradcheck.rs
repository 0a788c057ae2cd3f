//! Central finite-difference checks of analytic gradients.
//!
//! The relative error of one case is
//! `max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|, 1e-3)`
//! taken over every input tensor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BatchNormOptions, Graph, Result, RunningStats, Tensor, Var};

/// Default finite-difference step.
pub const STEP: f64 = 1e-5;

/// Builds a scalar loss from leaves standing for `inputs`.
pub type LossFn<'a> = dyn FnMut(&mut Graph, &[Var]) -> Result<Var> + 'a;

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(1e-3f64, |m, v| m.max(v.abs()));
    diff / scale
}

/// Analytic gradients of `f` with respect to every input.
pub fn analytic_gradients(f: &mut LossFn<'_>, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    Ok(vars
        .iter()
        .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
        .collect())
}

fn evaluate(f: &mut LossFn<'_>, inputs: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    Ok(g.value(loss).item())
}

/// Central differences `(f(x+h) - f(x-h)) / 2h`, one coordinate at a time.
pub fn numeric_gradients(f: &mut LossFn<'_>, inputs: &[Tensor], h: f64) -> Result<Vec<Tensor>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut grad = Vec::with_capacity(inputs[t].numel());
        for i in 0..inputs[t].numel() {
            let orig = inputs[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let plus = evaluate(f, &work)?;
            work[t].data_mut()[i] = orig - h;
            let minus = evaluate(f, &work)?;
            work[t].data_mut()[i] = orig;
            grad.push((plus - minus) / (2.0 * h));
        }
        out.push(Tensor::new(inputs[t].shape().to_vec(), grad)?);
    }
    Ok(out)
}

/// Worst relative error between analytic and numeric gradients.
pub fn check(f: &mut LossFn<'_>, inputs: &[Tensor], h: f64) -> Result<f64> {
    let analytic = analytic_gradients(f, inputs)?;
    let numeric = numeric_gradients(f, inputs, h)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a.data(), n.data()))
        .fold(0.0, f64::max))
}

/// Result of checking one primitive over many random cases.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveReport {
    pub name: &'static str,
    pub cases: usize,
    pub max_relative_error: f64,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for piecewise-linear ops.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = uniform(rng, shape, 0.05, 1.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Distinct, well separated values.
fn separated(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let data = idx
        .iter()
        .map(|&k| k as f64 * 0.05 - 1.0 + rng.random_range(0.0..0.01))
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contracts an arbitrary output with fixed random weights.
fn project(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn output_weights(rng: &mut ChaCha8Rng, g: &mut LossFn<'_>, inputs: &[Tensor]) -> Result<Tensor> {
    // Probe the output shape once by evaluating the raw op.
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.constant(t.clone())).collect();
    let out = g(&mut graph, &vars)?;
    Ok(uniform(rng, graph.shape(out), -1.0, 1.0))
}

fn run_case(
    rng: &mut ChaCha8Rng,
    inputs: Vec<Tensor>,
    mut op: impl FnMut(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let weights = output_weights(rng, &mut op, &inputs)?;
    let mut loss = |g: &mut Graph, v: &[Var]| {
        let out = op(g, v)?;
        project(g, out, &weights)
    };
    check(&mut loss, &inputs, STEP)
}

/// Gradient checks for every primitive of the engine, `cases` random
/// small-shape cases each.
pub fn primitive_suite(cases: usize, seed: u64) -> Result<Vec<PrimitiveReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let mut record = |name: &'static str, errs: Vec<f64>| {
        reports.push(PrimitiveReport {
            name,
            cases: errs.len(),
            max_relative_error: errs.into_iter().fold(0.0, f64::max),
        });
    };

    macro_rules! suite {
        ($name:expr, |$rng:ident| $body:expr) => {{
            let mut errs = Vec::with_capacity(cases);
            for _ in 0..cases {
                let $rng = &mut rng;
                errs.push($body?);
            }
            record($name, errs);
        }};
    }

    suite!("add", |r| {
        let s = [r.random_range(1..4), r.random_range(1..5)];
        let ins = vec![uniform(r, &s, -1.0, 1.0), uniform(r, &s, -1.0, 1.0)];
        run_case(r, ins, |g, v| g.add(v[0], v[1]))
    });
    suite!("sub", |r| {
        let s = [r.random_range(1..4), r.random_range(1..5)];
        let ins = vec![uniform(r, &s, -1.0, 1.0), uniform(r, &s, -1.0, 1.0)];
        run_case(r, ins, |g, v| g.sub(v[0], v[1]))
    });
    suite!("mul", |r| {
        let s = [r.random_range(1..4), r.random_range(1..5)];
        let ins = vec![uniform(r, &s, -1.0, 1.0), uniform(r, &s, -1.0, 1.0)];
        run_case(r, ins, |g, v| g.mul(v[0], v[1]))
    });
    suite!("scale", |r| {
        let s = [r.random_range(1..6)];
        let k = r.random_range(-3.0..3.0);
        let ins = vec![uniform(r, &s, -1.0, 1.0)];
        run_case(r, ins, move |g, v| g.scale(v[0], k))
    });
    suite!("sum", |r| {
        let s = [r.random_range(1..4), r.random_range(1..4)];
        let ins = vec![uniform(r, &s, -1.0, 1.0)];
        run_case(r, ins, |g, v| g.sum(v[0]))
    });
    suite!("mean", |r| {
        let s = [r.random_range(1..4), r.random_range(1..4)];
        let ins = vec![uniform(r, &s, -1.0, 1.0)];
        run_case(r, ins, |g, v| g.mean(v[0]))
    });
    suite!("relu", |r| {
        let s = [r.random_range(1..4), r.random_range(1..6)];
        let ins = vec![away_from_zero(r, &s)];
        run_case(r, ins, |g, v| g.relu(v[0]))
    });
    suite!("sigmoid", |r| {
        let s = [r.random_range(1..4), r.random_range(1..6)];
        let ins = vec![uniform(r, &s, -4.0, 4.0)];
        run_case(r, ins, |g, v| g.sigmoid(v[0]))
    });
    suite!("reshape", |r| {
        let (a, b) = (r.random_range(1..4), r.random_range(1..4));
        let ins = vec![uniform(r, &[a, b], -1.0, 1.0)];
        run_case(r, ins, move |g, v| g.reshape(v[0], &[b, a]))
    });
    suite!("conv2d", |r| {
        let (n, c, o) = (r.random_range(1..3), r.random_range(1..3), r.random_range(1..3));
        let k = [1, 2, 3][r.random_range(0..3)];
        let stride = r.random_range(1..3);
        let pad = r.random_range(0..2);
        let h = r.random_range(k.max(2)..6);
        let w = r.random_range(k.max(2)..6);
        let with_bias = r.random_bool(0.5);
        let mut ins = vec![uniform(r, &[n, c, h, w], -1.0, 1.0), uniform(r, &[o, c, k, k], -1.0, 1.0)];
        if with_bias {
            ins.push(uniform(r, &[o], -1.0, 1.0));
        }
        run_case(r, ins, move |g, v| g.conv2d(v[0], v[1], v.get(2).copied(), stride, pad))
    });
    suite!("conv1d", |r| {
        let (n, c, o) = (r.random_range(1..3), r.random_range(1..3), r.random_range(1..3));
        let k = [1, 3, 5][r.random_range(0..3)];
        let stride = r.random_range(1..3);
        let pad = r.random_range(0..3);
        let l = r.random_range(k..k + 6);
        let ins = vec![
            uniform(r, &[n, c, l], -1.0, 1.0),
            uniform(r, &[o, c, k], -1.0, 1.0),
            uniform(r, &[o], -1.0, 1.0),
        ];
        run_case(r, ins, move |g, v| g.conv1d(v[0], v[1], Some(v[2]), stride, pad))
    });
    suite!("max_pool2d", |r| {
        let (n, c) = (r.random_range(1..3), r.random_range(1..3));
        let k = r.random_range(2..4);
        let stride = r.random_range(1..3);
        let pad = r.random_range(0..2);
        let (h, w) = (r.random_range(k..7), r.random_range(k..7));
        let ins = vec![separated(r, &[n, c, h, w])];
        run_case(r, ins, move |g, v| g.max_pool2d(v[0], k, stride, pad))
    });
    suite!("max_pool1d", |r| {
        let (n, c) = (r.random_range(1..3), r.random_range(1..3));
        let k = r.random_range(2..4);
        let l = r.random_range(k..10);
        let ins = vec![separated(r, &[n, c, l])];
        run_case(r, ins, move |g, v| g.max_pool1d(v[0], k, k, 0))
    });
    suite!("avg_pool2d", |r| {
        let (n, c) = (r.random_range(1..3), r.random_range(1..3));
        let k = r.random_range(1..4);
        let stride = r.random_range(1..3);
        let (h, w) = (r.random_range(k..7), r.random_range(k..7));
        let ins = vec![uniform(r, &[n, c, h, w], -1.0, 1.0)];
        run_case(r, ins, move |g, v| g.avg_pool2d(v[0], k, stride))
    });
    suite!("avg_pool1d", |r| {
        let (n, c) = (r.random_range(1..3), r.random_range(1..3));
        let k = r.random_range(1..4);
        let l = r.random_range(k..10);
        let ins = vec![uniform(r, &[n, c, l], -1.0, 1.0)];
        run_case(r, ins, move |g, v| g.avg_pool1d(v[0], k, k))
    });
    suite!("global_avg_pool", |r| {
        let (n, c) = (r.random_range(1..3), r.random_range(1..4));
        let (h, w) = (r.random_range(1..5), r.random_range(1..5));
        let ins = vec![uniform(r, &[n, c, h, w], -1.0, 1.0)];
        run_case(r, ins, |g, v| g.global_avg_pool(v[0]))
    });
    suite!("batch_norm_train", |r| {
        let (n, c) = (r.random_range(2..4), r.random_range(1..3));
        let spatial = r.random_range(1..4);
        let ins = vec![
            uniform(r, &[n, c, spatial], -2.0, 2.0),
            uniform(r, &[c], 0.5, 1.5),
            uniform(r, &[c], -0.5, 0.5),
        ];
        run_case(r, ins, move |g, v| {
            let (mut mean, mut var) = (Tensor::zeros(&[c]), Tensor::ones(&[c]));
            let stats = RunningStats { mean: &mut mean, var: &mut var };
            g.batch_norm(v[0], Some(v[1]), Some(v[2]), stats, BatchNormOptions::default())
        })
    });
    suite!("batch_norm_eval", |r| {
        let (n, c) = (r.random_range(1..4), r.random_range(1..3));
        let rm = uniform(r, &[c], -0.5, 0.5);
        let rv = uniform(r, &[c], 0.5, 2.0);
        let ins = vec![
            uniform(r, &[n, c, 3], -2.0, 2.0),
            uniform(r, &[c], 0.5, 1.5),
            uniform(r, &[c], -0.5, 0.5),
        ];
        run_case(r, ins, move |g, v| {
            let (mut mean, mut var) = (rm.clone(), rv.clone());
            let stats = RunningStats { mean: &mut mean, var: &mut var };
            let opts = BatchNormOptions { training: false, ..Default::default() };
            g.batch_norm(v[0], Some(v[1]), Some(v[2]), stats, opts)
        })
    });
    suite!("linear", |r| {
        let (n, f, o) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..4));
        let ins = vec![
            uniform(r, &[n, f], -1.0, 1.0),
            uniform(r, &[o, f], -1.0, 1.0),
            uniform(r, &[o], -1.0, 1.0),
        ];
        run_case(r, ins, |g, v| g.linear(v[0], v[1], Some(v[2])))
    });
    suite!("bce_masked", |r| {
        let (n, b) = (r.random_range(1..5), r.random_range(1..4));
        let targets: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let mask: Vec<f64> = (0..n * b).map(|_| if r.random_bool(0.6) { 1.0 } else { 0.0 }).collect();
        let ins = vec![uniform(r, &[n, b], 0.05, 0.95)];
        let mut op = move |g: &mut Graph, v: &[Var]| g.bce_masked(v[0], &targets, &mask, 1e-7);
        check(&mut op, &ins, STEP)
    });
    Ok(reports)
}
