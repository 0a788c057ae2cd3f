use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn conv2d_single_pixel() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 1], &[5.0]));
    let w = g.constant(t(&[1, 1, 1, 1], &[2.0]));
    let y = g.conv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[10.0]);
    assert_eq!(g.shape(y), &[1, 1, 1]);
}

#[test]
fn conv2d_ones_with_bias() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[1, 1, 3, 3]));
    let w = g.constant(Tensor::ones(&[1, 1, 3, 3]));
    let b = g.constant(t(&[1], &[1.0]));
    let y = g.conv2d(x, w, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[10.0]);
}

#[test]
fn conv1d_two_tap() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
    let w = g.constant(t(&[1, 1, 2], &[1.0, 1.0]));
    let y = g.conv1d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 5.0]);
}

#[test]
fn relu_and_sigmoid_values() {
    let mut g = Graph::new();
    let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = g.constant(t(&[1], &[0.0]));
    let s = g.sigmoid(z).unwrap();
    assert_eq!(g.value(s).item(), 0.5);
    assert!(sigmoid(-800.0).is_finite() && sigmoid(800.0) == 1.0);
}

#[test]
fn batch_norm_two_values() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2, 1], &[1.0, 3.0]));
    let (mut m, mut v) = (Tensor::zeros(&[1]), Tensor::ones(&[1]));
    let opts = BatchNormOptions { eps: 0.0, ..Default::default() };
    let y = g
        .batch_norm(x, None, None, RunningStats { mean: &mut m, var: &mut v }, opts)
        .unwrap();
    assert_eq!(g.value(y).data(), &[-1.0, 1.0]);
    assert!((m.item() - 0.2).abs() < 1e-15);
    // unbiased variance of {1,3} is 2
    assert!((v.item() - (0.9 + 0.2)).abs() < 1e-15);
}

#[test]
fn batch_norm_eval_uses_running_stats() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1], &[4.0]));
    let (mut m, mut v) = (t(&[1], &[2.0]), t(&[1], &[4.0]));
    let opts = BatchNormOptions { eps: 0.0, training: false, ..Default::default() };
    let y = g
        .batch_norm(x, None, None, RunningStats { mean: &mut m, var: &mut v }, opts)
        .unwrap();
    assert_eq!(g.value(y).data(), &[1.0]);
    assert_eq!(m.item(), 2.0);
}

#[test]
fn sum_gradient_is_ones() {
    let mut g = Graph::new();
    let x = g.param(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0; 4]);
}

#[test]
fn square_sum_gradient() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_errors() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    assert_eq!(g.backward(x), Err(AutodiffError::NotScalar(vec![2])));
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.backward(s), Err(AutodiffError::GraphConsumed));
}

#[test]
fn shape_errors() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2]));
    let b = g.constant(Tensor::zeros(&[3]));
    assert!(matches!(g.add(a, b), Err(AutodiffError::ShapeMismatch(_))));
    let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(matches!(g.conv2d(x, w, None, 1, 0), Err(AutodiffError::ShapeMismatch(_))));
    let w = g.constant(Tensor::zeros(&[1, 2, 5, 5]));
    assert!(matches!(g.conv2d(x, w, None, 1, 0), Err(AutodiffError::ShapeMismatch(_))));
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2], &[1.0, 2.0]));
    let y = g.param(t(&[2], &[3.0, 4.0]));
    let p = g.mul(x, y).unwrap();
    let s = g.sum(p).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(x).is_none());
    assert_eq!(g.grad(y).unwrap().data(), &[1.0, 2.0]);
}

fn naive_conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Vec<f64> {
    let [n, c, h, wd] = x.shape()[..] else { unreachable!() };
    let [o, _, kh, kw] = w.shape()[..] else { unreachable!() };
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::new();
    for ni in 0..n {
        for oi in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[oi]);
                    for ci in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let r = (i * stride + u) as isize - pad as isize;
                                let s = (j * stride + v) as isize - pad as isize;
                                if r < 0 || s < 0 || r >= h as isize || s >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((ni * c + ci) * h + r as usize) * wd + s as usize]
                                    * w.data()[((oi * c + ci) * kh + u) * kw + v];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for stride in [1, 2] {
        for pad in [0, 1, 3] {
            for k in [1, 3, 7] {
                let x = random(&mut rng, &[2, 3, 9, 8]);
                let w = random(&mut rng, &[4, 3, k, k]);
                let b = random(&mut rng, &[4]);
                let mut g = Graph::new();
                let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
                let y = g.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
                let expect = naive_conv2d(&x, &w, Some(&b), stride, pad);
                assert_eq!(g.value(y).numel(), expect.len());
                for (a, e) in g.value(y).data().iter().zip(&expect) {
                    assert!((a - e).abs() < 1e-12, "stride {stride} pad {pad} k {k}");
                }
            }
        }
    }
}

#[test]
fn conv1d_matches_conv2d_with_unit_height() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&mut rng, &[2, 3, 11]);
    let w = random(&mut rng, &[2, 3, 5]);
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let y = g.conv1d(xv, wv, None, 2, 2).unwrap();
    let x4 = x.reshaped(&[2, 3, 1, 11]).unwrap();
    let w4 = w.reshaped(&[2, 3, 1, 5]).unwrap();
    // naive with padding only along width
    let [n, c, _, l] = x4.shape()[..] else { unreachable!() };
    let lo = (l + 4 - 5) / 2 + 1;
    let mut expect = Vec::new();
    for ni in 0..n {
        for oi in 0..2 {
            for j in 0..lo {
                let mut acc = 0.0;
                for ci in 0..c {
                    for v in 0..5 {
                        let s = (j * 2 + v) as isize - 2;
                        if s >= 0 && s < l as isize {
                            acc += x4.data()[(ni * c + ci) * l + s as usize] * w4.data()[(oi * c + ci) * 5 + v];
                        }
                    }
                }
                expect.push(acc);
            }
        }
    }
    for (a, e) in g.value(y).data().iter().zip(&expect) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn max_pool_routes_gradient_to_argmax() {
    let mut g = Graph::new();
    let x = g.param(t(&[1, 1, 2, 2], &[1.0, 4.0, 3.0, 2.0]));
    let y = g.max_pool2d(x, 2, 2, 0).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn max_pool_ties_pick_first() {
    let mut g = Graph::new();
    let x = g.param(t(&[1, 4], &[2.0, 2.0, 1.0, 1.0]));
    let y = g.max_pool1d(x, 2, 2, 0).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn avg_pool_spreads_gradient_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let x = g.param(random(&mut rng, &[2, 3, 6, 6]));
    let y = g.avg_pool2d(x, 2, 2).unwrap();
    let n_out = g.value(y).numel() as f64;
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    let total: f64 = g.grad(x).unwrap().data().iter().sum();
    assert!((total - n_out).abs() < 1e-12);
    assert!(g.grad(x).unwrap().data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn global_avg_pool_means() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 2, 1, 2], &[1.0, 3.0, -2.0, 2.0]));
    let y = g.global_avg_pool(x).unwrap();
    assert_eq!(g.shape(y), &[1, 2]);
    assert_eq!(g.value(y).data(), &[2.0, 0.0]);
}

#[test]
fn linear_and_bce_values() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 2], &[1.0, 2.0]));
    let w = g.constant(t(&[2, 2], &[1.0, 0.0, 1.0, 1.0]));
    let b = g.constant(t(&[2], &[0.5, -1.0]));
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y).data(), &[1.5, 2.0]);

    let p = g.constant(t(&[2, 2], &[0.8, 0.3, 0.25, 0.9]));
    let l = g.bce_masked(p, &[1.0, 0.0], &[1.0, 0.0, 0.0, 1.0], 1e-12).unwrap();
    let expect = -(0.8f64.ln() + 0.1f64.ln());
    assert!((g.value(l).item() - expect).abs() < 1e-12);
}

#[test]
fn same_inputs_same_gradients() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::new();
        let x = g.param(random(&mut rng, &[2, 2, 5, 5]));
        let w = g.param(random(&mut rng, &[3, 2, 3, 3]));
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let r = g.relu(y).unwrap();
        let s = g.sum(r).unwrap();
        g.backward(s).unwrap();
        (g.grad(x).unwrap().clone(), g.grad(w).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn gradcheck_conv_stack() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![random(&mut rng, &[2, 2, 6, 6]), random(&mut rng, &[3, 2, 3, 3]), random(&mut rng, &[3])];
    let mut f = |g: &mut Graph, v: &[Var]| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
        let s = g.sigmoid(y)?;
        let sq = g.mul(s, s)?;
        g.sum(sq)
    };
    let err = gradcheck::check(&mut f, &inputs, gradcheck::STEP).unwrap();
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn primitive_suite_small() {
    for r in gradcheck::primitive_suite(10, 1).unwrap() {
        assert!(r.max_relative_error < 1e-5, "{}: {}", r.name, r.max_relative_error);
    }
}

proptest! {
    #[test]
    fn add_is_commutative(a in prop::collection::vec(-1e3f64..1e3, 1..20)) {
        let b: Vec<f64> = a.iter().map(|v| v * 0.5 - 1.0).collect();
        let mut g = Graph::new();
        let (x, y) = (g.constant(Tensor::from_vec(a.clone())), g.constant(Tensor::from_vec(b)));
        let s1 = g.add(x, y).unwrap();
        let s2 = g.add(y, x).unwrap();
        prop_assert_eq!(g.value(s1), g.value(s2));
    }

    #[test]
    fn sigmoid_in_unit_interval(z in -1e3f64..1e3) {
        let s = sigmoid(z);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((sigmoid(-z) - (1.0 - s)).abs() < 1e-12);
    }

    #[test]
    fn conv_is_linear_in_input(seed in 0u64..1000, alpha in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x1 = random(&mut rng, &[1, 2, 5, 4]);
        let x2 = random(&mut rng, &[1, 2, 5, 4]);
        let w = random(&mut rng, &[2, 2, 3, 3]);
        let mut g = Graph::new();
        let (a, b, wv) = (g.constant(x1), g.constant(x2), g.constant(w));
        let sa = g.scale(a, alpha).unwrap();
        let comb = g.add(sa, b).unwrap();
        let yc = g.conv2d(comb, wv, None, 1, 1).unwrap();
        let ya = g.conv2d(a, wv, None, 1, 1).unwrap();
        let yb = g.conv2d(b, wv, None, 1, 1).unwrap();
        let (yc, ya, yb) = (g.value(yc).data(), g.value(ya).data(), g.value(yb).data());
        for i in 0..yc.len() {
            prop_assert!((yc[i] - (alpha * ya[i] + yb[i])).abs() < 1e-10);
        }
    }
}
