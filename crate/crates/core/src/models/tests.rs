use super::*;
use proptest::prelude::*;
use rand::Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn toy_resnet(branches: usize) -> ResNet18Config {
    ResNet18Config {
        in_channels: 1,
        height: 8,
        width: 8,
        widths: [2, 3, 3, 4],
        branches,
    }
}

#[test]
fn zeroed_residual_block_is_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamStore::new();
    let mut buffers = ParamStore::new();
    for conv in ["conv1", "conv2"] {
        params.insert(format!("b.{conv}.weight"), Tensor::zeros(&[3, 3, 3, 3]));
    }
    for bn in ["bn1", "bn2"] {
        params.insert(format!("b.{bn}.gamma"), Tensor::zeros(&[3]));
        params.insert(format!("b.{bn}.beta"), Tensor::zeros(&[3]));
        buffers.insert(format!("b.{bn}.running_mean"), Tensor::zeros(&[3]));
        buffers.insert(format!("b.{bn}.running_var"), Tensor::ones(&[3]));
    }
    let x = random(&mut rng, &[2, 3, 5, 4]);
    for training in [true, false] {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let xv = g.constant(x.clone());
        let mut f = Forward {
            graph: &mut g,
            params: &bound,
            buffers: &mut buffers,
            training,
        };
        let y = residual_block(&mut f, "b", xv, 1, false).unwrap();
        assert_eq!(g.shape(y), x.shape());
        let want: Vec<f64> = x.data().iter().map(|v| v.max(0.0)).collect();
        assert_eq!(g.value(y).data(), &want[..]);
    }
}

#[test]
fn resnet_has_eighteen_layers() {
    assert_eq!(ResNet18Config::default().layer_count(), 18);
}

/// Layer-by-layer parameter arithmetic for the canonical trunk.
fn audited_trunk_params(c_in: usize) -> usize {
    let conv = |k: usize, i: usize, o: usize| k * k * i * o;
    let bn = |c: usize| 2 * c;
    let mut total = conv(7, c_in, 64) + bn(64);
    let widths = [64, 128, 256, 512];
    let mut prev = 64;
    for &w in &widths {
        // first block
        total += conv(3, prev, w) + bn(w) + conv(3, w, w) + bn(w);
        if prev != w {
            total += conv(1, prev, w) + bn(w);
        }
        // second block
        total += 2 * (conv(3, w, w) + bn(w));
        prev = w;
    }
    total
}

#[test]
fn resnet_parameter_count_matches_audit() {
    let cfg = ResNet18Config::new(64, 64, 7);
    let p = cfg.init_parameters(0);
    let head: usize = ["head.weight", "head.bias"].iter().map(|k| p.params.get(k).unwrap().numel()).sum();
    let trunk = p.params.numel() - head;
    assert_eq!(trunk, audited_trunk_params(1));
    assert_eq!(head, 7 * 512 + 7);
    assert!((11_100_000..11_300_000).contains(&trunk), "{trunk}");
}

#[test]
fn resnet_outputs_are_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::new(ModelConfig::Resnet18(toy_resnet(3)), 4).unwrap();
    let out = model.predict_branches(random(&mut rng, &[5, 1, 8, 8])).unwrap();
    assert_eq!(out.len(), 5);
    assert!(out.iter().flatten().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn model_rejects_wrong_input_shape() {
    let model = Model::new(ModelConfig::Resnet18(toy_resnet(1)), 4).unwrap();
    assert!(model.predict(Tensor::zeros(&[1, 1, 9, 8])).is_err());
}

fn toy_cnn(branches: usize) -> Cnn1dConfig {
    Cnn1dConfig {
        in_channels: 1,
        length: 16,
        channels: [2, 3, 2],
        kernels: [7, 5, 3],
        pool: 2,
        branches,
    }
}

#[test]
fn cnn_zero_head_gives_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = Model::new(ModelConfig::Cnn1d(toy_cnn(2)), 1).unwrap();
    for k in ["head.weight", "head.bias"] {
        model.params.get_mut(k).unwrap().data_mut().fill(0.0);
    }
    let out = model.predict_branches(random(&mut rng, &[3, 1, 16])).unwrap();
    assert!(out.iter().flatten().all(|&p| p == 0.5));
}

#[test]
fn duplicated_sample_gives_duplicated_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = Model::new(ModelConfig::Cnn1d(toy_cnn(2)), 9).unwrap();
    let x = random(&mut rng, &[1, 1, 16]);
    let mut both = x.data().to_vec();
    both.extend_from_slice(x.data());
    let single = model.predict_branches(x).unwrap();
    let double = model.predict_branches(Tensor::new(vec![2, 1, 16], both).unwrap()).unwrap();
    assert_eq!(double[0], single[0]);
    assert_eq!(double[1], single[0]);
}

/// Straight-line re-implementation of the 1D CNN in eval mode.
fn naive_cnn(cfg: &Cnn1dConfig, p: &Parameters, x: &[f64]) -> Vec<f64> {
    let get = |k: &str| p.params.get(k).unwrap().data().to_vec();
    let buf = |k: &str| p.buffers.get(k).unwrap().data().to_vec();
    let conv = |x: &[Vec<f64>], w: &[f64], b: Option<&[f64]>, o: usize, k: usize| {
        let (c, l) = (x.len(), x[0].len());
        let pad = (k / 2) as isize;
        (0..o)
            .map(|oi| {
                (0..l)
                    .map(|t| {
                        let mut acc = b.map_or(0.0, |b| b[oi]);
                        for ci in 0..c {
                            for u in 0..k {
                                let s = t as isize + u as isize - pad;
                                if s >= 0 && (s as usize) < l {
                                    acc += x[ci][s as usize] * w[(oi * c + ci) * k + u];
                                }
                            }
                        }
                        acc
                    })
                    .collect::<Vec<f64>>()
            })
            .collect::<Vec<_>>()
    };
    let pool = |x: Vec<Vec<f64>>| {
        x.into_iter()
            .map(|row| row.chunks_exact(2).map(|c| c[0].max(c[1])).collect::<Vec<f64>>())
            .collect::<Vec<_>>()
    };
    let relu = |x: Vec<Vec<f64>>| {
        x.into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect::<Vec<f64>>())
            .collect::<Vec<_>>()
    };
    let [c1, c2, c3] = cfg.channels;
    let [k1, k2, k3] = cfg.kernels;
    let mut h = conv(&[x.to_vec()], &get("conv1.weight"), None, c1, k1);
    let (g, b, m, v) = (get("bn1.gamma"), get("bn1.beta"), buf("bn1.running_mean"), buf("bn1.running_var"));
    for (ci, row) in h.iter_mut().enumerate() {
        for val in row.iter_mut() {
            *val = (*val - m[ci]) / (v[ci] + 1e-5).sqrt() * g[ci] + b[ci];
        }
    }
    let h = pool(relu(h));
    let h = pool(relu(conv(&h, &get("conv2.weight"), Some(&get("conv2.bias")), c2, k2)));
    let h = pool(relu(conv(&h, &get("conv3.weight"), Some(&get("conv3.bias")), c3, k3)));
    let flat: Vec<f64> = h.concat();
    let (w, bias) = (get("head.weight"), get("head.bias"));
    (0..cfg.branches)
        .map(|o| {
            let z = bias[o] + flat.iter().enumerate().map(|(i, f)| f * w[o * flat.len() + i]).sum::<f64>();
            1.0 / (1.0 + (-z).exp())
        })
        .collect()
}

#[test]
fn cnn_matches_naive_reimplementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = toy_cnn(3);
    let mut model = Model::new(ModelConfig::Cnn1d(cfg.clone()), 12).unwrap();
    model.buffers.insert("bn1.running_mean", random(&mut rng, &[2]));
    model.buffers.insert("bn1.running_var", Tensor::new(vec![2], vec![0.7, 1.9]).unwrap());
    model.params.insert("bn1.beta", random(&mut rng, &[2]));
    let x = random(&mut rng, &[1, 1, 16]);
    let got = model.predict_branches(x.clone()).unwrap();
    let p = Parameters {
        params: model.params.clone(),
        buffers: model.buffers.clone(),
    };
    let want = naive_cnn(&cfg, &p, x.data());
    for (a, b) in got[0].iter().zip(&want) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

fn reference_bce(p: &[f64], y: &[f64]) -> f64 {
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            let q = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
        })
        .sum()
}

#[test]
fn mb_loss_hand_cases() {
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(vec![1, 1], vec![0.5]).unwrap());
    let l = mb_loss(&mut g, p, &[1.0], &[vec![0]]).unwrap();
    assert!((g.value(l).item() - 0.693147).abs() < 1e-6);

    let p = g.constant(Tensor::new(vec![1, 3], vec![0.5; 3]).unwrap());
    let l = mb_loss(&mut g, p, &[1.0], &[vec![0, 1, 2]]).unwrap();
    assert!((g.value(l).item() - 3.0 * 0.693147).abs() < 1e-5);

    let p = g.constant(Tensor::new(vec![2, 2], vec![0.5; 4]).unwrap());
    assert_eq!(
        mb_loss(&mut g, p, &[1.0, 0.0], &[vec![0], vec![]]).unwrap_err(),
        ModelError::MembershipMismatch(1)
    );
    assert_eq!(
        mb_loss(&mut g, p, &[1.0, 0.0], &[vec![0], vec![2]]).unwrap_err(),
        ModelError::MembershipMismatch(1)
    );
}

#[test]
fn mb_predict_hand_cases() {
    assert_eq!(mb_predict(&[0.7, 0.7, 0.7]).unwrap(), 0.7);
    assert!((mb_predict(&[0.2, 0.4, 0.6]).unwrap() - 0.4).abs() < 1e-15);
    assert_eq!(mb_predict(&[0.31]).unwrap(), 0.31);
    assert_eq!(mb_predict(&[]), Err(ModelError::EmptyBranches));
    assert_eq!(mb_predict(&[1.5]), Err(ModelError::ProbabilityOutOfRange(1.5)));
}

#[test]
fn init_is_deterministic_with_unit_gammas() {
    let cfg = toy_resnet(2);
    assert_eq!(cfg.init_parameters(3), cfg.init_parameters(3));
    assert_ne!(cfg.init_parameters(3), cfg.init_parameters(4));
    let p = cfg.init_parameters(3);
    for (k, t) in p.params.iter() {
        if k.ends_with(".gamma") {
            assert!(t.data().iter().all(|&v| v == 1.0), "{k}");
        }
        if k.ends_with(".beta") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{k}");
        }
    }
}

#[test]
fn init_weights_are_centered() {
    let p = ResNet18Config::new(32, 32, 2).init_parameters(11);
    for (k, t) in p.params.iter().filter(|(k, _)| k.ends_with("weight")) {
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let se = (var / n).sqrt();
        assert!(mean.abs() < 3.0 * se + 1e-12, "{k}: mean {mean} se {se}");
    }
}

#[test]
fn gradients_reach_trunk_and_respect_membership() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut model = Model::new(ModelConfig::Resnet18(toy_resnet(3)), 21).unwrap();
    let mut g = Graph::new();
    let (probs, bound) = model.forward_train(&mut g, random(&mut rng, &[4, 1, 8, 8])).unwrap();
    let membership = vec![vec![0, 1, 2], vec![0], vec![2], vec![0, 1, 2]];
    let loss = mb_loss(&mut g, probs, &[1.0, 0.0, 0.0, 1.0], &membership).unwrap();
    g.backward(loss).unwrap();
    let grads = bound.grads(&g);
    for (k, t) in &grads {
        if !k.starts_with("head") {
            assert!(t.data().iter().any(|&v| v != 0.0), "{k} has zero gradient");
        }
    }

    // samples of branch 1 only
    let mut g = Graph::new();
    let (probs, bound) = model.forward_train(&mut g, random(&mut rng, &[3, 1, 8, 8])).unwrap();
    let loss = mb_loss(&mut g, probs, &[1.0, 0.0, 1.0], &branch_membership(3, 1)).unwrap();
    g.backward(loss).unwrap();
    let grads = bound.grads(&g);
    let (w, b) = (&grads["head.weight"], &grads["head.bias"]);
    for branch in [0, 2] {
        assert!(w.data()[branch * 4..(branch + 1) * 4].iter().all(|&v| v == 0.0));
        assert_eq!(b.data()[branch], 0.0);
    }
    assert!(b.data()[1] != 0.0);
}

#[test]
fn resnet_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = ResNet18Config {
        widths: [2, 2, 2, 2],
        ..toy_resnet(2)
    };
    let err = resnet_gradient_check(&cfg, rng.random()).unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

proptest! {
    #[test]
    fn mb_loss_single_branch_is_bce(
        pairs in prop::collection::vec((0.0f64..=1.0, prop::bool::ANY), 1..40)
    ) {
        let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
        let y: Vec<f64> = pairs.iter().map(|x| if x.1 { 1.0 } else { 0.0 }).collect();
        let mut g = Graph::new();
        let pv = g.constant(Tensor::new(vec![p.len(), 1], p.clone()).unwrap());
        let l = mb_loss(&mut g, pv, &y, &branch_membership(p.len(), 0)).unwrap();
        let want = reference_bce(&p, &y);
        prop_assert!((g.value(l).item() - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn mb_predict_is_bounded_and_order_free(mut p in prop::collection::vec(0.0f64..=1.0, 1..16)) {
        let m = mb_predict(&p).unwrap();
        let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m >= lo - 1e-15 && m <= hi + 1e-15);
        p.reverse();
        prop_assert!((mb_predict(&p).unwrap() - m).abs() < 1e-15);
    }
}
