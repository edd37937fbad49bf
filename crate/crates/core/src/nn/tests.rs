use ndarray::IxDyn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_shape_fn(IxDyn(shape), |_| rng.sample::<f32, _>(StandardNormal))
}

fn probe_loss(layer: &mut dyn Layer, x: &Tensor, r: &Tensor) -> f64 {
    let y = layer.forward(x, true).unwrap();
    y.iter().zip(r.iter()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Central differences on a few input and parameter coordinates. Deep ReLU
/// stacks may straddle a kink inside the difference step, so a few misses can
/// be tolerated there.
fn grad_check(layer: &mut dyn Layer, x: Tensor, seed: u64) {
    grad_check_with(layer, x, seed, 0)
}

fn grad_check_with(layer: &mut dyn Layer, x: Tensor, seed: u64, allowed_misses: usize) {
    let mut misses = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = layer.forward(&x, true).unwrap();
    let r = randn(y.shape(), &mut rng);
    zero_grads(layer);
    layer.forward(&x, true).unwrap();
    let dx = layer.backward(&r).unwrap();
    let eps = 1e-3f32;
    let tol = |a: f64, n: f64| (a - n).abs() <= 2e-2 * a.abs().max(n.abs()).max(1e-1);

    for _ in 0..12 {
        let i = rng.random_range(0..x.len());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.as_slice_mut().unwrap()[i] += eps;
        xm.as_slice_mut().unwrap()[i] -= eps;
        let num = (probe_loss(layer, &xp, &r) - probe_loss(layer, &xm, &r)) / (2.0 * eps as f64);
        let ana = dx.as_slice().unwrap()[i] as f64;
        if !tol(ana, num) {
            misses.push(format!("input grad {i}: analytic {ana} numeric {num}"));
        }
    }

    let grads: Vec<Tensor> = layer.params().iter().map(|p| p.grad.clone()).collect();
    for (pi, g) in grads.iter().enumerate() {
        for _ in 0..4 {
            let i = rng.random_range(0..g.len());
            let orig = layer.params()[pi].value.as_slice().unwrap()[i];
            layer.params_mut()[pi].value.as_slice_mut().unwrap()[i] = orig + eps;
            let lp = probe_loss(layer, &x, &r);
            layer.params_mut()[pi].value.as_slice_mut().unwrap()[i] = orig - eps;
            let lm = probe_loss(layer, &x, &r);
            layer.params_mut()[pi].value.as_slice_mut().unwrap()[i] = orig;
            let num = (lp - lm) / (2.0 * eps as f64);
            let ana = g.as_slice().unwrap()[i] as f64;
            if !tol(ana, num) {
                misses.push(format!("param {pi} grad {i}: analytic {ana} numeric {num}"));
            }
        }
    }
    assert!(misses.len() <= allowed_misses, "{misses:#?}");
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut l = Linear::new("l", 5, 3, &mut rng);
    grad_check(&mut l, randn(&[4, 5], &mut rng), 2);
}

#[test]
fn conv_gradients_with_stride_and_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut c = Conv2d::new("c", 2, 3, 3, 2, 1, true, &mut rng);
    grad_check(&mut c, randn(&[2, 2, 7, 6], &mut rng), 4);
}

#[test]
fn conv_matches_direct_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut c = Conv2d::new("c", 2, 2, 3, 1, 1, false, &mut rng);
    let x = randn(&[1, 2, 5, 5], &mut rng);
    let y = c.forward(&x, false).unwrap();
    let w = &c.weight.value;
    for o in 0..2 {
        for i in 0..5isize {
            for j in 0..5isize {
                let mut acc = 0.0f32;
                for ch in 0..2 {
                    for ki in 0..3isize {
                        for kj in 0..3isize {
                            let (yi, xj) = (i + ki - 1, j + kj - 1);
                            if (0..5).contains(&yi) && (0..5).contains(&xj) {
                                acc += w[[o, ch, ki as usize, kj as usize]] * x[[0, ch, yi as usize, xj as usize]];
                            }
                        }
                    }
                }
                assert!((acc - y[[0, o, i as usize, j as usize]]).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn batch_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bn = BatchNorm::new("bn", 3);
    bn.gamma.value = randn(&[3], &mut rng);
    grad_check(&mut bn, randn(&[4, 3, 3, 3], &mut rng), 7);
    let mut bn1 = BatchNorm::new("bn1", 4);
    grad_check(&mut bn1, randn(&[6, 4], &mut rng), 8);
}

#[test]
fn batch_norm_normalises_in_training_and_tracks_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bn = BatchNorm::new("bn", 2);
    let x = randn(&[8, 2, 4, 4], &mut rng).mapv(|v| 3.0 * v + 5.0);
    let y = bn.forward(&x, true).unwrap();
    let ch0: Vec<f32> = (0..8).flat_map(|n| (0..16).map(move |i| (n, i))).map(|(n, i)| y[[n, 0, i / 4, i % 4]]).collect();
    let mean = ch0.iter().sum::<f32>() / ch0.len() as f32;
    let var = ch0.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / ch0.len() as f32;
    assert!(mean.abs() < 1e-4 && (var - 1.0).abs() < 1e-3);
    assert!((bn.running_mean[[0]] - 0.5).abs() < 0.2);
}

#[test]
fn pooling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    grad_check(&mut MaxPool2d::new(2, 2, 0), randn(&[2, 2, 6, 6], &mut rng), 11);
    grad_check(&mut MaxPool2d::new(3, 2, 1), randn(&[1, 2, 7, 7], &mut rng), 12);
    grad_check(&mut GlobalAvgPool::new(), randn(&[2, 3, 4, 4], &mut rng), 13);
}

#[test]
fn residual_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut block = Residual::bottleneck("b", 4, 2, 2, &mut rng);
    grad_check_with(&mut block, randn(&[3, 4, 6, 6], &mut rng), 15, 2);
    let mut identity = Residual::bottleneck("i", 8, 2, 1, &mut rng);
    grad_check_with(&mut identity, randn(&[3, 8, 4, 4], &mut rng), 16, 2);
}

#[test]
fn small_cnn_encoder_shapes_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut enc = Encoder::new(EncoderConfig::small_cnn(), &mut rng).unwrap();
    let x = randn(&[4, 3, 32, 32], &mut rng);
    let z = enc.forward(&x, false).unwrap();
    assert_eq!(z.shape(), &[4, 64]);
    assert_eq!(enc.features(&x).unwrap().shape(), &[4, 64]);
    assert_eq!(z, enc.forward(&x, false).unwrap());
    assert!(enc.forward(&randn(&[4, 1, 32, 32], &mut rng), false).is_err());
}

#[test]
fn resnet50_has_expected_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let (mut net, dim) = resnet50(&mut rng);
    assert_eq!(dim, 2048);
    // torchvision reports 23,508,032 parameters without the fc layer.
    assert_eq!(parameter_count(&net), 23_508_032);
    let y = net.forward(&randn(&[1, 3, 32, 32], &mut rng), false).unwrap();
    assert_eq!(y.shape(), &[1, 2048]);
}

#[test]
fn checkpoint_round_trip_restores_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut enc = Encoder::new(EncoderConfig::small_cnn(), &mut rng).unwrap();
    enc.forward(&randn(&[4, 3, 16, 16], &mut rng), true).unwrap();
    let mut ck = Checkpoint::from_layer("encoder", 3, &enc);
    ck.metadata = serde_json::json!({"note": "x"});
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.epoch, 3);
    assert_eq!(loaded.metadata["note"], "x");
    let mut other = Encoder::new(EncoderConfig::small_cnn(), &mut rng).unwrap();
    assert_ne!(weights_hash(&other), weights_hash(&enc));
    loaded.load_into(&mut other).unwrap();
    assert_eq!(weights_hash(&other), weights_hash(&enc));
}

#[test]
fn checkpoint_rejects_garbage_and_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(Checkpoint::load(&path).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let small = Encoder::new(EncoderConfig::small_cnn(), &mut rng).unwrap();
    let ck = Checkpoint::from_layer("encoder", 0, &small);
    let mut wide = Encoder::new(EncoderConfig { base_width: 8, ..EncoderConfig::small_cnn() }, &mut rng).unwrap();
    assert!(matches!(ck.load_into(&mut wide), Err(crate::Error::Checkpoint(_))));
}

