use proptest::prelude::*;
use slowmap::dataset::{Dataset, DatasetInstance, DatasetMeta, FORMAT_VERSION};
use slowmap::net::{train, Architecture, Layer, Network, TrainConfig};
use slowmap::{Error, Matrix, Purpose, SeedSpec};

fn dataset(points: Vec<(Vec<f64>, Vec<f64>)>) -> Dataset {
    let d = points.first().map_or(0, |p| p.0.len());
    Dataset {
        meta: DatasetMeta {
            system: "synthetic".into(),
            dt: 1e-4,
            tau: None,
            bursts: 0,
            count: points.len(),
            seed: 0,
            eps: 1e-3,
            format_version: FORMAT_VERSION,
            x0: vec![0.0; d],
            n_steps: 0,
            empirical_covariance: false,
            scheme: Default::default(),
            split: None,
        },
        instances: points.into_iter().map(|(x, px)| DatasetInstance { x, px, cov: Matrix::zeros(d, d) }).collect(),
    }
}

fn random_points(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut s = SeedSpec::new(seed).derive(Purpose::Diagnostic, 0).stream();
    (0..n).map(|_| (0..d).map(|_| 2.0 * s.uniform_open() - 1.0 + 0.1).collect()).collect()
}

fn perturbed(net: &Network, layer: usize, idx: usize, bias: bool, h: f64) -> Network {
    let mut n = net.clone();
    let d = n.layers[layer].as_dense_mut().unwrap();
    if bias {
        d.bias[idx] += h;
    } else {
        d.weights.as_mut_slice()[idx] += h;
    }
    n
}

fn fd_check(arch: &str, seed: u64) {
    let arch: Architecture = arch.parse().unwrap();
    let net = Network::new(&arch, &SeedSpec::new(seed));
    let d = arch.input_dim();
    let xs = random_points(d, 5, seed + 1);
    let ts = random_points(d, 5, seed + 2);
    let batch: Vec<(&[f64], &[f64])> = xs.iter().zip(&ts).map(|(x, t)| (x.as_slice(), t.as_slice())).collect();
    let (_, grads) = net.backward(&batch).unwrap();
    let h = 1e-6;
    for (l, slot) in grads.layers.iter().enumerate() {
        let Some((gw, gb)) = slot else { continue };
        for (bias, g) in [(false, gw), (true, gb)] {
            for (i, &analytic) in g.iter().enumerate() {
                let up = perturbed(&net, l, i, bias, h).mse(&batch).unwrap();
                let down = perturbed(&net, l, i, bias, -h).mse(&batch).unwrap();
                let numeric = (up - down) / (2.0 * h);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
                assert!(rel < 1e-6, "layer {l} idx {i} bias {bias}: {analytic} vs {numeric}");
            }
        }
    }
}

#[test]
fn gradients_match_central_differences() {
    for (arch, seed) in [("2-4-1-4-2", 1), ("2-[2]-4-4-1-4-4-2", 2), ("4-3-1-3-4", 3), ("10-8-4-2-4-8-10", 4)] {
        fd_check(arch, seed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradients_match_central_differences_random(seed in 0u64..10_000) {
        fd_check("3-5-2-5-3", seed);
    }

    #[test]
    fn encoder_jacobian_matches_central_differences(seed in 0u64..10_000, polar in any::<bool>()) {
        let arch: Architecture = if polar { "2-[2]-4-4-1-4-4-2" } else { "2-5-4-1-4-5-2" }.parse().unwrap();
        let net = Network::new(&arch, &SeedSpec::new(seed));
        let x = &random_points(2, 1, seed)[0];
        let jac = net.input_jacobian(x).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut up = x.clone();
            up[j] += h;
            let mut down = x.clone();
            down[j] -= h;
            let fd = (net.encode(&up).unwrap()[0] - net.encode(&down).unwrap()[0]) / (2.0 * h);
            let a = jac[(0, j)];
            prop_assert!((a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-3));
        }
    }

    #[test]
    fn masked_parameters_get_zero_gradient(seed in 0u64..10_000) {
        let arch: Architecture = "3-5-2-5-3".parse().unwrap();
        let mut net = Network::new(&arch, &SeedSpec::new(seed));
        let mut s = SeedSpec::new(seed).derive(Purpose::Diagnostic, 9).stream();
        for l in net.layers.iter_mut().filter_map(Layer::as_dense_mut) {
            for m in l.weight_mask.iter_mut().chain(l.bias_mask.iter_mut()) {
                *m = s.uniform_open() < 0.6;
            }
            l.apply_masks();
        }
        let xs = random_points(3, 4, seed);
        let batch: Vec<(&[f64], &[f64])> = xs.iter().map(|x| (x.as_slice(), x.as_slice())).collect();
        let (_, g) = net.backward(&batch).unwrap();
        for (layer, slot) in net.layers.iter().zip(&g.layers) {
            let (Some(d), Some((gw, gb))) = (layer.as_dense(), slot) else { continue };
            for (v, &m) in gw.iter().zip(&d.weight_mask).chain(gb.iter().zip(&d.bias_mask)) {
                if !m {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }
    }
}

fn line_data(n: usize, seed: u64) -> Dataset {
    // target is the projection onto the x-axis
    let pts = random_points(2, n, seed);
    dataset(pts.into_iter().map(|p| (p.clone(), vec![p[0], 0.0])).collect())
}

#[test]
fn zero_learning_rate_leaves_network_unchanged() {
    let arch: Architecture = "2-4-1-4-2".parse().unwrap();
    let net = Network::new(&arch, &SeedSpec::new(3));
    let tr = line_data(40, 1);
    let va = line_data(10, 2);
    let out = train(net.clone(), &tr, &va, &TrainConfig::new(5, 0.0), &SeedSpec::new(3), &mut []).unwrap();
    assert_eq!(out.last, net);
    assert_eq!(out.best, net);
    assert_eq!(out.best_epoch, 1);
    let first = &out.history[0];
    assert!(out.history.iter().all(|r| r.train_loss == first.train_loss && r.val_loss == first.val_loss));
}

#[test]
fn training_fits_a_linear_projection() {
    let arch: Architecture = "2-4-1-4-2".parse().unwrap();
    let seed = SeedSpec::new(4);
    let tr = line_data(400, 5);
    let va = line_data(100, 6);
    let net = Network::new(&arch, &seed);
    let start = net.evaluate(&va.instances).unwrap();
    let out = train(net, &tr, &va, &TrainConfig::new(200, 1e-2), &seed, &mut []).unwrap();
    assert!(out.best_val_loss < 1e-3 && out.best_val_loss < start / 50.0, "{start} -> {}", out.best_val_loss);
    let min = out.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_val_loss, min);
    assert_eq!(out.best.evaluate(&va.instances).unwrap(), min);
}

#[test]
fn training_is_reproducible() {
    let arch: Architecture = "2-4-1-4-2".parse().unwrap();
    let tr = line_data(64, 1);
    let va = line_data(16, 2);
    let run = || {
        let seed = SeedSpec::new(9);
        train(Network::new(&arch, &seed), &tr, &va, &TrainConfig::new(10, 1e-2), &seed, &mut []).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.last, b.last);
    assert_eq!(a.history, b.history);
}

#[test]
fn huge_steps_report_divergence() {
    let arch: Architecture = "2-4-1-4-2".parse().unwrap();
    let seed = SeedSpec::new(1);
    let tr = line_data(32, 1);
    let err = train(Network::new(&arch, &seed), &tr, &tr, &TrainConfig::new(20, 1e300), &seed, &mut []).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
}

#[test]
fn mask_change_resets_best_snapshot() {
    let arch: Architecture = "2-4-1-4-2".parse().unwrap();
    let seed = SeedSpec::new(2);
    let tr = line_data(64, 1);
    let va = line_data(16, 2);
    let mut hook = |epoch: usize, net: &mut Network| -> slowmap::Result<bool> {
        if epoch == 3 {
            let d = net.layers[0].as_dense_mut().unwrap();
            d.weight_mask[0] = false;
            return Ok(true);
        }
        Ok(false)
    };
    let out = train(Network::new(&arch, &seed), &tr, &va, &TrainConfig::new(6, 1e-2), &seed, &mut [&mut hook]).unwrap();
    assert!(out.best_epoch >= 4);
    let d = out.best.layers[0].as_dense().unwrap();
    assert!(!d.weight_mask[0]);
    assert_eq!(d.weights.as_slice()[0], 0.0);
}

#[test]
fn dimension_mismatch_is_rejected() {
    let arch: Architecture = "3-4-1-4-3".parse().unwrap();
    let seed = SeedSpec::new(2);
    let tr = line_data(8, 1);
    let err = train(Network::new(&arch, &seed), &tr, &tr, &TrainConfig::new(1, 1e-2), &seed, &mut []).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
}
