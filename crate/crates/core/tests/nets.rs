use ask1_core::nets::*;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn weighted_output(net: &Mlp, x: &Array2<f64>, c: &Array2<f64>) -> f64 {
    (&net.forward(x.view()) * c).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Worst relative error between backward and central differences over sampled
/// parameters and inputs of one random draw.
fn fd_check(net: &mut Mlp, rng: &mut ChaCha8Rng) -> f64 {
    let h = 1e-6;
    let x = gaussian_matrix(3, net.input_dim(), rng);
    let c = gaussian_matrix(3, net.output_dim(), rng);
    let tape = net.forward_tape(x.view());
    let mut grads = MlpGrads::zeros_like(net);
    let gx = net.backward(&tape, c.view(), &mut grads);
    let mut worst: f64 = 0.0;
    for l in 0..net.weights.len() {
        let (rows, cols) = net.weights[l].dim();
        for _ in 0..4 {
            let (i, j) = (rng.random_range(0..rows), rng.random_range(0..cols));
            let w0 = net.weights[l][[i, j]];
            net.weights[l][[i, j]] = w0 + h;
            let up = weighted_output(net, &x, &c);
            net.weights[l][[i, j]] = w0 - h;
            let down = weighted_output(net, &x, &c);
            net.weights[l][[i, j]] = w0;
            worst = worst.max(rel_err(grads.weights[l][[i, j]], (up - down) / (2.0 * h)));
        }
        let i = rng.random_range(0..rows);
        let b0 = net.biases[l][i];
        net.biases[l][i] = b0 + h;
        let up = weighted_output(net, &x, &c);
        net.biases[l][i] = b0 - h;
        let down = weighted_output(net, &x, &c);
        net.biases[l][i] = b0;
        worst = worst.max(rel_err(grads.biases[l][i], (up - down) / (2.0 * h)));
    }
    for _ in 0..4 {
        let (r, k) = (rng.random_range(0..3), rng.random_range(0..net.input_dim()));
        let mut xp = x.clone();
        xp[[r, k]] += h;
        let up = weighted_output(net, &xp, &c);
        xp[[r, k]] -= 2.0 * h;
        let down = weighted_output(net, &xp, &c);
        worst = worst.max(rel_err(gx[[r, k]], (up - down) / (2.0 * h)));
    }
    worst
}

#[test]
fn all_four_networks_match_finite_differences() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let outputs = [OutputActivation::Identity, OutputActivation::Identity, OutputActivation::Tanh, OutputActivation::Identity];
    for draw in 0..20 {
        for ((name, dims), output) in BundleSpec::default().layer_dims().into_iter().zip(outputs) {
            let mut net = Mlp::zeros(&dims, output);
            for (w, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
                let scale = 1.2 / (w.ncols() as f64).sqrt();
                w.mapv_inplace(|_| scale * rng.sample::<f64, _>(StandardNormal));
                b.mapv_inplace(|_| 0.1 * rng.sample::<f64, _>(StandardNormal));
            }
            let err = fd_check(&mut net, &mut rng);
            assert!(err <= 1e-4, "{name} draw {draw}: relative error {err:e}");
        }
    }
    assert!(start.elapsed().as_secs_f64() < 10.0, "gradient check took {:?}", start.elapsed());
}

#[test]
fn small_random_net_matches_finite_differences_tightly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let mut net = Mlp::orthogonal(&[6, 9, 7, 4], OutputActivation::Tanh, 1.4, 0.8, &mut rng);
        let x = gaussian_matrix(2, 6, &mut rng);
        let c = gaussian_matrix(2, 4, &mut rng);
        let tape = net.forward_tape(x.view());
        let mut grads = MlpGrads::zeros_like(&net);
        net.backward(&tape, c.view(), &mut grads);
        let h = 1e-5;
        for l in 0..net.weights.len() {
            for i in 0..net.weights[l].nrows() {
                for j in 0..net.weights[l].ncols() {
                    let w0 = net.weights[l][[i, j]];
                    net.weights[l][[i, j]] = w0 + h;
                    let up = weighted_output(&net, &x, &c);
                    net.weights[l][[i, j]] = w0 - h;
                    let down = weighted_output(&net, &x, &c);
                    net.weights[l][[i, j]] = w0;
                    let fd = (up - down) / (2.0 * h);
                    let err = (grads.weights[l][[i, j]] - fd).abs() / fd.abs().max(grads.weights[l][[i, j]].abs()).max(1e-3);
                    assert!(err <= 1e-6, "layer {l} ({i},{j}): {err:e}");
                }
            }
        }
    }
}

#[test]
fn log_prob_integrates_to_one_in_one_dimension() {
    let (mean, log_std) = (0.3, -0.4f64);
    let sigma = log_std.exp();
    let n = 20_000;
    let (lo, hi) = (mean - 12.0 * sigma, mean + 12.0 * sigma);
    let dx = (hi - lo) / n as f64;
    let total: f64 = (0..=n)
        .map(|k| {
            let x = lo + k as f64 * dx;
            let p = gaussian_log_prob(Array1::from(vec![x]).view(), Array1::from(vec![mean]).view(), Array1::from(vec![log_std]).view()).exp();
            if k == 0 || k == n {
                0.5 * p
            } else {
                p
            }
        })
        .sum::<f64>()
        * dx;
    assert!((total - 1.0).abs() < 1e-9, "{total}");
}

#[test]
fn entropy_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mean = Array1::from_shape_fn(ACTION_DIM, |i| 0.1 * i as f64 - 0.5);
    let log_std = Array1::from_shape_fn(ACTION_DIM, |i| -1.0 + 0.15 * i as f64);
    let n = 100_000;
    let mc = -(0..n).map(|_| gaussian_log_prob(gaussian_sample(mean.view(), log_std.view(), &mut rng).view(), mean.view(), log_std.view())).sum::<f64>() / n as f64;
    let exact = gaussian_entropy(log_std.view());
    assert!((mc - exact).abs() < 0.03, "monte carlo {mc}, closed form {exact}");
}

#[test]
fn policy_reads_every_history_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bundle = NetworkBundle::new(&BundleSpec::default(), &mut rng);
    let history = gaussian_matrix(1, 150, &mut rng);
    let command = Array2::from_shape_vec((1, 3), vec![0.5, 0.0, 0.1]).unwrap();
    let gait = gaussian_matrix(1, 11, &mut rng);
    let base = bundle.policy_forward(history.view(), command.view(), gait.view());
    for frame in 0..5 {
        let mut h = history.clone();
        h[[0, frame * 30 + 7]] += 0.5;
        let out = bundle.policy_forward(h.view(), command.view(), gait.view());
        assert_ne!(out.latent, base.latent, "frame {frame} ignored by the encoder");
        assert_ne!(out.mean, base.mean, "frame {frame} ignored by the actor");
    }
}

#[test]
fn actor_output_is_bounded_and_std_starts_at_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let bundle = NetworkBundle::new(&BundleSpec::default(), &mut rng);
    let out = bundle.policy_forward((gaussian_matrix(16, 150, &mut rng) * 50.0).view(), gaussian_matrix(16, 3, &mut rng).view(), gaussian_matrix(16, 11, &mut rng).view());
    assert!(out.mean.iter().all(|m| m.abs() <= 1.0));
    assert!(out.std.iter().all(|&s| s == 1.0));
    assert_eq!(out.velocity.dim(), (16, 3));
    assert_eq!(out.latent.dim(), (16, 32));
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut bundle = NetworkBundle::new(&BundleSpec::default(), &mut rng);
    bundle.log_std.mapv_inplace(|_| rng.random_range(-1.0..0.5));
    bundle.round_to_f32();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.ckpt");
    save_checkpoint(&bundle, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, bundle);
    for _ in 0..100 {
        let h = gaussian_matrix(1, 150, &mut rng);
        let c = gaussian_matrix(1, 3, &mut rng);
        let g = gaussian_matrix(1, 11, &mut rng);
        let a = bundle.policy_forward(h.view(), c.view(), g.view());
        let b = loaded.policy_forward(h.view(), c.view(), g.view());
        assert!(a.mean.iter().zip(b.mean.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.velocity.iter().zip(b.velocity.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let s = gaussian_matrix(1, 248, &mut rng);
        assert_eq!(bundle.critic_forward(s.view())[0].to_bits(), loaded.critic_forward(s.view())[0].to_bits());
    }
}

#[test]
fn corrupted_checkpoints_are_rejected_by_section() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let bundle = NetworkBundle::new(&BundleSpec::default(), &mut rng);
    let bytes = checkpoint_bytes(&bundle);

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert_eq!(checkpoint_from_bytes(&bad_magic).unwrap_err().section(), "magic");

    let mut bad_version = bytes.clone();
    bad_version[8..12].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(checkpoint_from_bytes(&bad_version), Err(CheckpointError::Version { found: 7, expected: CHECKPOINT_VERSION })));

    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 0x40;
    assert_eq!(checkpoint_from_bytes(&flipped).unwrap_err().section(), "checksum");

    assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 9]).is_err());
    assert!(checkpoint_from_bytes(&bytes[..10]).is_err());
    assert!(checkpoint_from_bytes(&[]).is_err());

    let dir = tempfile::tempdir().unwrap();
    assert_eq!(load_checkpoint(&dir.path().join("missing.ckpt")).unwrap_err().section(), "io");
}

#[test]
fn layout_check_names_the_disagreeing_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let bundle = NetworkBundle::new(&BundleSpec::default(), &mut rng);
    assert!(bundle.check_layout(&BundleSpec::default()).is_ok());
    let other = BundleSpec { critic_dim: 200, ..BundleSpec::default() };
    let err = bundle.check_layout(&other).unwrap_err();
    assert!(err.contains("critic input dimension") && err.contains("248") && err.contains("200"), "{err}");
    let wide = BundleSpec { policy_hidden: vec![256, 128, 32], ..BundleSpec::default() };
    assert!(bundle.check_layout(&wide).unwrap_err().contains("encoder hidden layer 3 width"));
}
