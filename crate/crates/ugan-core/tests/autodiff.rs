//! Gradient and contract tests for the tape ops, against central finite
//! differences and brute-force oracles. Everything here runs at f64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ugan_core::autodiff::{Mode, Tape};
use ugan_core::gradcheck::{central_diff, max_rel_err_full, rel_err, FD_STEP};
use ugan_core::scalar::Real;
use ugan_core::Tensor;

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

// ── dense ───────────────────────────────────────────────────────────────

#[test]
fn dense_identity_passthrough() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let w = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let b = tape.constant(Tensor::zeros(&[2]));
    let y = tape.dense(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn dense_direct_arithmetic() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
    let w = tape.constant(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap());
    let b = tape.constant(Tensor::new(vec![1], vec![0.5]).unwrap());
    let y = tape.dense(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[3.5]);
}

#[test]
fn dense_rejects_shape_mismatch_naming_operand() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[2, 3]));
    let w = tape.constant(Tensor::zeros(&[4, 2]));
    let b = tape.constant(Tensor::zeros(&[2]));
    let err = tape.dense(x, w, b).unwrap_err().to_string();
    assert!(err.contains("dense"), "{err}");
    assert!(err.contains('3') && err.contains('4'), "{err}");
}

#[test]
fn dense_weight_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x0 = randn(&[4, 8], &mut rng);
    let w0 = randn(&[8, 3], &mut rng);
    let b0 = randn(&[3], &mut rng);

    let mut f = |inputs: &[Tensor<f64>]| {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(inputs[0].clone());
        let w = tape.constant(inputs[1].clone());
        let b = tape.constant(inputs[2].clone());
        let y = tape.dense(x, w, b).unwrap();
        let s = tape.sum_all(y);
        tape.value(s).item()
    };
    let inputs = vec![x0.clone(), w0.clone(), b0.clone()];

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(x0);
    let w = tape.leaf(w0);
    let b = tape.leaf(b0);
    let y = tape.dense(x, w, b).unwrap();
    let s = tape.sum_all(y);
    tape.backward(s).unwrap();

    for (slot, var) in [(0, x), (1, w), (2, b)] {
        let err = max_rel_err_full(&mut f, &inputs, slot, tape.grad(var).unwrap());
        assert!(err < 1e-4, "slot {slot}: rel err {err}");
    }
}

// ── conv ────────────────────────────────────────────────────────────────

#[test]
fn conv_halves_spatial_size_28_to_14_to_7() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(randn(&[1, 1, 28, 28], &mut rng));
    let k1 = tape.constant(randn(&[4, 1, 3, 3], &mut rng));
    let b1 = tape.constant(Tensor::zeros(&[4]));
    let y1 = tape.conv2d(x, k1, b1).unwrap();
    assert_eq!(tape.value(y1).shape(), &[1, 4, 14, 14]);
    let k2 = tape.constant(randn(&[2, 4, 3, 3], &mut rng));
    let b2 = tape.constant(Tensor::zeros(&[2]));
    let y2 = tape.conv2d(y1, k2, b2).unwrap();
    assert_eq!(tape.value(y2).shape(), &[1, 2, 7, 7]);
}

#[test]
fn conv_zero_input_gives_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[2, 3, 8, 8]));
    let k = tape.constant(randn(&[5, 3, 3, 3], &mut rng));
    let b = tape.constant(Tensor::zeros(&[5]));
    let y = tape.conv2d(x, k, b).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

/// Brute-force cross-correlation with zero padding 1 and stride 2, written
/// independently of the im2col path.
fn naive_conv_5x5(x: &[f64], k: &[f64]) -> Vec<f64> {
    let (h, w) = (5usize, 5usize);
    let (ho, wo) = (3usize, 3usize);
    let mut out = vec![0.0; ho * wo];
    for oy in 0..ho {
        for ox in 0..wo {
            let mut acc = 0.0;
            for dy in 0..3usize {
                for dx in 0..3usize {
                    let iy = (oy * 2 + dy) as isize - 1;
                    let ix = (ox * 2 + dx) as isize - 1;
                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                        acc += x[iy as usize * w + ix as usize] * k[dy * 3 + dx];
                    }
                }
            }
            out[oy * wo + ox] = acc;
        }
    }
    out
}

#[test]
fn conv_matches_naive_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = randn(&[1, 1, 5, 5], &mut rng);
    let k0 = randn(&[1, 1, 3, 3], &mut rng);
    let expected = naive_conv_5x5(x0.data(), k0.data());

    let mut tape = Tape::<f64>::new();
    let x = tape.constant(x0);
    let k = tape.constant(k0);
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv2d(x, k, b).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 1, 3, 3]);
    for (got, want) in tape.value(y).data().iter().zip(&expected) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 3, 8, 8]));
    let k = tape.constant(Tensor::zeros(&[4, 2, 3, 3]));
    let b = tape.constant(Tensor::zeros(&[4]));
    let err = tape.conv2d(x, k, b).unwrap_err().to_string();
    assert!(err.contains("channels"), "{err}");
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x0 = randn(&[2, 2, 6, 6], &mut rng);
    let k0 = randn(&[3, 2, 3, 3], &mut rng);
    let b0 = randn(&[3], &mut rng);
    let inputs = vec![x0.clone(), k0.clone(), b0.clone()];

    let mut f = |inputs: &[Tensor<f64>]| {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(inputs[0].clone());
        let k = tape.constant(inputs[1].clone());
        let b = tape.constant(inputs[2].clone());
        let y = tape.conv2d(x, k, b).unwrap();
        let s = tape.sum_all(y);
        tape.value(s).item()
    };

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(x0);
    let k = tape.leaf(k0);
    let b = tape.leaf(b0);
    let y = tape.conv2d(x, k, b).unwrap();
    let s = tape.sum_all(y);
    tape.backward(s).unwrap();

    for (slot, var) in [(0, x), (1, k), (2, b)] {
        let err = max_rel_err_full(&mut f, &inputs, slot, tape.grad(var).unwrap());
        assert!(err < 1e-4, "slot {slot}: rel err {err}");
    }
}

// ── conv transpose ──────────────────────────────────────────────────────

#[test]
fn conv_transpose_doubles_spatial_size_7_to_14_to_28() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(randn(&[1, 4, 7, 7], &mut rng));
    let k1 = tape.constant(randn(&[4, 2, 3, 3], &mut rng));
    let b1 = tape.constant(Tensor::zeros(&[2]));
    let y1 = tape.conv_transpose2d(x, k1, b1).unwrap();
    assert_eq!(tape.value(y1).shape(), &[1, 2, 14, 14]);
    let k2 = tape.constant(randn(&[2, 1, 3, 3], &mut rng));
    let b2 = tape.constant(Tensor::zeros(&[1]));
    let y2 = tape.conv_transpose2d(y1, k2, b2).unwrap();
    assert_eq!(tape.value(y2).shape(), &[1, 1, 28, 28]);
}

#[test]
fn conv_transpose_zero_input_gives_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 3, 4, 4]));
    let k = tape.constant(randn(&[3, 2, 3, 3], &mut rng));
    let b = tape.constant(Tensor::zeros(&[2]));
    let y = tape.conv_transpose2d(x, k, b).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

/// <convT(k, y), x> == <y, conv(k, x)> with the shared kernel tensor.
fn adjoint_gap(rng: &mut ChaCha8Rng, a: usize, b: usize, h: usize, w: usize, n: usize) -> f64 {
    let x0 = randn(&[n, b, h, w], rng);
    let ho = (h - 1) / 2 + 1;
    let wo = (w - 1) / 2 + 1;
    let y0 = randn(&[n, a, ho, wo], rng);
    let k0 = randn(&[a, b, 3, 3], rng);

    let mut tape = Tape::<f64>::new();
    let x = tape.constant(x0.clone());
    let y = tape.constant(y0.clone());
    let k = tape.constant(k0);
    let zb_a = tape.constant(Tensor::zeros(&[a]));
    let zb_b = tape.constant(Tensor::zeros(&[b]));
    let conv_x = tape.conv2d(x, k, zb_a).unwrap();
    let convt_y = tape.conv_transpose2d(y, k, zb_b).unwrap();

    let lhs: f64 = tape
        .value(convt_y)
        .data()
        .iter()
        .zip(x0.data())
        .map(|(p, q)| p * q)
        .sum();
    let rhs: f64 = tape
        .value(conv_x)
        .data()
        .iter()
        .zip(y0.data())
        .map(|(p, q)| p * q)
        .sum();
    rel_err(lhs, rhs)
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // convT input spatial sizes: x-space h must be 2 * (conv output extent)
    // only holds for even h; use even extents so the pair is exactly square.
    for (a, b, h, w, n) in [(2, 3, 6, 6, 1), (4, 1, 8, 4, 2), (1, 1, 4, 10, 1)] {
        let gap = adjoint_gap(&mut rng, a, b, h, w, n);
        assert!(gap < 1e-6, "adjoint gap {gap} for ({a},{b},{h},{w},{n})");
    }
}

#[test]
fn conv_transpose_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x0 = randn(&[2, 3, 4, 4], &mut rng);
    let k0 = randn(&[3, 2, 3, 3], &mut rng);
    let b0 = randn(&[2], &mut rng);
    let inputs = vec![x0.clone(), k0.clone(), b0.clone()];

    let mut f = |inputs: &[Tensor<f64>]| {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(inputs[0].clone());
        let k = tape.constant(inputs[1].clone());
        let b = tape.constant(inputs[2].clone());
        let y = tape.conv_transpose2d(x, k, b).unwrap();
        let s = tape.sum_all(y);
        tape.value(s).item()
    };

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(x0);
    let k = tape.leaf(k0);
    let b = tape.leaf(b0);
    let y = tape.conv_transpose2d(x, k, b).unwrap();
    let s = tape.sum_all(y);
    tape.backward(s).unwrap();

    for (slot, var) in [(0, x), (1, k), (2, b)] {
        let err = max_rel_err_full(&mut f, &inputs, slot, tape.grad(var).unwrap());
        assert!(err < 1e-4, "slot {slot}: rel err {err}");
    }
}

// ── activations ─────────────────────────────────────────────────────────

#[test]
fn activation_point_values() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    let l = tape.leaky_relu(x, 0.2);
    assert_eq!(tape.value(l).data(), &[-0.2, 0.0, 2.0]);
    let s = tape.sigmoid(x);
    assert_eq!(tape.value(s).data()[1], 0.5);
    let t = tape.tanh(x);
    assert_eq!(tape.value(t).data()[1], 0.0);
    let r = tape.relu(x);
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn activation_gradients_match_finite_differences_at_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // 50 points per activation, excluding |x| < 1e-3 around the relu kink.
    let mut points: Vec<f64> = Vec::new();
    while points.len() < 50 {
        let v: f64 = Real::std_normal(&mut rng);
        if v.abs() > 1e-3 {
            points.push(v);
        }
    }
    let x0 = Tensor::new(vec![50], points).unwrap();

    type Act = fn(&mut Tape<f64>, ugan_core::autodiff::Var) -> ugan_core::autodiff::Var;
    let acts: Vec<(&str, Act)> = vec![
        ("relu", |t, x| t.relu(x)),
        ("leaky_relu", |t, x| t.leaky_relu(x, 0.2)),
        ("tanh", |t, x| t.tanh(x)),
        ("sigmoid", |t, x| t.sigmoid(x)),
    ];
    for (name, act) in acts {
        let mut f = |inputs: &[Tensor<f64>]| {
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(inputs[0].clone());
            let y = act(&mut tape, x);
            let s = tape.sum_all(y);
            tape.value(s).item()
        };
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(x0.clone());
        let y = act(&mut tape, x);
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        let err = max_rel_err_full(&mut f, std::slice::from_ref(&x0), 0, tape.grad(x).unwrap());
        assert!(err < 1e-4, "{name}: rel err {err}");
    }
}

// ── batch norm ──────────────────────────────────────────────────────────

#[test]
fn batchnorm_normalizes_each_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::randn(&[16, 3, 4, 4], 2.5, &mut rng));
    let gamma = tape.constant(Tensor::filled(&[3], 1.0));
    let beta = tape.constant(Tensor::zeros(&[3]));
    let (y, _) = tape.batchnorm_train(x, gamma, beta, 1e-5).unwrap();

    let out = tape.value(y);
    let m = 16 * 16;
    for ch in 0..3 {
        let mut vals = Vec::with_capacity(m);
        for item in 0..16 {
            let base = (item * 3 + ch) * 16;
            vals.extend_from_slice(&out.data()[base..base + 16]);
        }
        let mean: f64 = vals.iter().sum::<f64>() / m as f64;
        let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
        assert!(mean.abs() <= 1e-5, "channel {ch} mean {mean}");
        assert!((var - 1.0).abs() <= 1e-3, "channel {ch} var {var}");
    }
}

#[test]
fn batchnorm_constant_channel_outputs_beta() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::filled(&[4, 2], 3.25));
    let gamma = tape.constant(Tensor::filled(&[2], 1.5));
    let beta = tape.constant(Tensor::new(vec![2], vec![0.25, -0.75]).unwrap());
    let (y, stats) = tape.batchnorm_train(x, gamma, beta, 1e-5).unwrap();
    for row in tape.value(y).data().chunks_exact(2) {
        assert_eq!(row, &[0.25, -0.75]);
    }
    assert_eq!(stats.mean, vec![3.25, 3.25]);
    assert_eq!(stats.var, vec![0.0, 0.0]);
}

#[test]
fn batchnorm_rejects_batch_of_one_in_train_mode() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 4]));
    let gamma = tape.constant(Tensor::filled(&[4], 1.0));
    let beta = tape.constant(Tensor::zeros(&[4]));
    let err = tape.batchnorm_train(x, gamma, beta, 1e-5).unwrap_err();
    assert!(err.to_string().contains("batch"), "{err}");
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x0 = randn(&[6, 3, 2, 2], &mut rng);
    let g0 = Tensor::randn(&[3], 0.5, &mut rng).map(|v| v + 1.0);
    let b0 = randn(&[3], &mut rng);
    // Weight the output so the gradient is not constant across elements.
    let w0 = randn(&[6 * 3 * 2 * 2], &mut rng);
    let inputs = vec![x0.clone(), g0.clone(), b0.clone()];

    let weights = w0.clone();
    let mut f = move |inputs: &[Tensor<f64>]| {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(inputs[0].clone());
        let gamma = tape.constant(inputs[1].clone());
        let beta = tape.constant(inputs[2].clone());
        let (y, _) = tape.batchnorm_train(x, gamma, beta, 1e-5).unwrap();
        let yf = tape.reshape(y, &[6 * 3 * 2 * 2]).unwrap();
        let w = tape.constant(weights.clone());
        let p = tape.mul(yf, w).unwrap();
        let s = tape.sum_all(p);
        tape.value(s).item()
    };

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(x0);
    let gamma = tape.leaf(g0);
    let beta = tape.leaf(b0);
    let (y, _) = tape.batchnorm_train(x, gamma, beta, 1e-5).unwrap();
    let yf = tape.reshape(y, &[6 * 3 * 2 * 2]).unwrap();
    let w = tape.constant(w0);
    let p = tape.mul(yf, w).unwrap();
    let s = tape.sum_all(p);
    tape.backward(s).unwrap();

    for (slot, var) in [(0, x), (1, gamma), (2, beta)] {
        let err = max_rel_err_full(&mut f, &inputs, slot, tape.grad(var).unwrap());
        assert!(err < 1e-3, "slot {slot}: rel err {err}");
    }
}

// ── dropout ─────────────────────────────────────────────────────────────

#[test]
fn dropout_eval_and_zero_rate_are_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(vec![4], vec![1.0, -2.0, 3.0, -4.0]).unwrap());
    let e = tape.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap();
    assert_eq!(e, x);
    let z = tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
    assert_eq!(z, x);
}

#[test]
fn dropout_rejects_rate_of_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[4]));
    assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    assert!(tape.dropout(x, -0.1, Mode::Train, &mut rng).is_err());
}

#[test]
fn dropout_zero_fraction_matches_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::filled(&[1_000_000], 1.0));
    let y = tape.dropout(x, 0.25, Mode::Train, &mut rng).unwrap();
    let zeros = tape.value(y).data().iter().filter(|&&v| v == 0.0).count();
    let frac = zeros as f64 / 1e6;
    assert!((frac - 0.25).abs() <= 0.005, "zero fraction {frac}");
    // Survivors carry the inverted-dropout scale.
    let survivor = tape.value(y).data().iter().find(|&&v| v != 0.0).unwrap();
    assert!((survivor - 1.0 / 0.75).abs() < 1e-12);
}

#[test]
fn dropout_gradient_uses_the_same_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x0 = Tensor::<f64>::filled(&[64], 2.0);
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(x0);
    let y = tape.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
    let s = tape.sum_all(y);
    tape.backward(s).unwrap();
    for (g, v) in tape.grad(x).unwrap().data().iter().zip(tape.value(y).data()) {
        // grad is mask value: 0 where dropped, 2.0 (= 1/(1-rate)) where kept
        assert_eq!(*g, v / 2.0);
    }
}

// ── backward semantics ──────────────────────────────────────────────────

#[test]
fn backward_of_sum_is_all_ones() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.5]).unwrap());
    let s = tape.sum_all(x);
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_of_sum_of_squares_is_two_x() {
    let x0 = Tensor::new(vec![4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(x0.clone());
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum_all(sq);
    tape.backward(s).unwrap();
    for (g, v) in tape.grad(x).unwrap().data().iter().zip(x0.data()) {
        assert!((g - 2.0 * v).abs() < 1e-12);
    }
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[2, 2]));
    let err = tape.backward(x).unwrap_err();
    assert!(err.to_string().contains("scalar"), "{err}");
}

#[test]
fn detached_tensor_receives_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::filled(&[2], 1.0));
    let c = tape.constant(Tensor::filled(&[2], 5.0));
    let y = tape.mul(x, c).unwrap();
    let s = tape.sum_all(y);
    tape.backward(s).unwrap();
    assert!(tape.grad(c).is_none());
    assert_eq!(tape.grad(x).unwrap().data(), &[5.0, 5.0]);
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x0 = randn(&[5], &mut rng);
    let (a, b) = (2.5f64, -0.75f64);

    let grads_of = |scale_sq: f64, scale_exp: f64| {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(x0.clone());
        let sq = tape.mul(x, x).unwrap();
        let l1 = tape.sum_all(sq);
        let ex = tape.exp(x);
        let l2 = tape.sum_all(ex);
        let l1s = tape.affine(l1, scale_sq, 0.0);
        let l2s = tape.affine(l2, scale_exp, 0.0);
        let total = tape.add(l1s, l2s).unwrap();
        tape.backward(total).unwrap();
        tape.grad(x).unwrap().clone()
    };

    let combined = grads_of(a, b);
    let g1 = grads_of(1.0, 0.0);
    let g2 = grads_of(0.0, 1.0);
    for i in 0..5 {
        let expect = a * g1.data()[i] + b * g2.data()[i];
        assert!(
            (combined.data()[i] - expect).abs() < 1e-10,
            "coordinate {i}"
        );
    }
}

#[test]
fn leaf_gradients_accumulate_across_backward_calls() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::filled(&[3], 2.0));
    let s1 = tape.sum_all(x);
    let sq = tape.mul(x, x).unwrap();
    let s2 = tape.sum_all(sq);
    tape.backward(s1).unwrap();
    tape.backward(s2).unwrap();
    // d(sum x)/dx + d(sum x^2)/dx = 1 + 2x = 5 at x = 2
    assert!(tape.grad(x).unwrap().data().iter().all(|&v| v == 5.0));
}

#[test]
fn forward_and_backward_are_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::randn(&[3, 2, 6, 6], 1.0, &mut rng));
        let k = tape.leaf(Tensor::randn(&[4, 2, 3, 3], 1.0, &mut rng));
        let b = tape.leaf(Tensor::randn(&[4], 1.0, &mut rng));
        let y = tape.conv2d(x, k, b).unwrap();
        let a = tape.leaky_relu(y, 0.2);
        let d = tape.dropout(a, 0.25, Mode::Train, &mut rng).unwrap();
        let s = tape.sum_all(d);
        tape.backward(s).unwrap();
        (
            tape.value(s).item(),
            tape.grad(x).unwrap().clone(),
            tape.grad(k).unwrap().clone(),
        )
    };
    let (s1, gx1, gk1) = run();
    let (s2, gx2, gk2) = run();
    assert_eq!(s1.to_bits(), s2.to_bits());
    assert!(gx1.bit_eq(&gx2));
    assert!(gk1.bit_eq(&gk2));
}

#[test]
fn composite_graph_stays_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::randn(&[8, 4], 3.0, &mut rng));
    let w = tape.leaf(Tensor::randn(&[4, 4], 3.0, &mut rng));
    let b = tape.leaf(Tensor::zeros(&[4]));
    let h = tape.dense(x, w, b).unwrap();
    let t = tape.tanh(h);
    let sg = tape.sigmoid(t);
    let cl = tape.clamp(sg, 1e-7, 1.0 - 1e-7);
    let ln = tape.ln(cl);
    let s = tape.mean_all(ln);
    tape.backward(s).unwrap();
    assert!(tape.value(s).all_finite());
    assert!(tape.grad(x).unwrap().all_finite());
    assert!(tape.grad(w).unwrap().all_finite());
}

// ── misc op gradients ───────────────────────────────────────────────────

#[test]
fn elementwise_and_reduction_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x0 = randn(&[3, 4], &mut rng).map(|v| v.abs() + 0.5); // keep ln defined
    let inputs = vec![x0.clone()];

    let mut f = |inputs: &[Tensor<f64>]| {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(inputs[0].clone());
        let e = tape.exp(x);
        let l = tape.ln(x);
        let a = tape.affine(e, 0.5, 1.0);
        let m = tape.mul(a, l).unwrap();
        let sm = tape.softmax_rows(m).unwrap();
        let g = tape.row_gather(sm, vec![1, 0, 3]).unwrap();
        let s = tape.sum_all(g);
        tape.value(s).item()
    };

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(x0);
    let e = tape.exp(x);
    let l = tape.ln(x);
    let a = tape.affine(e, 0.5, 1.0);
    let m = tape.mul(a, l).unwrap();
    let sm = tape.softmax_rows(m).unwrap();
    let g = tape.row_gather(sm, vec![1, 0, 3]).unwrap();
    let s = tape.sum_all(g);
    tape.backward(s).unwrap();

    let err = max_rel_err_full(&mut f, &inputs, 0, tape.grad(x).unwrap());
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn concat_splits_gradient_between_inputs() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = tape.leaf(Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap());
    let c = tape.concat_cols(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
    let w = tape.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let p = tape.mul(c, w).unwrap();
    let s = tape.sum_all(p);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(a).unwrap().data(), &[1.0, 2.0, 4.0, 5.0]);
    assert_eq!(tape.grad(b).unwrap().data(), &[3.0, 6.0]);
}

#[test]
fn clamp_blocks_gradient_outside_interval() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(vec![3], vec![-2.0, 0.5, 2.0]).unwrap());
    let c = tape.clamp(x, 0.0, 1.0);
    let s = tape.sum_all(c);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn central_diff_harness_self_check() {
    // The harness itself against an analytic derivative of exp at 0.3.
    let mut f = |inputs: &[Tensor<f64>]| inputs[0].data()[0].exp();
    let x = vec![Tensor::scalar(0.3f64)];
    let d = central_diff(&mut f, &x, 0, 0, FD_STEP);
    assert!(rel_err(0.3f64.exp(), d) < 1e-6);
}
