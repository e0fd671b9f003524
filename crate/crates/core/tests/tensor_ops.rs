mod common;

use common::*;
use eegdiff_core::{Error, SeededRng, Tape, Tensor};
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn conv2d_identity_scaled_kernel() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let k = tape.constant(t(&[1, 1, 1, 1], &[2.0]));
    let y = tape.conv2d(x, k, (1, 1), (0, 0)).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 3, 3]);
    assert!(tape.value(y).iter().all(|&v| v == 2.0));
}

/// Input shape, kernel shape, stride, padding.
type ConvCase = ([usize; 4], [usize; 4], (usize, usize), (usize, usize));

#[test]
fn conv2d_matches_sliding_window_oracle() {
    let mut rng = SeededRng::new(11);
    let cases: &[ConvCase] = &[
        ([1, 1, 6, 4], [1, 1, 3, 1], (1, 1), (1, 0)),
        ([2, 3, 7, 5], [4, 3, 3, 2], (2, 1), (1, 1)),
        ([1, 2, 9, 9], [3, 2, 3, 3], (2, 2), (0, 2)),
        ([3, 3, 12, 4], [16, 3, 12, 1], (1, 1), (2, 0)),
    ];
    for (xs, ks, stride, pad) in cases {
        let x = random(xs, &mut rng);
        let k = random(ks, &mut rng);
        let (shape, want) = naive_conv2d(&x, &k, *stride, *pad);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let kv = tape.constant(k);
        let y = tape.conv2d(xv, kv, *stride, *pad).unwrap();
        assert_eq!(tape.shape(y), &shape[..]);
        for (a, b) in tape.value(y).iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut rng = SeededRng::new(12);
    for _ in 0..3 {
        let x = random(&[2, 2, 5, 4], &mut rng);
        let k = random(&[3, 2, 3, 2], &mut rng);
        let probe: Vec<f64> = (0..2 * 3 * 5 * 5).map(|_| rng.normal()).collect();
        let err = grad_check(&[x, k], 1e-5, |tape, v| {
            let y = tape.conv2d(v[0], v[1], (1, 1), (1, 1))?;
            tape.weighted_sum(y, &probe)
        });
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn conv2d_shape_mismatch_reports_both_shapes() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 3, 8, 8]));
    let k = tape.constant(Tensor::zeros(&[4, 2, 3, 3]));
    let err = tape.conv2d(x, k, (1, 1), (0, 0)).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Dimension(_)));
    assert!(msg.contains("[1, 3, 8, 8]") && msg.contains("[4, 2, 3, 3]"), "{msg}");
}

#[test]
fn maxpool_picks_window_max() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 1, 4, 1], &[1.0, 3.0, 2.0, 0.0]));
    let y = tape.maxpool2d(x, (4, 1), (4, 1)).unwrap();
    assert_eq!(tape.value(y), &[3.0]);
}

#[test]
fn maxpool_ties_route_gradient_to_first_element() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::full(&[1, 1, 4, 2], 5.0));
    let y = tape.maxpool2d(x, (2, 2), (2, 2)).unwrap();
    assert!(tape.value(y).iter().all(|&v| v == 5.0));
    let loss = tape.weighted_sum(y, &[1.0, 1.0]).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn maxpool_matches_oracle_and_gradients() {
    let mut rng = SeededRng::new(13);
    for (shape, kernel, stride) in [([2, 3, 8, 6], (2, 2), (2, 2)), ([1, 2, 12, 3], (4, 1), (4, 1)), ([1, 1, 7, 7], (3, 2), (2, 3))] {
        let x = random(&shape, &mut rng);
        let (s, want) = naive_maxpool(&x, kernel, stride);
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = tape.maxpool2d(v, kernel, stride).unwrap();
        assert_eq!(tape.shape(y), &s[..]);
        assert_eq!(tape.value(y), &want[..]);
        let probe: Vec<f64> = (0..want.len()).map(|_| rng.normal()).collect();
        let err = grad_check(&[x], 1e-5, |tape, v| {
            let y = tape.maxpool2d(v[0], kernel, stride)?;
            tape.weighted_sum(y, &probe)
        });
        assert!(err < 1e-4);
    }
}

#[test]
fn maxpool_kernel_larger_than_input_is_rejected() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
    assert!(matches!(tape.maxpool2d(x, (4, 1), (4, 1)), Err(Error::Dimension(_))));
}

#[test]
fn linear_identity_and_zero_input() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let eye = tape.constant(t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
    let zb = tape.constant(Tensor::zeros(&[3]));
    let y = tape.linear(x, eye, zb).unwrap();
    assert_eq!(tape.value(y), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

    let z = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(t(&[3], &[0.5, -1.0, 2.0]));
    let y = tape.linear(z, eye, b).unwrap();
    assert_eq!(tape.value(y), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
}

#[test]
fn linear_matches_oracle_and_gradients() {
    let mut rng = SeededRng::new(14);
    let x = random(&[4, 6], &mut rng);
    let w = random(&[5, 6], &mut rng);
    let b = random(&[5], &mut rng);
    let want = naive_linear(&x, &w, &b);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let y = tape.linear(xv, wv, bv).unwrap();
    for (a, b) in tape.value(y).iter().zip(&want) {
        assert!((a - b).abs() < 1e-10);
    }
    let probe: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
    let err = grad_check(&[x, w, b], 1e-5, |tape, v| {
        let y = tape.linear(v[0], v[1], v[2])?;
        tape.weighted_sum(y, &probe)
    });
    assert!(err < 1e-4);
}

#[test]
fn linear_feature_mismatch_is_a_dimension_error() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 4]));
    let w = tape.constant(Tensor::zeros(&[3, 5]));
    let b = tape.constant(Tensor::zeros(&[3]));
    assert!(matches!(tape.linear(x, w, b), Err(Error::Dimension(_))));
}

#[test]
fn gelu_values_and_asymptotics() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[4], &[0.0, 10.0, -10.0, 1.0]));
    let y = tape.gelu(x).unwrap();
    let v = tape.value(y);
    assert_eq!(v[0], 0.0);
    assert!((v[1] - 10.0).abs() < 1e-12);
    assert!(v[2].abs() < 1e-6);
    // 1 · Φ(1)
    assert!((v[3] - 0.841_344_746_068_542_9).abs() < 1e-12);
}

#[test]
fn gelu_gradient_matches_finite_differences() {
    let mut rng = SeededRng::new(15);
    let x = Tensor::uniform(&[50], 4.0, &mut rng);
    let mut tape = Tape::new();
    let v = tape.input(x.clone());
    let y = tape.gelu(v).unwrap();
    let ones = vec![1.0; 50];
    let loss = tape.weighted_sum(y, &ones).unwrap();
    let g = tape.backward(loss).unwrap();
    let h = 1e-5;
    let gelu = |z: f64| z * 0.5 * (1.0 + libm_erf(z / 2f64.sqrt()));
    for (i, &z) in x.data().iter().enumerate() {
        let fd = (gelu(z + h) - gelu(z - h)) / (2.0 * h);
        assert!((g.wrt(v).unwrap()[i] - fd).abs() < 1e-6);
    }
}

// Abramowitz–Stegun 7.1.26 is too coarse here; integrate the Gaussian instead.
fn libm_erf(x: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let f = |s: f64| (-s * s).exp();
    let mut acc = f(0.0) + f(x);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    acc * h / 3.0 * 2.0 / std::f64::consts::PI.sqrt()
}

#[test]
fn cross_entropy_reference_values() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::zeros(&[3, 2]));
    let l = tape.cross_entropy(z, &[0, 1, 1]).unwrap();
    assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);

    let z = tape.constant(t(&[1, 2], &[1000.0, 0.0]));
    let l = tape.cross_entropy(z, &[0]).unwrap();
    assert!(tape.scalar(l) < 1e-9);
}

#[test]
fn cross_entropy_matches_softmax_nll_oracle() {
    let mut rng = SeededRng::new(16);
    for _ in 0..10 {
        let z = random(&[6, 4], &mut rng);
        let labels: Vec<usize> = (0..6).map(|_| rng.below(4)).collect();
        let want = naive_cross_entropy(z.data(), 4, &labels);
        let mut tape = Tape::new();
        let v = tape.constant(z.clone());
        let l = tape.cross_entropy(v, &labels).unwrap();
        assert!((tape.scalar(l) - want).abs() < 1e-10);
        let err = grad_check(&[z], 1e-5, |tape, v| tape.cross_entropy(v[0], &labels));
        assert!(err < 1e-4);
    }
}

#[test]
fn cross_entropy_rejects_out_of_range_label() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::zeros(&[1, 2]));
    assert!(matches!(tape.cross_entropy(z, &[2]), Err(Error::Validation(_))));
}

#[test]
fn mse_reference_values_and_oracle() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
    let b = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
    let c = tape.constant(t(&[3], &[2.0, 3.0, 4.0]));
    let l0 = tape.mse(a, b).unwrap();
    let l1 = tape.mse(a, c).unwrap();
    assert_eq!(tape.scalar(l0), 0.0);
    assert_eq!(tape.scalar(l1), 1.0);

    let mut rng = SeededRng::new(17);
    let p = random(&[2, 3, 4], &mut rng);
    let q = random(&[2, 3, 4], &mut rng);
    let mut want = 0.0;
    for i in 0..p.numel() {
        want += (p.data()[i] - q.data()[i]).powi(2);
    }
    want /= p.numel() as f64;
    let mut tape = Tape::new();
    let (pv, qv) = (tape.constant(p.clone()), tape.constant(q.clone()));
    let l = tape.mse(pv, qv).unwrap();
    assert!((tape.scalar(l) - want).abs() < 1e-12);
    assert!(grad_check(&[p, q], 1e-5, |tape, v| tape.mse(v[0], v[1])) < 1e-4);

    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2]));
    let b = tape.constant(Tensor::zeros(&[3]));
    assert!(matches!(tape.mse(a, b), Err(Error::Dimension(_))));
}

#[test]
fn group_norm_bias_and_broadcast_gradients() {
    let mut rng = SeededRng::new(18);
    let x = random(&[2, 4, 3, 3], &mut rng);
    let gamma = random(&[4], &mut rng);
    let beta = random(&[4], &mut rng);
    let per_sample = random(&[2, 4], &mut rng);
    let pos = random(&[4, 3, 3], &mut rng);
    let probe: Vec<f64> = (0..72).map(|_| rng.normal()).collect();
    let err = grad_check(&[x, gamma, beta, per_sample, pos], 1e-5, |tape, v| {
        let y = tape.group_norm(v[0], v[1], v[2], 2)?;
        let y = tape.add_sample_channel_bias(y, v[3])?;
        let y = tape.add_broadcast(y, v[4])?;
        let y = tape.add_channel_bias(y, v[2])?;
        tape.weighted_sum(y, &probe)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn three_layer_network_backward_matches_finite_differences() {
    let mut rng = SeededRng::new(19);
    let x = random(&[2, 1, 8, 3], &mut rng);
    let k = random(&[2, 1, 3, 1], &mut rng);
    let w1 = random(&[5, 2 * 4 * 3], &mut rng);
    let b1 = random(&[5], &mut rng);
    let w2 = random(&[3, 5], &mut rng);
    let b2 = random(&[3], &mut rng);
    let err = grad_check(&[x, k, w1, b1, w2, b2], 1e-5, |tape, v| {
        let h = tape.conv2d(v[0], v[1], (1, 1), (1, 0))?;
        let h = tape.gelu(h)?;
        let h = tape.maxpool2d(h, (2, 1), (2, 1))?;
        let h = tape.flatten(h)?;
        let h = tape.linear(h, v[2], v[3])?;
        let h = tape.gelu(h)?;
        let z = tape.linear(h, v[4], v[5])?;
        tape.cross_entropy(z, &[2, 0])
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn backward_requires_scalar() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::zeros(&[2]));
    assert!(tape.backward(x).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cross_entropy_is_shift_invariant(
        logits in proptest::collection::vec(-20.0f64..20.0, 12),
        shifts in proptest::collection::vec(-50.0f64..50.0, 4),
        labels in proptest::collection::vec(0usize..3, 4),
    ) {
        let shifted: Vec<f64> = logits.iter().enumerate().map(|(i, v)| v + shifts[i / 3]).collect();
        let mut tape = Tape::new();
        let a = tape.constant(t(&[4, 3], &logits));
        let b = tape.constant(t(&[4, 3], &shifted));
        let la = tape.cross_entropy(a, &labels).unwrap();
        let lb = tape.cross_entropy(b, &labels).unwrap();
        prop_assert!((tape.scalar(la) - tape.scalar(lb)).abs() < 1e-9);
    }
}
