use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{check, relative_error};

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn no_skip(_: usize, _: usize, _: f64) -> bool {
    false
}

/// Reduce an output to a scalar through MSE against a fixed random target.
fn mse_against(tape: &mut Tape<f64>, out: Var, seed: u64) -> crate::Result<Var> {
    let target = random(tape.value(out).shape(), &mut rng(seed));
    let t = tape.constant(target);
    tape.mse_loss(out, t)
}

#[test]
fn from_vec_rejects_wrong_length() {
    assert!(Tensor::<f64>::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
    assert!(Tensor::<f64>::from_vec(vec![2, 0], vec![]).is_err());
    let t = Tensor::<f64>::from_vec(vec![2, 3], vec![0.0; 6]).unwrap();
    assert_eq!(t.numel(), 6);
}

#[test]
fn conv_identity_kernel_returns_input() {
    let mut tape = Tape::new();
    let x = random(&[1, 1, 3, 3], &mut rng(1));
    let xv = tape.constant(x.clone());
    let w = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv2d(xv, w, Some(b), 1, 0).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn conv_all_ones_sums() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
    let w = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
    // 2x2 kernel is even, so use the equivalent 3x3 with zero border via padding 0 on a 3x3 input
    let w2 = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
    assert!(tape.conv2d(x, w, None, 1, 0).is_err());
    let y = tape.conv2d(x, w2, None, 1, 0).unwrap();
    let s: f64 = tape.value(y).data().iter().sum();
    assert_eq!(s, 4.0);
    let p = tape.conv2d(x, w, None, 1, 1).unwrap();
    // centre-free 2x2 input under a 3x3 ones kernel: each output sees all four inputs
    assert_eq!(tape.value(p).data(), &[4.0, 4.0, 4.0, 4.0]);
}

#[test]
fn conv_shape_mismatch_is_config_error() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::<f64>::zeros(&[1, 2, 4, 4]));
    let w = tape.constant(Tensor::zeros(&[3, 5, 3, 3]));
    let err = tape.conv2d(x, w, None, 1, 1).unwrap_err();
    assert!(err.to_string().contains("2 channels"), "{err}");
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut r = rng(2);
    let inputs = vec![random(&[2, 3, 8, 8], &mut r), random(&[4, 3, 3, 3], &mut r), random(&[4], &mut r)];
    let rep = check(&inputs, STEP, |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
        mse_against(t, y, 3)
    }, no_skip)
    .unwrap();
    assert!(rep.worst() < TOL, "{rep:?}");
}

#[test]
fn batchnorm_normalized_input_passes_through() {
    // per channel mean 0 var 1 by construction: values ±1
    let data: Vec<f64> = (0..2 * 2 * 2 * 2).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let x = Tensor::from_vec(vec![2, 2, 2, 2], data.clone()).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::ones(&[2]));
    let b = tape.constant(Tensor::zeros(&[2]));
    let mut st = BatchNormState::new(2);
    let y = tape.batchnorm2d(xv, g, b, BatchNormMode::Train(&mut st)).unwrap();
    for (a, e) in tape.value(y).data().iter().zip(&data) {
        assert!((a - e).abs() < 1e-5);
    }
}

#[test]
fn batchnorm_zero_gamma_gives_beta() {
    let mut tape = Tape::new();
    let xv = tape.constant(random(&[3, 2, 4, 4], &mut rng(4)));
    let g = tape.constant(Tensor::zeros(&[2]));
    let b = tape.constant(Tensor::from_vec(vec![2], vec![0.25, -2.0]).unwrap());
    let mut st = BatchNormState::new(2);
    let y = tape.batchnorm2d(xv, g, b, BatchNormMode::Train(&mut st)).unwrap();
    for (i, v) in tape.value(y).data().iter().enumerate() {
        let ch = (i / 16) % 2;
        assert_eq!(*v, [0.25, -2.0][ch]);
    }
}

#[test]
fn batchnorm_training_statistics() {
    let mut tape = Tape::new();
    let xv = tape.constant(random(&[4, 2, 4, 4], &mut rng(5)).map(|v| 3.0 * v + 1.5));
    let g = tape.constant(Tensor::ones(&[2]));
    let b = tape.constant(Tensor::zeros(&[2]));
    let mut st = BatchNormState::new(2);
    let y = tape.batchnorm2d(xv, g, b, BatchNormMode::Train(&mut st)).unwrap();
    let out = tape.value(y).data();
    for ch in 0..2 {
        let vals: Vec<f64> = (0..4).flat_map(|n| out[(n * 2 + ch) * 16..(n * 2 + ch + 1) * 16].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }
    // running mean moved toward the batch mean
    assert!(st.mean[0] > 0.0 && st.mean[1] > 0.0);
}

#[test]
fn batchnorm_single_element_batch_is_degenerate() {
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::<f64>::ones(&[1, 2, 1, 1]));
    let g = tape.constant(Tensor::ones(&[2]));
    let b = tape.constant(Tensor::zeros(&[2]));
    let mut st = BatchNormState::new(2);
    assert!(matches!(
        tape.batchnorm2d(xv, g, b, BatchNormMode::Train(&mut st)),
        Err(crate::Error::DegenerateVariance { count: 1 })
    ));
    // inference mode is fine
    assert!(tape.batchnorm2d(xv, g, b, BatchNormMode::Eval(&st)).is_ok());
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    for training in [true, false] {
        let mut r = rng(6);
        let inputs = vec![random(&[3, 2, 3, 3], &mut r), random(&[2], &mut r), random(&[2], &mut r)];
        let rep = check(&inputs, STEP, |t, v| {
            let mut st = BatchNormState::new(2);
            st.mean = vec![0.1, -0.2];
            st.var = vec![0.5, 1.5];
            let y = t.batchnorm2d(v[0], v[1], v[2], if training { BatchNormMode::Train(&mut st) } else { BatchNormMode::Eval(&st) })?;
            mse_against(t, y, 7)
        }, no_skip)
        .unwrap();
        assert!(rep.worst() < TOL, "training={training} {rep:?}");
    }
}

#[test]
fn leaky_relu_values_and_gradient() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(vec![2], vec![3.0, -1.0]).unwrap());
    let y = tape.leaky_relu(x, 0.2);
    assert_eq!(tape.value(y).data(), &[3.0, -0.2]);

    let inputs = vec![random(&[2, 3, 4, 4], &mut rng(8))];
    let rep = check(&inputs, STEP, |t, v| {
        let y = t.leaky_relu(v[0], 0.2);
        mse_against(t, y, 9)
    }, |_, _, x| x.abs() < 1e-3)
    .unwrap();
    assert!(rep.worst() < TOL, "{rep:?}");
}

#[test]
fn sigmoid_values_and_gradient() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(vec![4], vec![0.0, 50.0, -1000.0, 1000.0]).unwrap());
    let y = tape.sigmoid(x);
    let v: &[f64] = tape.value(y).data();
    assert_eq!(v[0], 0.5);
    assert!((v[1] - 1.0).abs() < 1e-12);
    assert!(v.iter().all(|&s| s > 0.0 && s < 1.0));

    let inputs = vec![random(&[3, 5], &mut rng(10)).map(|v| 4.0 * v)];
    let rep = check(&inputs, STEP, |t, v| {
        let y = t.sigmoid(v[0]);
        mse_against(t, y, 11)
    }, no_skip)
    .unwrap();
    assert!(rep.worst() < TOL, "{rep:?}");
}

#[test]
fn relu_gradient() {
    let inputs = vec![random(&[4, 6], &mut rng(12))];
    let rep = check(&inputs, STEP, |t, v| {
        let y = t.relu(v[0]);
        mse_against(t, y, 13)
    }, |_, _, x| x.abs() < 1e-3)
    .unwrap();
    assert!(rep.worst() < TOL, "{rep:?}");
}

#[test]
fn global_avg_pool_values_and_gradient() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = tape.global_avg_pool(x).unwrap();
    assert_eq!(tape.value(y).data(), &[2.5]);
    let k = tape.constant(Tensor::full(&[2, 3, 4, 5], 1.75));
    let yk = tape.global_avg_pool(k).unwrap();
    assert!(tape.value(yk).data().iter().all(|&v: &f64| (v - 1.75).abs() < 1e-15));

    // loss = Σ pooled ⇒ gradient is exactly 1/(H·W) everywhere
    let mut tape = Tape::new();
    let x = tape.leaf(random(&[2, 3, 4, 5], &mut rng(14)), true);
    let y = tape.global_avg_pool(x).unwrap();
    let ones = tape.constant(Tensor::zeros(&[2, 3]));
    let l = tape.mse_loss(y, ones).unwrap();
    let _ = l;
    let inputs = vec![random(&[2, 3, 4, 5], &mut rng(14))];
    let rep = check(&inputs, STEP, |t, v| {
        let y = t.global_avg_pool(v[0])?;
        mse_against(t, y, 15)
    }, no_skip)
    .unwrap();
    assert!(rep.worst() < 1e-6, "{rep:?}");
}

#[test]
fn upsample_replicates_and_averages_back() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(vec![1, 1, 1, 1], vec![7.0]).unwrap());
    let y = tape.upsample_nearest(x, 2).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 1, 2, 2]);
    assert_eq!(tape.value(y).data(), &[7.0; 4]);

    let src = random(&[2, 3, 3, 4], &mut rng(16));
    let xv = tape.constant(src.clone());
    let up = tape.upsample_nearest(xv, 2).unwrap();
    let u = tape.value(up);
    // average every 2x2 block (pairwise sums keep this exact)
    let mut back = vec![0.0; src.numel()];
    for (p, plane) in u.data().chunks(6 * 8).enumerate() {
        for y in 0..3 {
            for x in 0..4 {
                let at = |dy: usize, dx: usize| plane[(y * 2 + dy) * 8 + x * 2 + dx];
                back[p * 12 + y * 4 + x] = ((at(0, 0) + at(0, 1)) + (at(1, 0) + at(1, 1))) / 4.0;
            }
        }
    }
    assert_eq!(back, src.data());
    assert!(tape.upsample_nearest(xv, 1).is_err());

    let rep = check(&[src], STEP, |t, v| {
        let y = t.upsample_nearest(v[0], 2)?;
        mse_against(t, y, 17)
    }, no_skip)
    .unwrap();
    assert!(rep.worst() < 1e-6, "{rep:?}");
}

#[test]
fn add_and_scale_channels() {
    let mut r = rng(18);
    let x = random(&[2, 3, 2, 2], &mut r);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let ones = tape.constant(Tensor::ones(&[2, 3]));
    let zeros = tape.constant(Tensor::zeros(&[2, 3, 2, 2]));
    let s = tape.scale_channels(xv, ones).unwrap();
    assert_eq!(tape.value(s), &x);
    let a = tape.add(xv, zeros).unwrap();
    assert_eq!(tape.value(a), &x);
    let bad = tape.constant(Tensor::ones(&[3, 2]));
    assert!(tape.scale_channels(xv, bad).is_err());
    assert!(tape.add(xv, ones).is_err());

    let inputs = vec![random(&[2, 3, 2, 2], &mut r), random(&[2, 3], &mut r), random(&[2, 3, 2, 2], &mut r)];
    let rep = check(&inputs, STEP, |t, v| {
        let s = t.scale_channels(v[0], v[1])?;
        let a = t.add(s, v[2])?;
        mse_against(t, a, 19)
    }, no_skip)
    .unwrap();
    assert!(rep.worst() < 1e-5, "{rep:?}");
}

#[test]
fn linear_concat_narrow_scale_gradients() {
    let mut r = rng(20);
    let inputs = vec![
        random(&[3, 4], &mut r),
        random(&[2, 4], &mut r),
        random(&[2, 3, 2, 2], &mut r),
        random(&[2, 1, 2, 2], &mut r),
    ];
    let rep = check(&inputs, STEP, |t, v| {
        let l = t.linear(v[0], v[1])?;
        let c = t.concat_channels(&[v[2], v[3]])?;
        let n = t.narrow_channels(c, 1, 3)?;
        let s = t.scale(n, 0.7);
        let s = t.add_scalar(s, 0.3);
        let a = mse_against(t, l, 21)?;
        let b = mse_against(t, s, 22)?;
        t.add(a, b)
    }, no_skip)
    .unwrap();
    assert!(rep.worst() < 1e-5, "{rep:?}");
}

#[test]
fn mse_values_and_gradient() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::from_vec(vec![2], vec![1.0, 1.0]).unwrap(), true);
    let t = tape.constant(Tensor::from_vec(vec![2], vec![0.0, 2.0]).unwrap());
    let l = tape.mse_loss(p, t).unwrap();
    assert_eq!(tape.value(l).item(), 1.0);
    let g = tape.backward(l).unwrap();
    // 2·(p − t)/n
    assert_eq!(g.get(p).unwrap().data(), &[1.0, -1.0]);
    let same = tape.mse_loss(p, p).unwrap();
    assert_eq!(tape.value(same).item(), 0.0);

    let bad = tape.constant(Tensor::zeros(&[3]));
    assert!(tape.mse_loss(p, bad).is_err());

    let inputs = vec![random(&[5, 3], &mut rng(23)), random(&[5, 3], &mut rng(24))];
    let rep = check(&inputs, STEP, |t, v| t.mse_loss(v[0], v[1]), no_skip).unwrap();
    assert!(rep.worst() < 1e-6, "{rep:?}");
}

#[test]
fn backward_closed_form_and_independence() {
    // loss = mse(w·x, t) with scalar w
    let (w0, x0, t0) = (0.7, 1.9, -0.4);
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::scalar(w0), true);
    let unused = tape.leaf(Tensor::scalar(3.0), true);
    let x = tape.constant(Tensor::from_vec(vec![1, 1, 1, 1], vec![x0]).unwrap());
    let w4 = tape.leaf(Tensor::from_vec(vec![1, 1, 1, 1], vec![w0]).unwrap(), true);
    let y = tape.conv2d(x, w4, None, 1, 0).unwrap();
    let tgt = tape.constant(Tensor::from_vec(vec![1, 1, 1, 1], vec![t0]).unwrap());
    let l = tape.mse_loss(y, tgt).unwrap();
    let g = tape.backward(l).unwrap();
    let want = 2.0 * x0 * (w0 * x0 - t0);
    assert!(relative_error(g.get(w4).unwrap().item(), want) < 1e-14);
    assert!(g.get(w).is_none());
    assert_eq!(g.get_or_zeros(unused).item(), 0.0);
    // repeated calls start fresh
    let g2 = tape.backward(l).unwrap();
    assert_eq!(g2.get(w4).unwrap().item(), g.get(w4).unwrap().item());
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f64>::zeros(&[2]), true);
    assert!(matches!(tape.backward(x), Err(crate::Error::Usage(_))));
}

#[test]
fn forward_is_deterministic_and_finite_on_large_inputs() {
    let build = |seed| {
        let mut r = rng(seed);
        let mut tape = Tape::new();
        let x = tape.constant(random(&[2, 3, 6, 6], &mut r).map(|v| v * 1e3));
        let w = tape.constant(random(&[4, 3, 3, 3], &mut r));
        let g = tape.constant(Tensor::ones(&[4]));
        let b = tape.constant(Tensor::zeros(&[4]));
        let mut st = BatchNormState::new(4);
        let y = tape.conv2d(x, w, None, 1, 1).unwrap();
        let y = tape.batchnorm2d(y, g, b, BatchNormMode::Train(&mut st)).unwrap();
        let y = tape.leaky_relu(y, 0.2);
        let p = tape.global_avg_pool(y).unwrap();
        let s = tape.sigmoid(p);
        tape.value(s).clone()
    };
    let a = build(30);
    let b = build(30);
    assert!(a.all_finite());
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn sigmoid_stays_open_unit(vals in proptest::collection::vec(-1e3f64..1e3, 1..32)) {
            let mut tape = Tape::new();
            let n = vals.len();
            let x = tape.constant(Tensor::from_vec(vec![n], vals).unwrap());
            let y = tape.sigmoid(x);
            prop_assert!(tape.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }

        #[test]
        fn leaky_relu_preserves_sign(vals in proptest::collection::vec(-1e3f64..1e3, 1..32)) {
            let mut tape = Tape::new();
            let n = vals.len();
            let x = tape.constant(Tensor::from_vec(vec![n], vals.clone()).unwrap());
            let y = tape.leaky_relu(x, 0.2);
            for (o, i) in tape.value(y).data().iter().zip(&vals) {
                if *i >= 0.0 { prop_assert_eq!(*o, *i) } else { prop_assert_eq!(*o, 0.2 * i) }
            }
        }
    }
}
