use rand::Rng;

use super::ops::BatchNormState;
use super::*;
use crate::check::{tape_gradient_check, FD_STEP, GRAD_TOL};

fn spec(fusion: FusionKind, k: usize, s: usize, d: usize, f: usize, padding: Padding) -> ConvSpec {
    ConvSpec {
        fusion,
        kernel_width: k,
        stride: s,
        dilation: d,
        filters: f,
        padding,
        activation: ActivationKind::Linear,
    }
}

#[test]
fn early_conv_hand_example() {
    // column0 = [1,2,3,4], column1 = zeros; k=2 kernel all-ones on channel 0.
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0, 0.0], vec![4, 2]);
    let w = t.leaf(vec![1.0, 0.0, 1.0, 0.0], vec![2, 2, 1]);
    let b = t.leaf(vec![0.0], vec![1]);
    let y = conv1d_early(
        &mut t,
        x,
        w,
        b,
        &spec(FusionKind::Early, 2, 1, 1, 1, Padding::Valid),
    )
    .unwrap();
    assert_eq!(t.shape(y), [3, 1]);
    assert_eq!(t.value(y), [3.0, 5.0, 7.0]);
}

#[test]
fn early_conv_identity_kernel() {
    let mut t = Tape::new();
    let xv: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect();
    let x = t.leaf(xv.clone(), vec![4, 3]);
    // k=1, f=C, identity over channels.
    let mut wv = vec![0.0; 9];
    for c in 0..3 {
        wv[c * 3 + c] = 1.0;
    }
    let w = t.leaf(wv, vec![1, 3, 3]);
    let b = t.leaf(vec![0.0; 3], vec![3]);
    let y = conv1d_early(
        &mut t,
        x,
        w,
        b,
        &spec(FusionKind::Early, 1, 1, 1, 3, Padding::Valid),
    )
    .unwrap();
    assert_eq!(t.value(y), xv.as_slice());
}

#[test]
fn early_conv_folds_3d_input() {
    let mut t = Tape::new();
    let x = t.leaf((0..12).map(f64::from_bits).map(|_| 1.0).collect(), vec![3, 2, 2]);
    let w = t.leaf(vec![1.0; 4], vec![1, 4, 1]);
    let b = t.leaf(vec![0.0], vec![1]);
    let y = conv1d_early(
        &mut t,
        x,
        w,
        b,
        &spec(FusionKind::Early, 1, 1, 1, 1, Padding::Valid),
    )
    .unwrap();
    assert_eq!(t.shape(y), [3, 1]);
    assert_eq!(t.value(y), [4.0, 4.0, 4.0]);
}

#[test]
fn fig4_geometry_instance() {
    // 12 samples, kernel 3, dilation 2, stride 2 -> 4 outputs.
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0; 12], vec![12, 1]);
    let w = t.leaf(vec![1.0; 3], vec![3, 1, 1]);
    let b = t.leaf(vec![0.0], vec![1]);
    let y = conv1d_early(
        &mut t,
        x,
        w,
        b,
        &spec(FusionKind::Early, 3, 2, 2, 1, Padding::Valid),
    )
    .unwrap();
    assert_eq!(t.shape(y), [4, 1]);
}

#[test]
fn kernel_exceeding_input_is_geometry_error() {
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0; 6], vec![3, 2]);
    let w = t.leaf(vec![1.0; 8], vec![4, 2, 1]);
    let b = t.leaf(vec![0.0], vec![1]);
    let err = conv1d_early(
        &mut t,
        x,
        w,
        b,
        &spec(FusionKind::Early, 4, 1, 1, 1, Padding::Valid),
    )
    .unwrap_err();
    assert!(matches!(err, TensorError::Geometry { .. }));
}

#[test]
fn late_conv_hand_example() {
    // F=2, k=2, C=1, f=1: feature0=[1,2,3] kernel [1,1]; feature1=[1,1,1] kernel [2,2].
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0, 1.0, 2.0, 1.0, 3.0, 1.0], vec![3, 2, 1]);
    let w = t.leaf(vec![1.0, 1.0, 2.0, 2.0], vec![2, 2, 1, 1]);
    let b = t.leaf(vec![0.0, 0.0], vec![2, 1]);
    let y = conv1d_late(
        &mut t,
        x,
        w,
        b,
        &spec(FusionKind::Late, 2, 1, 1, 1, Padding::Valid),
    )
    .unwrap();
    assert_eq!(t.shape(y), [2, 2, 1]);
    assert_eq!(t.value(y), [3.0, 4.0, 5.0, 4.0]);
}

#[test]
fn late_conv_identity() {
    let mut t = Tape::new();
    let xv = vec![0.5, -1.0, 2.0, 3.5, 0.0, -0.25];
    let x = t.leaf(xv.clone(), vec![3, 2, 1]);
    let w = t.leaf(vec![1.0, 1.0], vec![2, 1, 1, 1]);
    let b = t.leaf(vec![0.0, 0.0], vec![2, 1]);
    let y = conv1d_late(
        &mut t,
        x,
        w,
        b,
        &spec(FusionKind::Late, 1, 1, 1, 1, Padding::Valid),
    )
    .unwrap();
    assert_eq!(t.value(y), xv.as_slice());
}

#[test]
fn hybrid_conv_hand_example_and_late_equivalence() {
    let xv = vec![1.0, 1.0, 2.0, 1.0, 3.0, 1.0];
    let cs = spec(FusionKind::Hybrid, 2, 1, 1, 1, Padding::Valid);

    let mut t = Tape::new();
    let x = t.leaf(xv.clone(), vec![3, 2, 1]);
    let w = t.leaf(vec![1.0, 1.0], vec![2, 1, 1]);
    let b = t.leaf(vec![0.0], vec![1]);
    let y = conv1d_hybrid(&mut t, x, w, b, &cs).unwrap();
    assert_eq!(t.value(y), [3.0, 2.0, 5.0, 2.0]);

    // Late fusion with every per-feature kernel equal to the hybrid kernel.
    let mut t2 = Tape::new();
    let x2 = t2.leaf(xv, vec![3, 2, 1]);
    let w2 = t2.leaf(vec![1.0, 1.0, 1.0, 1.0], vec![2, 2, 1, 1]);
    let b2 = t2.leaf(vec![0.0, 0.0], vec![2, 1]);
    let y2 = conv1d_late(
        &mut t2,
        x2,
        w2,
        b2,
        &spec(FusionKind::Late, 2, 1, 1, 1, Padding::Valid),
    )
    .unwrap();
    assert_eq!(t.value(y), t2.value(y2));
}

#[test]
fn hybrid_promotes_2d_input() {
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]);
    let w = t.leaf(vec![1.0], vec![1, 1, 1]);
    let b = t.leaf(vec![0.5], vec![1]);
    let y = conv1d_hybrid(
        &mut t,
        x,
        w,
        b,
        &spec(FusionKind::Hybrid, 1, 1, 1, 1, Padding::Valid),
    )
    .unwrap();
    assert_eq!(t.shape(y), [2, 2, 1]);
    assert_eq!(t.value(y), [1.5, 2.5, 3.5, 4.5]);
}

#[test]
fn maxpool_hand_examples() {
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0, 3.0, 2.0, 5.0], vec![4]);
    let y = maxpool1d(&mut t, x, 2).unwrap();
    assert_eq!(t.value(y), [3.0, 5.0]);

    let x1 = t.leaf(vec![1.0, 3.0, 2.0, 5.0], vec![4]);
    let same = maxpool1d(&mut t, x1, 1).unwrap();
    assert_eq!(t.value(same), [1.0, 3.0, 2.0, 5.0]);

    let xw = t.leaf(vec![1.0, 2.0], vec![2]);
    assert!(matches!(
        maxpool1d(&mut t, xw, 3),
        Err(TensorError::PoolTooWide { .. })
    ));
}

#[test]
fn maxpool_tie_routes_gradient_to_first() {
    let mut t = Tape::new();
    let x = t.param(vec![1.0, 1.0, 1.0, 1.0], vec![4]);
    let y = maxpool1d(&mut t, x, 2).unwrap();
    assert_eq!(t.value(y), [1.0, 1.0]);
    let s = t.sum_all(y);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), [1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn batch_norm_normalizes_batch() {
    // Single channel, values 3,7,3,7: mean 5, std 2.
    let mut t = Tape::new();
    let x = t.leaf(vec![3.0, 7.0, 3.0, 7.0], vec![4, 1]);
    let gamma = t.leaf(vec![1.0], vec![1]);
    let beta = t.leaf(vec![0.0], vec![1]);
    let mut state = BatchNormState::new(1);
    let y = t.batch_norm(x, gamma, beta, &mut state, true).unwrap();
    let v = t.value(y);
    let mean: f64 = v.iter().sum::<f64>() / 4.0;
    let var: f64 = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-6);
    // Epsilon shrinks the variance to sigma^2/(sigma^2 + eps).
    assert!((var - 4.0 / (4.0 + BN_EPS)).abs() < 1e-12);
    assert!((var - 1.0).abs() < 3e-6);
}

#[test]
fn batch_norm_constant_channel_is_zeroed() {
    let mut t = Tape::new();
    let x = t.leaf(vec![5.0; 6], vec![6, 1]);
    let gamma = t.leaf(vec![1.0], vec![1]);
    let beta = t.leaf(vec![0.0], vec![1]);
    let mut state = BatchNormState::new(1);
    let y = t.batch_norm(x, gamma, beta, &mut state, true).unwrap();
    assert!(t.value(y).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn batch_norm_running_stats_blend() {
    let mut t = Tape::new();
    let x = t.leaf(vec![3.0, 7.0], vec![2, 1]);
    let gamma = t.leaf(vec![1.0], vec![1]);
    let beta = t.leaf(vec![0.0], vec![1]);
    let mut state = BatchNormState::new(1);
    t.batch_norm(x, gamma, beta, &mut state, true).unwrap();
    // One step from the (0, 1) initialization: 0.9*0 + 0.1*5, 0.9*1 + 0.1*4.
    assert!((state.running_mean[0] - 0.5).abs() < 1e-12);
    assert!((state.running_var[0] - 1.3).abs() < 1e-12);

    // Inference uses exactly these statistics.
    let x2 = t.leaf(vec![0.5], vec![1, 1]);
    let y = t.batch_norm(x2, gamma, beta, &mut state, false).unwrap();
    assert!((t.value(y)[0] - 0.0).abs() < 1e-12);
}

#[test]
fn batch_norm_infer_without_training_errors() {
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0], vec![1, 1]);
    let gamma = t.leaf(vec![1.0], vec![1]);
    let beta = t.leaf(vec![0.0], vec![1]);
    let mut state = BatchNormState::new(1);
    assert!(matches!(
        t.batch_norm(x, gamma, beta, &mut state, false),
        Err(TensorError::BatchNormUninitialized)
    ));
}

#[test]
fn dropout_identity_cases() {
    let mut rng = rng_from_seed(1);
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0, 2.0, 3.0], vec![3]);
    let y = t.dropout(x, 0.0, true, &mut rng).unwrap();
    assert_eq!(y, x);
    let y = t.dropout(x, 0.7, false, &mut rng).unwrap();
    assert_eq!(y, x);
    assert!(matches!(
        t.dropout(x, 0.995, true, &mut rng),
        Err(TensorError::DropoutRate { .. })
    ));
}

#[test]
fn dropout_statistics() {
    let n = 100_000;
    let mut rng = rng_from_seed(77);
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0; n], vec![n]);
    let y = t.dropout(x, 0.5, true, &mut rng).unwrap();
    let v = t.value(y);
    let survivors = v.iter().filter(|&&a| a != 0.0).count() as f64 / n as f64;
    assert!((survivors - 0.5).abs() < 0.01, "survivor fraction {survivors}");
    let mean = v.iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 0.02, "survivor expectation {mean}");
}

#[test]
fn dense_hand_examples() {
    let mut t = Tape::new();
    // Identity weights, zero bias.
    let x = t.leaf(vec![1.5, -2.0], vec![1, 2]);
    let w = t.leaf(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2]);
    let b = t.leaf(vec![0.0, 0.0], vec![2]);
    let y = dense(&mut t, x, w, b, ActivationKind::Linear).unwrap();
    assert_eq!(t.value(y), [1.5, -2.0]);

    // y = W x + b with W rows [1,1] and [0,1], b = [0,1] -> [3, 3];
    // stored transposed because the op computes x @ w.
    let x = t.leaf(vec![1.0, 2.0], vec![1, 2]);
    let w = t.leaf(vec![1.0, 0.0, 1.0, 1.0], vec![2, 2]);
    let b = t.leaf(vec![0.0, 1.0], vec![2]);
    let y = dense(&mut t, x, w, b, ActivationKind::Linear).unwrap();
    assert_eq!(t.value(y), [3.0, 3.0]);

    // 1-unit output layer yields one scalar per example.
    let x = t.leaf(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]);
    let w = t.leaf(vec![0.5, 0.5], vec![2, 1]);
    let b = t.leaf(vec![0.0], vec![1]);
    let y = dense(&mut t, x, w, b, ActivationKind::Linear).unwrap();
    assert_eq!(t.shape(y), [2, 1]);
}

#[test]
fn concat_channel_shapes() {
    let mut t = Tape::new();
    let a = t.leaf(vec![0.0; 8], vec![4, 2]);
    let b = t.leaf(vec![1.0; 12], vec![4, 3]);
    let y = concat_channels(&mut t, a, b).unwrap();
    assert_eq!(t.shape(y), [4, 5]);

    let a = t.leaf(vec![0.0; 12], vec![2, 3, 2]);
    let b = t.leaf(vec![1.0; 18], vec![2, 3, 3]);
    let y = concat_channels(&mut t, a, b).unwrap();
    assert_eq!(t.shape(y), [2, 3, 5]);

    // Mixed ranks: the 3D side folds, so (w,F,C) ++ (w,f_h) -> (w, F*C + f_h).
    let a = t.leaf(vec![0.0; 12], vec![2, 3, 2]);
    let b = t.leaf(vec![1.0; 8], vec![2, 4]);
    let y = concat_channels(&mut t, a, b).unwrap();
    assert_eq!(t.shape(y), [2, 10]);

    let a = t.leaf(vec![0.0; 8], vec![4, 2]);
    let b = t.leaf(vec![1.0; 10], vec![5, 2]);
    assert!(concat_channels(&mut t, a, b).is_err());
}

#[test]
fn concat_gradient_splits_exactly() {
    let mut t = Tape::new();
    let a = t.param(vec![1.0, 2.0], vec![1, 2]);
    let b = t.param(vec![3.0], vec![1, 1]);
    let y = concat_channels(&mut t, a, b).unwrap();
    let c = t.leaf(vec![2.0, 3.0, 4.0], vec![1, 3]);
    let p = t.mul(y, c).unwrap();
    let s = t.sum_all(p);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(a).unwrap(), [2.0, 3.0]);
    assert_eq!(g.get(b).unwrap(), [4.0]);
}

#[test]
fn backward_sum_is_ones() {
    let mut t = Tape::new();
    let x = t.param(vec![4.0, -1.0, 0.5], vec![3]);
    let s = t.sum_all(x);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), [1.0, 1.0, 1.0]);
}

#[test]
fn backward_square_sum() {
    let mut t = Tape::new();
    let x = t.param(vec![1.0, -2.0], vec![2]);
    let p = t.mul(x, x).unwrap();
    let s = t.sum_all(p);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), [2.0, -4.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut t = Tape::new();
    let x = t.param(vec![1.0, 2.0], vec![2]);
    assert!(matches!(
        t.backward(x),
        Err(TensorError::NonScalarLoss { numel: 2 })
    ));
}

// --- finite-difference checks per operation -----------------------------

fn rand_vec(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn grad_check_activations() {
    // Smooth everywhere; piecewise kinds checked away from their kinks.
    let mut rng = rng_from_seed(11);
    for kind in [
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Linear,
    ] {
        let x = rand_vec(&mut rng, 12);
        tape_gradient_check(
            |t, vars| {
                let y = t.activation(kind, vars[0]);
                let yy = t.mul(y, y).unwrap();
                t.sum_all(yy)
            },
            &[(vec![3, 4], x)],
            FD_STEP,
            GRAD_TOL,
        )
        .unwrap_or_else(|m| panic!("{kind}: {m:?}"));
    }
    for kind in [
        ActivationKind::Relu,
        ActivationKind::LeakyRelu,
        ActivationKind::HardSigmoid,
    ] {
        // Keep samples at least 1e-2 away from kinks at 0 (relu/leaky) and
        // +/-2.5 (hard sigmoid).
        let x: Vec<f64> = rand_vec(&mut rng, 12)
            .into_iter()
            .map(|v| {
                let mut v = v * 2.0;
                if v.abs() < 1e-2 {
                    v += 0.05;
                }
                if (v.abs() - 2.5).abs() < 1e-2 {
                    v += 0.05;
                }
                v
            })
            .collect();
        tape_gradient_check(
            |t, vars| {
                let y = t.activation(kind, vars[0]);
                t.sum_all(y)
            },
            &[(vec![12], x)],
            FD_STEP,
            GRAD_TOL,
        )
        .unwrap_or_else(|m| panic!("{kind}: {m:?}"));
    }
}

#[test]
fn grad_check_convs() {
    let mut rng = rng_from_seed(23);
    for padding in [Padding::Valid, Padding::Same] {
        let stride = if padding == Padding::Same { 1 } else { 2 };
        let cs = spec(FusionKind::Early, 3, stride, 2, 2, padding);
        let x = rand_vec(&mut rng, 2 * 9 * 3);
        let w = rand_vec(&mut rng, 3 * 3 * 2);
        let b = rand_vec(&mut rng, 2);
        tape_gradient_check(
            |t, vars| {
                let y = t.conv_flat(vars[0], vars[1], vars[2], &cs).unwrap();
                let yy = t.mul(y, y).unwrap();
                t.sum_all(yy)
            },
            &[
                (vec![2, 9, 3], x),
                (vec![3, 3, 2], w),
                (vec![2], b),
            ],
            FD_STEP,
            GRAD_TOL,
        )
        .unwrap_or_else(|m| panic!("early {padding:?}: {m:?}"));
    }

    for shared in [false, true] {
        let cs = spec(
            if shared { FusionKind::Hybrid } else { FusionKind::Late },
            2,
            1,
            1,
            2,
            Padding::Same,
        );
        let (nf, c, f, k) = (3, 2, 2, 2);
        let x = rand_vec(&mut rng, 2 * 5 * nf * c);
        let (wn, bn) = if shared {
            (k * c * f, f)
        } else {
            (nf * k * c * f, nf * f)
        };
        let w = rand_vec(&mut rng, wn);
        let b = rand_vec(&mut rng, bn);
        let wshape = if shared { vec![k, c, f] } else { vec![nf, k, c, f] };
        let bshape = if shared { vec![f] } else { vec![nf, f] };
        tape_gradient_check(
            |t, vars| {
                let y = t.conv_feat(vars[0], vars[1], vars[2], &cs, shared).unwrap();
                let yy = t.mul(y, y).unwrap();
                t.sum_all(yy)
            },
            &[(vec![2, 5, nf, c], x), (wshape, w), (bshape, b)],
            FD_STEP,
            GRAD_TOL,
        )
        .unwrap_or_else(|m| panic!("shared={shared}: {m:?}"));
    }
}

#[test]
fn grad_check_dense_pool_bn_dropout() {
    let mut rng = rng_from_seed(37);
    let x = rand_vec(&mut rng, 4 * 3);
    let w = rand_vec(&mut rng, 3 * 2);
    let b = rand_vec(&mut rng, 2);
    tape_gradient_check(
        |t, vars| {
            let y = t.dense(vars[0], vars[1], vars[2]).unwrap();
            let y = t.activation(ActivationKind::Tanh, y);
            t.sum_all(y)
        },
        &[(vec![4, 3], x), (vec![3, 2], w), (vec![2], b)],
        FD_STEP,
        GRAD_TOL,
    )
    .unwrap();

    // Max pool: well-separated values keep the argmax stable under h.
    let x: Vec<f64> = (0..12).map(|i| (i * 7 % 12) as f64).collect();
    tape_gradient_check(
        |t, vars| {
            let y = t.maxpool_time(vars[0], 2).unwrap();
            let yy = t.mul(y, y).unwrap();
            t.sum_all(yy)
        },
        &[(vec![2, 6, 1], x)],
        FD_STEP,
        GRAD_TOL,
    )
    .unwrap();

    let x = rand_vec(&mut rng, 6 * 2);
    let gamma = rand_vec(&mut rng, 2);
    let beta = rand_vec(&mut rng, 2);
    tape_gradient_check(
        |t, vars| {
            let mut state = BatchNormState::new(2);
            let y = t
                .batch_norm(vars[0], vars[1], vars[2], &mut state, true)
                .unwrap();
            let yy = t.mul(y, y).unwrap();
            t.sum_all(yy)
        },
        &[(vec![6, 2], x), (vec![2], gamma), (vec![2], beta)],
        FD_STEP,
        GRAD_TOL,
    )
    .unwrap();

    // Dropout with a fixed seed gives a fixed mask across FD re-evaluations.
    let x = rand_vec(&mut rng, 20);
    tape_gradient_check(
        |t, vars| {
            let mut drop_rng = rng_from_seed(5);
            let y = t.dropout(vars[0], 0.4, true, &mut drop_rng).unwrap();
            let yy = t.mul(y, y).unwrap();
            t.sum_all(yy)
        },
        &[(vec![20], x)],
        FD_STEP,
        GRAD_TOL,
    )
    .unwrap();
}

#[test]
fn grad_check_structural_ops() {
    let mut rng = rng_from_seed(41);
    let a = rand_vec(&mut rng, 2 * 3);
    let b = rand_vec(&mut rng, 2 * 2);
    tape_gradient_check(
        |t, vars| {
            let y = t.concat_last(vars[0], vars[1]).unwrap();
            let yy = t.mul(y, y).unwrap();
            let s = t.slice_last(yy, 1, 3).unwrap();
            t.mean_all(s).unwrap()
        },
        &[(vec![2, 3], a), (vec![2, 2], b)],
        FD_STEP,
        GRAD_TOL,
    )
    .unwrap();

    let a = rand_vec(&mut rng, 2 * 3);
    let b = rand_vec(&mut rng, 2 * 3);
    tape_gradient_check(
        |t, vars| {
            let st = t.stack_axis1(&[vars[0], vars[1]]).unwrap();
            let s0 = t.time_slice(st, 1).unwrap();
            let r = t.reshape(s0, vec![6]).unwrap();
            let rr = t.mul(r, r).unwrap();
            t.sum_all(rr)
        },
        &[(vec![2, 3], a), (vec![2, 3], b)],
        FD_STEP,
        GRAD_TOL,
    )
    .unwrap();
}

#[test]
fn composite_graph_matches_finite_differences() {
    let mut rng = rng_from_seed(53);
    let x = rand_vec(&mut rng, 3 * 4);
    let w = rand_vec(&mut rng, 4 * 3);
    let b = rand_vec(&mut rng, 3);
    tape_gradient_check(
        |t, vars| {
            let h = t.dense(vars[0], vars[1], vars[2]).unwrap();
            let h = t.activation(ActivationKind::Sigmoid, h);
            let g = t.activation(ActivationKind::Tanh, h);
            let p = t.mul(h, g).unwrap();
            let q = t.add(p, h).unwrap();
            let sc = t.scale(q, 0.75);
            t.mean_all(sc).unwrap()
        },
        &[(vec![3, 4], x), (vec![4, 3], w), (vec![3], b)],
        FD_STEP,
        GRAD_TOL,
    )
    .unwrap();
}

#[test]
fn determinism_same_seed_same_outputs() {
    let run = |seed: u64| {
        let mut rng = rng_from_seed(seed);
        let mut t = Tape::new();
        let xv = glorot_init(&[4, 3], &mut rng);
        let x = t.leaf(xv, vec![4, 3]);
        let y = t.activation(ActivationKind::Sigmoid, x);
        let mut drop_rng = rng_from_seed(seed ^ 1);
        let y = t.dropout(y, 0.3, true, &mut drop_rng).unwrap();
        t.value(y).to_vec()
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
}
