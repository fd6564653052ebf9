//! Finite-difference validation of every tape operation.
//!
//! Each test builds a scalar objective from `f64` input leaves, runs the
//! analytic backward pass, and compares every input coordinate against a
//! central difference. The objective is a weighted sum (fixed pseudo-random
//! weights) so that asymmetric backward bugs cannot cancel out.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BnMode, ConvCfg, Tape, Var};
use crate::gradcheck::rel_err;
use crate::tensor::Tensor;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;
const FLOOR: f64 = 1e-8;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

/// Reduces `y` to a scalar with fixed weights derived from the seed.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let shape = tape.value(y).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(rand_tensor(&mut rng, shape, -1.0, 1.0));
    let prod = tape.mul(y, w);
    tape.sum_all(prod)
}

/// Checks analytic gradients of `build` (inputs -> scalar root) against
/// central differences over every coordinate of every input.
fn fd_check(build: impl Fn(&mut Tape<f64>, &[Var]) -> Var, inputs: &[Tensor<f64>]) {
    let eval = |inputs: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let root = build(&mut tape, &vars);
        assert_eq!(tape.value(root).shape(), [1, 1, 1, 1], "objective must be scalar");
        tape.value(root).data()[0]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let root = build(&mut tape, &vars);
    let grads = tape.backward(root, 0);

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt_var(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + H;
            let fp = eval(&work);
            work[k].data_mut()[i] = orig - H;
            let fm = eval(&work);
            work[k].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * H);
            let ana = analytic.data()[i];
            let e = rel_err(ana, numeric, FLOOR);
            assert!(
                e < TOL,
                "input {k} coord {i}: analytic {ana:.9e} vs numeric {numeric:.9e} (rel {e:.3e})"
            );
        }
    }
}

#[test]
fn fd_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Keep values away from the kink at zero.
    let x = rand_tensor(&mut rng, [2, 2, 3, 3], 0.1, 1.0).map(|v| if v > 0.55 { v } else { -v });
    fd_check(
        |tape, v| {
            let y = tape.relu(v[0]);
            weighted_sum(tape, y, 100)
        },
        &[x],
    );
}

#[test]
fn fd_sigmoid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, [1, 3, 2, 4], -3.0, 3.0);
    fd_check(
        |tape, v| {
            let y = tape.sigmoid(v[0]);
            weighted_sum(tape, y, 101)
        },
        &[x],
    );
}

#[test]
fn fd_affine() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, [1, 2, 2, 2], -1.0, 1.0);
    fd_check(
        |tape, v| {
            let y = tape.affine(v[0], -1.7, 0.3);
            weighted_sum(tape, y, 102)
        },
        &[x],
    );
}

#[test]
fn fd_broadcast_add_mul() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = rand_tensor(&mut rng, [2, 3, 1, 1], -1.0, 1.0);
    let b = rand_tensor(&mut rng, [2, 1, 3, 2], -1.0, 1.0);
    let c = rand_tensor(&mut rng, [1, 1, 1, 1], 0.2, 0.9);
    fd_check(
        |tape, v| {
            let s = tape.add(v[0], v[1]);
            let p = tape.mul(s, v[2]);
            weighted_sum(tape, p, 103)
        },
        &[a, b, c],
    );
}

#[test]
fn fd_broadcast_div() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = rand_tensor(&mut rng, [1, 2, 3, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, [1, 2, 1, 1], 0.5, 2.0);
    fd_check(
        |tape, v| {
            let q = tape.div(v[0], v[1]);
            weighted_sum(tape, q, 104)
        },
        &[a, b],
    );
}

#[test]
fn fd_conv2d_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, [2, 2, 5, 6], -1.0, 1.0);
    let w = rand_tensor(&mut rng, [3, 2, 3, 3], -0.5, 0.5);
    let b = rand_tensor(&mut rng, [1, 3, 1, 1], -0.2, 0.2);
    let cfg = ConvCfg { stride: 2, pad: 1, dilation: 1, groups: 1 };
    fd_check(
        |tape, v| {
            let y = tape.conv2d(v[0], v[1], Some(v[2]), cfg);
            weighted_sum(tape, y, 105)
        },
        &[x, w, b],
    );
}

#[test]
fn fd_conv2d_dilated() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, [1, 2, 7, 7], -1.0, 1.0);
    let w = rand_tensor(&mut rng, [2, 2, 3, 3], -0.5, 0.5);
    let cfg = ConvCfg { stride: 1, pad: 4, dilation: 4, groups: 1 };
    fd_check(
        |tape, v| {
            let y = tape.conv2d(v[0], v[1], None, cfg);
            weighted_sum(tape, y, 106)
        },
        &[x, w],
    );
}

#[test]
fn fd_conv2d_depthwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&mut rng, [2, 3, 5, 5], -1.0, 1.0);
    let w = rand_tensor(&mut rng, [3, 1, 3, 3], -0.5, 0.5);
    let b = rand_tensor(&mut rng, [1, 3, 1, 1], -0.2, 0.2);
    let cfg = ConvCfg { stride: 1, pad: 2, dilation: 2, groups: 3 };
    fd_check(
        |tape, v| {
            let y = tape.conv2d(v[0], v[1], Some(v[2]), cfg);
            weighted_sum(tape, y, 107)
        },
        &[x, w, b],
    );
}

#[test]
fn fd_pad_reflect() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, [1, 2, 4, 5], -1.0, 1.0);
    fd_check(
        |tape, v| {
            let y = tape.pad_reflect(v[0], 2);
            weighted_sum(tape, y, 108)
        },
        &[x],
    );
}

#[test]
fn fd_max_pool2() {
    // Distinct values so the argmax is stable under the probe step.
    let x = Tensor::from_fn([1, 2, 4, 4], |n, c, h, w| {
        ((n * 41 + c * 29 + h * 13 + w * 7) % 37) as f64 * 0.11 + (h * 4 + w) as f64 * 1e-3
    });
    fd_check(
        |tape, v| {
            let y = tape.max_pool2(v[0]);
            weighted_sum(tape, y, 109)
        },
        &[x],
    );
}

#[test]
fn fd_global_pools() {
    let x = Tensor::from_fn([2, 2, 3, 3], |n, c, h, w| {
        ((n * 53 + c * 31 + h * 11 + w * 3) % 23) as f64 * 0.07 + (h * 3 + w) as f64 * 1e-3
    });
    fd_check(
        |tape, v| {
            let avg = tape.global_avg_pool(v[0]);
            let max = tape.global_max_pool(v[0]);
            let s = tape.add(avg, max);
            weighted_sum(tape, s, 110)
        },
        &[x],
    );
}

#[test]
fn fd_channel_pools() {
    let x = Tensor::from_fn([1, 4, 3, 3], |n, c, h, w| {
        ((n * 17 + c * 43 + h * 19 + w * 5) % 29) as f64 * 0.09 + c as f64 * 1e-3
    });
    fd_check(
        |tape, v| {
            let mean = tape.channel_mean(v[0]);
            let max = tape.channel_max(v[0]);
            let s = tape.concat_channels(mean, max);
            weighted_sum(tape, s, 111)
        },
        &[x],
    );
}

#[test]
fn fd_resize_bilinear_up_and_down() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = rand_tensor(&mut rng, [1, 2, 3, 4], -1.0, 1.0);
    fd_check(
        |tape, v| {
            let up = tape.resize_bilinear(v[0], 7, 9);
            let down = tape.resize_bilinear(up, 2, 3);
            weighted_sum(tape, down, 112)
        },
        &[x],
    );
}

#[test]
fn fd_concat_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = rand_tensor(&mut rng, [2, 2, 3, 2], -1.0, 1.0);
    let b = rand_tensor(&mut rng, [2, 3, 3, 2], -1.0, 1.0);
    fd_check(
        |tape, v| {
            let y = tape.concat_channels(v[0], v[1]);
            weighted_sum(tape, y, 113)
        },
        &[a, b],
    );
}

#[test]
fn fd_batch_norm_train() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_tensor(&mut rng, [3, 2, 3, 3], -1.0, 1.0);
    let gamma = rand_tensor(&mut rng, [1, 2, 1, 1], 0.5, 1.5);
    let beta = rand_tensor(&mut rng, [1, 2, 1, 1], -0.3, 0.3);
    fd_check(
        |tape, v| {
            let (y, _) = tape.batch_norm(v[0], v[1], v[2], 1e-5, BnMode::Train);
            weighted_sum(tape, y, 114)
        },
        &[x, gamma, beta],
    );
}

#[test]
fn fd_batch_norm_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = rand_tensor(&mut rng, [2, 2, 3, 3], -1.0, 1.0);
    let gamma = rand_tensor(&mut rng, [1, 2, 1, 1], 0.5, 1.5);
    let beta = rand_tensor(&mut rng, [1, 2, 1, 1], -0.3, 0.3);
    let mean = [0.2, -0.1];
    let var = [1.3, 0.8];
    fd_check(
        |tape, v| {
            let (y, _) = tape.batch_norm(v[0], v[1], v[2], 1e-5, BnMode::Eval { mean: &mean, var: &var });
            weighted_sum(tape, y, 115)
        },
        &[x, gamma, beta],
    );
}

#[test]
fn fd_mean_all() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = rand_tensor(&mut rng, [2, 1, 3, 3], -1.0, 1.0);
    fd_check(
        |tape, v| {
            let m = tape.mean_all(v[0]);
            // Square it so the gradient is input-dependent.
            tape.mul(m, m)
        },
        &[x],
    );
}

#[test]
fn fd_bce_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let p = rand_tensor(&mut rng, [2, 1, 3, 3], 0.05, 0.95);
    let t = Tensor::from_fn([2, 1, 3, 3], |n, _, h, w| ((n + h + w) % 2) as f64);
    fd_check(
        move |tape, v| tape.bce_loss(v[0], &t, 1e-7),
        &[p],
    );
}

#[test]
fn fd_iou_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let p = rand_tensor(&mut rng, [3, 1, 3, 3], 0.05, 0.95);
    let t = Tensor::from_fn([3, 1, 3, 3], |n, _, h, w| ((n + 2 * h + w) % 3 == 0) as u8 as f64);
    fd_check(
        move |tape, v| tape.iou_loss(v[0], &t),
        &[p],
    );
}

#[test]
fn fd_composite_attention_style_graph() {
    // Exercises the op mix the fusion module uses: pooled descriptors,
    // broadcast outer product, sigmoid gates, concat and resize.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = rand_tensor(&mut rng, [2, 3, 4, 4], -1.0, 1.0);
    let w = rand_tensor(&mut rng, [3, 3, 1, 1], -0.6, 0.6);
    fd_check(
        |tape, v| {
            let gap = tape.global_avg_pool(v[0]);
            let chan = tape.conv2d(gap, v[1], None, ConvCfg::default());
            let mc = tape.sigmoid(chan);
            let cmax = tape.channel_max(v[0]);
            let ms = tape.sigmoid(cmax);
            let m = tape.mul(mc, ms);
            let gated = tape.mul(v[0], m);
            let res = tape.add(gated, v[0]);
            let up = tape.resize_bilinear(res, 6, 6);
            weighted_sum(tape, up, 116)
        },
        &[x, w],
    );
}

#[test]
fn backward_accumulates_over_reused_nodes() {
    // y = x * x summed: gradient must be 2x, requiring accumulation of two
    // paths into the same node.
    let x = Tensor::from_vec([1, 1, 1, 3], [0.5f64, -1.5, 2.0].to_vec()).unwrap();
    let mut tape = Tape::new();
    let v = tape.input(x.clone());
    let sq = tape.mul(v, v);
    let root = tape.sum_all(sq);
    let grads = tape.backward(root, 0);
    let g = grads.wrt_var(v).unwrap();
    for (gv, xv) in g.data().iter().zip(x.data()) {
        assert!((gv - 2.0 * xv).abs() < 1e-12);
    }
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::filled([1, 1, 2, 2], 1.0f64));
    let k = tape.constant(Tensor::filled([1, 1, 2, 2], 3.0f64));
    let y = tape.mul(x, k);
    let root = tape.sum_all(y);
    let grads = tape.backward(root, 0);
    assert!(grads.wrt_var(k).is_none());
    assert!(grads.wrt_var(x).is_some());
}
