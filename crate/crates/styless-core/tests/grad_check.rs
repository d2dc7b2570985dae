//! Finite-difference checks for every autodiff primitive, plus the linearity
//! and determinism contracts of the tape.

mod common;

use common::{fd_grad, max_rel_err, rand_vec, rand_vec_off_kink};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use styless_core::{Tape, TensorId};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Check `d loss / d input` for a graph `build: (tape, x) -> loss` against
/// central differences, where `x` has the given shape.
fn check_input_grad(
    name: &str,
    shape: &[usize],
    x0: &[f64],
    build: impl Fn(&mut Tape, TensorId) -> TensorId,
) {
    let eval = |x: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let xid = tape.constant(x.to_vec(), shape.to_vec()).unwrap();
        let loss = build(&mut tape, xid);
        tape.value(loss).item()
    };
    let expected = fd_grad(eval, x0, H);

    let mut tape = Tape::new();
    let xid = tape.variable(x0.to_vec(), shape.to_vec()).unwrap();
    let loss = build(&mut tape, xid);
    tape.backward(loss).unwrap();
    let got = tape.grad(xid).unwrap();

    let err = max_rel_err(got, &expected);
    assert!(err < TOL, "{name}: max relative error {err:.3e} >= {TOL:.0e}");
}

/// Weighted sum of an output tensor, giving every cell a distinct upstream
/// gradient so backward bugs cannot cancel.
fn weighted_loss(tape: &mut Tape, out: TensorId) -> TensorId {
    let n = tape.value(out).len();
    let weights: Vec<f64> = (0..n).map(|i| 0.3 + 0.11 * (i % 7) as f64).collect();
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(weights, shape).unwrap();
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod).unwrap()
}

#[test]
fn grad_add_mul_scale_sum() {
    let mut rng = ChaCha12Rng::seed_from_u64(101);
    for _ in 0..20 {
        let n = rng.gen_range(2..12);
        let x0 = rand_vec(&mut rng, n, -1.0, 1.0);
        let other = rand_vec(&mut rng, n, -1.0, 1.0);
        let other2 = other.clone();
        check_input_grad("add", &[n], &x0, move |tape, x| {
            let o = tape.constant(other.clone(), vec![n]).unwrap();
            let y = tape.add(x, o).unwrap();
            weighted_loss(tape, y)
        });
        check_input_grad("mul", &[n], &x0, move |tape, x| {
            let o = tape.constant(other2.clone(), vec![n]).unwrap();
            let y = tape.mul(x, o).unwrap();
            weighted_loss(tape, y)
        });
        check_input_grad("scale", &[n], &x0, |tape, x| {
            let y = tape.scale(x, -1.7).unwrap();
            weighted_loss(tape, y)
        });
        check_input_grad("sum", &[n], &x0, |tape, x| tape.sum(x).unwrap());
    }
}

#[test]
fn grad_matmul_both_sides() {
    let mut rng = ChaCha12Rng::seed_from_u64(102);
    for _ in 0..20 {
        let (m, k, n) = (
            rng.gen_range(1..4),
            rng.gen_range(1..5),
            rng.gen_range(1..4),
        );
        let a0 = rand_vec(&mut rng, m * k, -1.0, 1.0);
        let b0 = rand_vec(&mut rng, k * n, -1.0, 1.0);
        let b1 = b0.clone();
        check_input_grad("matmul lhs", &[m, k], &a0, move |tape, x| {
            let b = tape.constant(b1.clone(), vec![k, n]).unwrap();
            let y = tape.matmul(x, b).unwrap();
            weighted_loss(tape, y)
        });
        let a1 = a0.clone();
        check_input_grad("matmul rhs", &[k, n], &b0, move |tape, x| {
            let a = tape.constant(a1.clone(), vec![m, k]).unwrap();
            let y = tape.matmul(a, x).unwrap();
            weighted_loss(tape, y)
        });
    }
}

#[test]
fn grad_conv2d_input_and_kernel() {
    let mut rng = ChaCha12Rng::seed_from_u64(103);
    for _ in 0..20 {
        let (bs, ci, co) = (rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..3));
        let (h, w) = (rng.gen_range(3..6), rng.gen_range(3..6));
        let kh = rng.gen_range(1..4).min(h);
        let stride = rng.gen_range(1..3);
        let padding = rng.gen_range(0..2);
        let x0 = rand_vec(&mut rng, bs * ci * h * w, -1.0, 1.0);
        let k0 = rand_vec(&mut rng, co * ci * kh * kh, -1.0, 1.0);
        let k1 = k0.clone();
        check_input_grad("conv2d input", &[bs, ci, h, w], &x0, move |tape, x| {
            let k = tape.constant(k1.clone(), vec![co, ci, kh, kh]).unwrap();
            let y = tape.conv2d(x, k, stride, padding).unwrap();
            weighted_loss(tape, y)
        });
        let x1 = x0.clone();
        check_input_grad("conv2d kernel", &[co, ci, kh, kh], &k0, move |tape, k| {
            let x = tape.constant(x1.clone(), vec![bs, ci, h, w]).unwrap();
            let y = tape.conv2d(x, k, stride, padding).unwrap();
            weighted_loss(tape, y)
        });
    }
}

#[test]
fn grad_relu_and_pools() {
    let mut rng = ChaCha12Rng::seed_from_u64(104);
    for _ in 0..20 {
        let (bs, c) = (rng.gen_range(1..3), rng.gen_range(1..3));
        let (h, w) = (rng.gen_range(4..7), rng.gen_range(4..7));
        let x0 = rand_vec_off_kink(&mut rng, bs * c * h * w);
        let kernel = rng.gen_range(2..4).min(h).min(w);
        let stride = rng.gen_range(1..3);
        check_input_grad("relu", &[bs, c, h, w], &x0, |tape, x| {
            let y = tape.relu(x).unwrap();
            weighted_loss(tape, y)
        });
        check_input_grad("max_pool2d", &[bs, c, h, w], &x0, move |tape, x| {
            let y = tape.max_pool2d(x, kernel, stride).unwrap();
            weighted_loss(tape, y)
        });
        check_input_grad("avg_pool2d", &[bs, c, h, w], &x0, move |tape, x| {
            let y = tape.avg_pool2d(x, kernel, stride).unwrap();
            weighted_loss(tape, y)
        });
        check_input_grad("flatten", &[bs, c, h, w], &x0, |tape, x| {
            let y = tape.flatten(x).unwrap();
            weighted_loss(tape, y)
        });
    }
}

#[test]
fn grad_channel_stats_and_affine() {
    let mut rng = ChaCha12Rng::seed_from_u64(105);
    for _ in 0..20 {
        let (bs, c) = (rng.gen_range(1..3), rng.gen_range(1..4));
        let (h, w) = (rng.gen_range(2..5), rng.gen_range(2..5));
        let x0 = rand_vec(&mut rng, bs * c * h * w, -1.0, 1.0);
        check_input_grad("channel_mean", &[bs, c, h, w], &x0, |tape, x| {
            let y = tape.channel_mean(x).unwrap();
            weighted_loss(tape, y)
        });
        check_input_grad("channel_var", &[bs, c, h, w], &x0, |tape, x| {
            let y = tape.channel_var(x).unwrap();
            weighted_loss(tape, y)
        });
        let scale = rand_vec(&mut rng, c, 0.5, 2.0);
        let shift = rand_vec(&mut rng, c, -1.0, 1.0);
        let (s1, t1) = (scale.clone(), shift.clone());
        check_input_grad("affine input", &[bs, c, h, w], &x0, move |tape, x| {
            let s = tape.constant(s1.clone(), vec![c]).unwrap();
            let t = tape.constant(t1.clone(), vec![c]).unwrap();
            let y = tape.affine_per_channel(x, s, t).unwrap();
            weighted_loss(tape, y)
        });
        let x1 = x0.clone();
        let t2 = shift.clone();
        check_input_grad("affine scale", &[c], &scale, move |tape, s| {
            let x = tape.constant(x1.clone(), vec![bs, c, h, w]).unwrap();
            let t = tape.constant(t2.clone(), vec![c]).unwrap();
            let y = tape.affine_per_channel(x, s, t).unwrap();
            weighted_loss(tape, y)
        });
        let x2 = x0.clone();
        let s2 = scale.clone();
        check_input_grad("affine shift", &[c], &shift, move |tape, t| {
            let x = tape.constant(x2.clone(), vec![bs, c, h, w]).unwrap();
            let s = tape.constant(s2.clone(), vec![c]).unwrap();
            let y = tape.affine_per_channel(x, s, t).unwrap();
            weighted_loss(tape, y)
        });
    }
}

#[test]
fn grad_instance_norm_through_statistics() {
    let mut rng = ChaCha12Rng::seed_from_u64(106);
    for _ in 0..20 {
        let (bs, c) = (rng.gen_range(1..3), rng.gen_range(1..4));
        let (h, w) = (rng.gen_range(2..6), rng.gen_range(2..6));
        let x0 = rand_vec(&mut rng, bs * c * h * w, -1.0, 1.0);
        let mu = rand_vec(&mut rng, c, -1.0, 1.0);
        let sigma = rand_vec(&mut rng, c, 0.1, 2.0);
        check_input_grad("instance_norm", &[bs, c, h, w], &x0, move |tape, x| {
            let y = tape.instance_norm(x, &mu, &sigma, 1e-5).unwrap();
            weighted_loss(tape, y)
        });
    }
}

#[test]
fn grad_softmax_cross_entropy() {
    let mut rng = ChaCha12Rng::seed_from_u64(107);
    for _ in 0..20 {
        let (bs, k) = (rng.gen_range(1..5), rng.gen_range(2..8));
        let x0 = rand_vec(&mut rng, bs * k, -2.0, 2.0);
        let labels: Vec<usize> = (0..bs).map(|_| rng.gen_range(0..k)).collect();
        check_input_grad("softmax_cross_entropy", &[bs, k], &x0, move |tape, x| {
            tape.softmax_cross_entropy(x, &labels).unwrap()
        });
    }
}

#[test]
fn grad_resize_and_pad() {
    let mut rng = ChaCha12Rng::seed_from_u64(108);
    for _ in 0..20 {
        let (bs, c) = (1, rng.gen_range(1..3));
        let (h, w) = (rng.gen_range(3..6), rng.gen_range(3..6));
        let x0 = rand_vec(&mut rng, bs * c * h * w, -1.0, 1.0);
        let (oh, ow) = (rng.gen_range(2..8), rng.gen_range(2..8));
        check_input_grad("resize_nearest", &[bs, c, h, w], &x0, move |tape, x| {
            let y = tape.resize_nearest(x, oh, ow).unwrap();
            weighted_loss(tape, y)
        });
        let (top, left) = (rng.gen_range(0..3), rng.gen_range(0..3));
        check_input_grad("pad_zero", &[bs, c, h, w], &x0, move |tape, x| {
            let y = tape.pad_zero(x, top, left, h + 4, w + 4).unwrap();
            weighted_loss(tape, y)
        });
    }
}

/// The two-layer conv net example: input gradient against central
/// differences at h = 1e-5.
#[test]
fn grad_two_layer_conv_net() {
    let mut rng = ChaCha12Rng::seed_from_u64(109);
    let (c1, c2) = (3, 4);
    let k1 = rand_vec(&mut rng, c1 * 2 * 9, -0.5, 0.5);
    let k2 = rand_vec(&mut rng, c2 * c1 * 9, -0.5, 0.5);
    let x0 = rand_vec(&mut rng, 2 * 8 * 8, -1.0, 1.0);
    let build = move |tape: &mut Tape, x: TensorId| {
        let k1t = tape.constant(k1.clone(), vec![c1, 2, 3, 3]).unwrap();
        let k2t = tape.constant(k2.clone(), vec![c2, c1, 3, 3]).unwrap();
        let h1 = tape.conv2d(x, k1t, 1, 1).unwrap();
        let a1 = tape.relu(h1).unwrap();
        let p1 = tape.max_pool2d(a1, 2, 2).unwrap();
        let h2 = tape.conv2d(p1, k2t, 1, 1).unwrap();
        let a2 = tape.relu(h2).unwrap();
        let flat = tape.flatten(a2).unwrap();
        let logits_w = tape
            .constant(
                (0..c2 * 16 * 3).map(|i| ((i % 11) as f64 - 5.0) * 0.05).collect(),
                vec![c2 * 16, 3],
            )
            .unwrap();
        let logits = tape.matmul(flat, logits_w).unwrap();
        tape.softmax_cross_entropy(logits, &[1]).unwrap()
    };
    check_input_grad("two-layer conv net", &[1, 2, 8, 8], &x0, build);
}

/// Linearity: grad(a*f + b*g) == a*grad(f) + b*grad(g) within 1e-10.
#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha12Rng::seed_from_u64(110);
    let n = 12;
    let x0 = rand_vec(&mut rng, n, -1.0, 1.0);
    let w = rand_vec(&mut rng, n, -1.0, 1.0);
    let (a, b) = (0.37, -2.25);

    let grad_of = |coeff_f: f64, coeff_g: f64| -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.variable(x0.clone(), vec![n]).unwrap();
        let wt = tape.constant(w.clone(), vec![n]).unwrap();
        // f = sum(x * w), g = sum(x * x)
        let xw = tape.mul(x, wt).unwrap();
        let f = tape.sum(xw).unwrap();
        let xx = tape.mul(x, x).unwrap();
        let g = tape.sum(xx).unwrap();
        let fa = tape.scale(f, coeff_f).unwrap();
        let gb = tape.scale(g, coeff_g).unwrap();
        let loss = tape.add(fa, gb).unwrap();
        tape.backward(loss).unwrap();
        tape.grad(x).unwrap().to_vec()
    };

    let grad_f = grad_of(1.0, 0.0);
    let grad_g = grad_of(0.0, 1.0);
    let grad_combined = grad_of(a, b);
    for i in 0..n {
        let expect = a * grad_f[i] + b * grad_g[i];
        assert!(
            (grad_combined[i] - expect).abs() < 1e-10,
            "linearity violated at {i}: {} vs {expect}",
            grad_combined[i]
        );
    }
}

/// Identical inputs and seeds produce bit-identical outputs and gradients.
#[test]
fn forward_backward_is_deterministic() {
    let run = || -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha12Rng::seed_from_u64(111);
        let x0 = rand_vec(&mut rng, 2 * 3 * 6 * 6, -1.0, 1.0);
        let k0 = rand_vec(&mut rng, 4 * 3 * 9, -1.0, 1.0);
        let mut tape = Tape::new();
        let x = tape.variable(x0, vec![2, 3, 6, 6]).unwrap();
        let k = tape.constant(k0, vec![4, 3, 3, 3]).unwrap();
        let y = tape.conv2d(x, k, 1, 1).unwrap();
        let r = tape.relu(y).unwrap();
        let flat = tape.flatten(r).unwrap();
        let loss = tape.softmax_cross_entropy(flat, &[7, 3]).unwrap();
        let out = tape.value(flat).data().to_vec();
        tape.backward(loss).unwrap();
        (out, tape.grad(x).unwrap().to_vec())
    };
    let (o1, g1) = run();
    let (o2, g2) = run();
    assert!(o1.iter().zip(&o2).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
}
