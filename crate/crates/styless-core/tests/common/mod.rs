//! Shared test oracles: central finite differences and error metrics.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Central finite-difference gradient of `f` at `x0`.
///
/// `f` must rebuild its computation from scratch for every call; this keeps
/// the oracle independent of the tape the implementation records.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x0: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x0.len()];
    let mut probe = x0.to_vec();
    for i in 0..x0.len() {
        probe[i] = x0[i] + h;
        let up = f(&probe);
        probe[i] = x0[i] - h;
        let down = f(&probe);
        probe[i] = x0[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Max relative error with denominator `max(1, |a|, |b|)`.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

pub fn rand_vec(rng: &mut ChaCha12Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Random values bounded away from zero, for kinked ops like relu.
pub fn rand_vec_off_kink(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}
