//! Shared test oracles: independent reference implementations and a central
//! finite-difference gradient checker.

#![allow(dead_code)]

use das_core::tensor::{Tape, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length mismatch");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!(
            (x - y).abs() <= tol * (1.0 + y.abs()),
            "{what}: element {i}: {x} vs {y}"
        );
    }
}

/// Simplex projection by cumulative sums over the sorted scores, written
/// directly from the projection definition (find the largest prefix whose
/// running mean keeps every prefix member above the water line).
pub fn project_simplex_reference(z: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = z.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = sorted[0] - 1.0;
    for (j, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if v > candidate {
            theta = candidate;
        }
    }
    z.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Direct-summation 'same' convolution. Padded origin floor(k/2) per axis.
pub fn conv_reference(
    x: &[f64],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    k: &[f64],
    cout: usize,
    kh: usize,
    kw: usize,
    bias: &[f64],
) -> Vec<f64> {
    let pt = (kh / 2) as isize;
    let pl = (kw / 2) as isize;
    let mut y = vec![0.0f64; n * cout * h * w];
    for b in 0..n {
        for co in 0..cout {
            for i in 0..h as isize {
                for j in 0..w as isize {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for u in 0..kh as isize {
                            for v in 0..kw as isize {
                                let si = i + u - pt;
                                let sj = j + v - pl;
                                if si < 0 || si >= h as isize || sj < 0 || sj >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * cin + ci) * h + si as usize) * w + sj as usize];
                                let kv = k[((co * cin + ci) * kh + u as usize) * kw + v as usize];
                                acc += xv * kv;
                            }
                        }
                    }
                    y[((b * cout + co) * h + i as usize) * w + j as usize] = acc;
                }
            }
        }
    }
    y
}

pub fn uniform_tensor<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor {
    Tensor::uniform(shape, lo, hi, rng)
}

/// Uniform values kept away from zero by `margin` (for relu/l1 kinks).
pub fn kink_free_tensor<R: Rng>(shape: &[usize], margin: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(margin..1.0)
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Central finite differences against tape gradients for every coordinate of
/// every parameter. `build` must construct a scalar loss from the given
/// parameter tensors (registered or plain, identically).
pub fn check_gradients<F>(params: &[Tensor], build: F, tol: f64, what: &str)
where
    F: Fn(&mut Tape, &[Tensor]) -> Tensor,
{
    let h = 1e-3;
    let mut tape = Tape::new();
    let tracked: Vec<Tensor> = params.iter().map(|p| tape.param(p)).collect();
    let loss = build(&mut tape, &tracked);
    assert!(loss.is_scalar(), "{what}: loss must be scalar");
    let grads = tape.backward(&loss).expect("backward");

    for (pi, p) in params.iter().enumerate() {
        let analytic = grads
            .get(&tracked[pi])
            .unwrap_or_else(|| panic!("{what}: no gradient for parameter {pi}"));
        for j in 0..p.len() {
            let eval = |delta: f64| -> f64 {
                let mut shifted: Vec<Tensor> = params.to_vec();
                let mut data = p.data().to_vec();
                data[j] += delta;
                shifted[pi] = Tensor::new(p.shape(), data).unwrap();
                let mut fwd = Tape::no_grad();
                build(&mut fwd, &shifted).data()[0]
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic[j];
            let denom = a.abs().max(fd.abs()).max(0.01);
            assert!(
                (a - fd).abs() / denom < tol,
                "{what}: parameter {pi} coordinate {j}: analytic {a} vs finite difference {fd}"
            );
        }
    }
}
