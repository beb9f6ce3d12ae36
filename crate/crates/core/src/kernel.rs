//! RBF kernel evaluation, kernel-matrix assembly with jitter, and analytic
//! gradients with respect to the log-hyperparameters.
//!
//! The kernel is K(x_i, x_j) = a^2 exp(-2 ||x_i - x_j||^2 / l^2). The factor
//! 2 in the exponent is unusual (the textbook form divides by 2 l^2) but is
//! kept deliberately: all shipped length scales were tuned against it.

use crate::math::SymMatrix;

/// Default diagonal jitter for matrices destined for a Cholesky factorization.
pub const DEFAULT_JITTER: f64 = 1e-8;

/// RBF hyperparameters; optimization works on (log a, log l) so both stay
/// positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub amplitude: f64,
    pub length_scale: f64,
}

impl KernelParams {
    /// # Panics
    /// If either parameter is not strictly positive.
    pub fn new(amplitude: f64, length_scale: f64) -> Self {
        assert!(amplitude > 0.0, "amplitude {amplitude} must be positive");
        assert!(
            length_scale > 0.0,
            "length scale {length_scale} must be positive"
        );
        Self {
            amplitude,
            length_scale,
        }
    }

    /// Parameters from log-space coordinates.
    pub fn from_log(log_a: f64, log_l: f64) -> Self {
        Self {
            amplitude: log_a.exp(),
            length_scale: log_l.exp(),
        }
    }
}

/// Squared Euclidean distance.
///
/// # Panics
/// On dimension mismatch.
#[inline]
pub fn sq_dist(xi: &[f64], xj: &[f64]) -> f64 {
    assert_eq!(xi.len(), xj.len(), "dimension mismatch");
    xi.iter()
        .zip(xj)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

/// Kernel value between two points.
///
/// # Panics
/// On dimension mismatch.
#[inline]
pub fn rbf(xi: &[f64], xj: &[f64], p: &KernelParams) -> f64 {
    let a2 = p.amplitude * p.amplitude;
    let l2 = p.length_scale * p.length_scale;
    a2 * (-2.0 * sq_dist(xi, xj) / l2).exp()
}

/// Kernel matrix over a flat point-major array of `n = xs.len() / dim`
/// points, with `jitter` added to the diagonal.
///
/// # Panics
/// If `xs` is empty or its length is not a multiple of `dim`.
pub fn kernel_matrix(xs: &[f64], dim: usize, p: &KernelParams, jitter: f64) -> SymMatrix {
    let n = point_count(xs, dim);
    SymMatrix::from_fn(n, |i, j| {
        let v = rbf(&xs[i * dim..(i + 1) * dim], &xs[j * dim..(j + 1) * dim], p);
        if i == j {
            v + jitter
        } else {
            v
        }
    })
}

/// Gradients of the jitter-free kernel matrix with respect to log a and
/// log l: dK/dlog a = 2K, dK/dlog l (i, j) = K(i, j) * 4 ||x_i - x_j||^2 / l^2.
pub fn kernel_matrix_grad(xs: &[f64], dim: usize, p: &KernelParams) -> (SymMatrix, SymMatrix) {
    let n = point_count(xs, dim);
    let l2 = p.length_scale * p.length_scale;
    let mut grad_log_a = SymMatrix::zeros(n);
    let mut grad_log_l = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let d2 = sq_dist(&xs[i * dim..(i + 1) * dim], &xs[j * dim..(j + 1) * dim]);
            let k = p.amplitude * p.amplitude * (-2.0 * d2 / l2).exp();
            grad_log_a.set(i, j, 2.0 * k);
            grad_log_l.set(i, j, k * 4.0 * d2 / l2);
        }
    }
    (grad_log_a, grad_log_l)
}

fn point_count(xs: &[f64], dim: usize) -> usize {
    assert!(dim > 0, "dimension must be positive");
    assert!(!xs.is_empty(), "point set must be nonempty");
    assert_eq!(xs.len() % dim, 0, "flat point array length mismatch");
    xs.len() / dim
}
