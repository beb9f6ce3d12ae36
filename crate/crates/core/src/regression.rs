//! Exact GP regression over weakly annotated data: per-point noise
//! variances, predictive distributions, marginal negative log-likelihood,
//! and Adam-based hyperparameter fitting in log-space.

use crate::kernel::{kernel_matrix_grad, rbf, KernelParams};
use crate::math::{cholesky_factor, dot, CholeskyFactor, MathError, SymMatrix};

/// Observation-noise model: a base variance profile plus the annotation
/// add-on beta = gamma / alpha, where alpha is the chosen precision.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub base: BaseNoise,
    /// Largest annotation noise add-on; beta = gamma corresponds to the
    /// lowest precision alpha = 1, beta = 0 to infinite precision.
    pub gamma: f64,
}

/// Supported base-variance profiles sigma^2(x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseNoise {
    /// 0.01 (1 + (x/5)^2) over the first coordinate, the profile of the
    /// synthetic sine data.
    SineProfile,
    /// Input-independent variance.
    Constant(f64),
}

impl NoiseModel {
    /// # Panics
    /// If `gamma` or a constant base variance is not strictly positive.
    pub fn new(base: BaseNoise, gamma: f64) -> Self {
        assert!(gamma > 0.0, "gamma {gamma} must be positive");
        if let BaseNoise::Constant(v) = base {
            assert!(v > 0.0, "base variance {v} must be positive");
        }
        Self { base, gamma }
    }

    /// Smallest attainable observation variance at `x`.
    pub fn base_variance(&self, x: &[f64]) -> f64 {
        match self.base {
            BaseNoise::SineProfile => sine_variance(x[0]),
            BaseNoise::Constant(v) => v,
        }
    }
}

/// Base variance profile of the synthetic sine data, 0.01 (1 + (x/5)^2).
pub fn sine_variance(x: f64) -> f64 {
    0.01 * (1.0 + (x / 5.0).powi(2))
}

/// Training set of weak annotations: inputs, annotation values, and the
/// per-annotation noise add-on beta in [0, gamma].
#[derive(Debug, Clone, Default)]
pub struct WeakRegressionDataset {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    betas: Vec<f64>,
}

impl WeakRegressionDataset {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self {
            dim,
            xs: Vec::new(),
            ys: Vec::new(),
            betas: Vec::new(),
        }
    }

    /// Appends one annotated point.
    ///
    /// # Panics
    /// If the input dimension mismatches or `beta` is negative.
    pub fn push(&mut self, x: &[f64], y: f64, beta: f64) {
        assert_eq!(x.len(), self.dim, "dimension mismatch");
        assert!(beta >= 0.0, "beta {beta} must be nonnegative");
        self.xs.extend_from_slice(x);
        self.ys.push(y);
        self.betas.push(beta);
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn xs_flat(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
}

/// Immutable fitted regressor: Cholesky factor of K + diag(sigma^2 + beta)
/// and the precomputed weight vector for predictive means.
#[derive(Debug, Clone)]
pub struct FittedRegressor {
    dim: usize,
    xs: Vec<f64>,
    kp: KernelParams,
    nm: NoiseModel,
    chol: CholeskyFactor,
    w: Vec<f64>,
}

/// Fits the exact posterior. An empty dataset yields the prior model.
///
/// # Errors
/// [`MathError::NotPositiveDefinite`] if the noisy kernel matrix cannot be
/// factored.
///
/// # Panics
/// If any beta exceeds `nm.gamma`.
pub fn fit(
    data: &WeakRegressionDataset,
    kp: &KernelParams,
    nm: &NoiseModel,
    jitter: f64,
) -> Result<FittedRegressor, MathError> {
    for &b in data.betas() {
        assert!(b <= nm.gamma, "beta {b} exceeds gamma {}", nm.gamma);
    }
    let chol = cholesky_factor(&noisy_kernel_matrix(data, kp, nm, jitter))?;
    let w = chol.solve(data.ys());
    Ok(FittedRegressor {
        dim: data.dim(),
        xs: data.xs_flat().to_vec(),
        kp: *kp,
        nm: nm.clone(),
        chol,
        w,
    })
}

fn noisy_kernel_matrix(
    data: &WeakRegressionDataset,
    kp: &KernelParams,
    nm: &NoiseModel,
    jitter: f64,
) -> SymMatrix {
    let n = data.len();
    SymMatrix::from_fn(n, |i, j| {
        let v = rbf(data.x(i), data.x(j), kp);
        if i == j {
            v + nm.base_variance(data.x(i)) + data.betas()[i] + jitter
        } else {
            v
        }
    })
}

impl FittedRegressor {
    pub fn kernel_params(&self) -> &KernelParams {
        &self.kp
    }

    pub fn noise_model(&self) -> &NoiseModel {
        &self.nm
    }

    pub fn train_len(&self) -> usize {
        self.w.len()
    }

    fn cross_covariances(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "dimension mismatch");
        (0..self.train_len())
            .map(|i| rbf(x, &self.xs[i * self.dim..(i + 1) * self.dim], &self.kp))
            .collect()
    }

    /// Posterior mean and variance of the latent function at `x`. The
    /// variance is clamped at 0 against roundoff.
    pub fn predict_latent(&self, x: &[f64]) -> (f64, f64) {
        let prior_var = self.kp.amplitude * self.kp.amplitude;
        if self.train_len() == 0 {
            assert_eq!(x.len(), self.dim, "dimension mismatch");
            return (0.0, prior_var);
        }
        let k_star = self.cross_covariances(x);
        let mean = dot(&k_star, &self.w);
        let v = self.chol.forward_solve(&k_star);
        let var = prior_var - dot(&v, &v);
        (mean, var.max(0.0))
    }

    /// Predictive distribution of a weak annotation at `x` acquired with
    /// noise add-on `beta`: mean and variance sigma^2_* + sigma^2(x) + beta.
    ///
    /// # Panics
    /// If `beta` is outside [0, gamma].
    pub fn predict_weak(&self, x: &[f64], beta: f64) -> (f64, f64) {
        assert!(
            (0.0..=self.nm.gamma).contains(&beta),
            "beta {beta} outside [0, {}]",
            self.nm.gamma
        );
        let (mean, var) = self.predict_latent(x);
        (mean, var + self.nm.base_variance(x) + beta)
    }
}

/// Marginal negative log-likelihood, up to an additive constant:
/// log det(K + D) + y^T (K + D)^{-1} y, with D the per-point noise diagonal.
///
/// # Errors
/// [`MathError::NotPositiveDefinite`] as in [`fit`].
///
/// # Panics
/// If the dataset is empty.
pub fn nll(
    data: &WeakRegressionDataset,
    kp: &KernelParams,
    nm: &NoiseModel,
    jitter: f64,
) -> Result<f64, MathError> {
    assert!(!data.is_empty(), "dataset must be nonempty");
    let chol = cholesky_factor(&noisy_kernel_matrix(data, kp, nm, jitter))?;
    let w = chol.solve(data.ys());
    Ok(chol.log_det() + dot(data.ys(), &w))
}

/// Gradient of [`nll`] with respect to (log a, log l):
/// tr(M^{-1} dK) - y^T M^{-1} dK M^{-1} y for each hyperparameter.
///
/// # Errors
/// [`MathError::NotPositiveDefinite`] as in [`fit`].
///
/// # Panics
/// If the dataset is empty.
pub fn nll_grad(
    data: &WeakRegressionDataset,
    kp: &KernelParams,
    nm: &NoiseModel,
    jitter: f64,
) -> Result<[f64; 2], MathError> {
    Ok(nll_and_grad(data, kp, nm, jitter)?.1)
}

fn nll_and_grad(
    data: &WeakRegressionDataset,
    kp: &KernelParams,
    nm: &NoiseModel,
    jitter: f64,
) -> Result<(f64, [f64; 2]), MathError> {
    assert!(!data.is_empty(), "dataset must be nonempty");
    let n = data.len();
    let chol = cholesky_factor(&noisy_kernel_matrix(data, kp, nm, jitter))?;
    let w = chol.solve(data.ys());
    let value = chol.log_det() + dot(data.ys(), &w);

    // M^{-1} column by column; M is symmetric so rows equal columns.
    let mut inv = SymMatrix::zeros(n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = chol.solve(&e);
        e[j] = 0.0;
        for (i, &v) in col.iter().enumerate() {
            inv.set(i, j, v);
        }
    }

    let (grad_a, grad_l) = kernel_matrix_grad(data.xs_flat(), data.dim(), kp);
    let direction = |g: &SymMatrix| {
        let mut trace = 0.0;
        let mut quad = 0.0;
        for i in 0..n {
            trace += dot(inv.row(i), g.row(i));
            quad += w[i] * dot(g.row(i), &w);
        }
        trace - quad
    };
    Ok((value, [direction(&grad_a), direction(&grad_l)]))
}

/// Adam settings for hyperparameter fitting, with the documented defaults:
/// learning rate 0.1, moment decays 0.9 / 0.999, epsilon 1e-8, at most 100
/// epochs, relative-decrease stop 5e-2, gradient stop 1e-5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub rel_tol: f64,
    pub grad_tol: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 100,
            rel_tol: 5e-2,
            grad_tol: 1e-5,
        }
    }
}

/// Which stopping rule ended a hyperparameter fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientSmall,
    RelativeDecrease,
    MaxEpochs,
}

/// Result of a hyperparameter fit, instrumented for the stopping rules.
#[derive(Debug, Clone)]
pub struct HyperFit {
    pub params: KernelParams,
    pub epochs: usize,
    pub reason: StopReason,
    pub final_nll: f64,
}

/// Minimizes [`nll`] over (log a, log l) with Adam, returning the last
/// iterate. Stops when (nll_prev - nll_t) / max(|nll_prev|, |nll_t|, 1) is
/// at most `rel_tol`, when the gradient max-norm is at most `grad_tol`
/// (checked before stepping), or after `max_epochs` epochs.
///
/// # Errors
/// [`MathError::NotPositiveDefinite`] as in [`nll`].
pub fn fit_hyperparams(
    data: &WeakRegressionDataset,
    init: &KernelParams,
    nm: &NoiseModel,
    adam: &AdamConfig,
    jitter: f64,
) -> Result<HyperFit, MathError> {
    let mut theta = [init.amplitude.ln(), init.length_scale.ln()];
    let mut current = *init;
    let (mut nll_prev, mut grad) = nll_and_grad(data, init, nm, jitter)?;
    let mut m = [0.0; 2];
    let mut v = [0.0; 2];
    for epoch in 1..=adam.max_epochs {
        if grad[0].abs().max(grad[1].abs()) <= adam.grad_tol {
            return Ok(HyperFit {
                params: current,
                epochs: epoch,
                reason: StopReason::GradientSmall,
                final_nll: nll_prev,
            });
        }
        let t = epoch as i32;
        for i in 0..2 {
            m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * grad[i];
            v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / (1.0 - adam.beta1.powi(t));
            let v_hat = v[i] / (1.0 - adam.beta2.powi(t));
            theta[i] -= adam.learning_rate * m_hat / (v_hat.sqrt() + adam.epsilon);
        }
        let params = KernelParams::from_log(theta[0], theta[1]);
        let (nll_t, grad_t) = nll_and_grad(data, &params, nm, jitter)?;
        let denom = nll_prev.abs().max(nll_t.abs()).max(1.0);
        if (nll_prev - nll_t) / denom <= adam.rel_tol {
            return Ok(HyperFit {
                params,
                epochs: epoch,
                reason: StopReason::RelativeDecrease,
                final_nll: nll_t,
            });
        }
        nll_prev = nll_t;
        grad = grad_t;
        current = params;
    }
    Ok(HyperFit {
        params: current,
        epochs: adam.max_epochs,
        reason: StopReason::MaxEpochs,
        final_nll: nll_prev,
    })
}
