//! Binary GP classifier with symmetric label-flip noise, fitted by
//! expectation propagation (EP) against the weak-label likelihood
//! P(Y~ = y | f) = (2 omega - 1) Phi(y f) + 1 - omega.

use crate::kernel::{kernel_matrix, rbf, KernelParams};
use crate::math::{
    cholesky_factor, dot, std_normal_cdf, std_normal_pdf, CholeskyFactor, MathError, SymMatrix,
};

/// Maximum EP sweeps over all sites.
pub const EP_MAX_SWEEPS: usize = 50;
/// Convergence threshold on the largest site natural-parameter change per
/// sweep.
pub const EP_TOL: f64 = 1e-4;

/// Label-flip noise: an annotation at precision alpha keeps the true label
/// with probability omega_alpha = kappa + gamma alpha.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipNoiseModel {
    pub kappa: f64,
    pub gamma: f64,
}

impl FlipNoiseModel {
    /// Kappa = 0.5 is allowed (the zero-precision annotation is then pure
    /// noise); levels with omega <= 0.5 are dropped at grid construction
    /// and rejected by the dataset, so only informative labels are fitted.
    ///
    /// # Panics
    /// Unless kappa is in [0.5, 1], gamma is nonnegative, and
    /// kappa + gamma <= 1.
    pub fn new(kappa: f64, gamma: f64) -> Self {
        assert!(
            (0.5..=1.0).contains(&kappa),
            "kappa {kappa} outside [0.5, 1]"
        );
        assert!(gamma >= 0.0, "gamma {gamma} must be nonnegative");
        assert!(
            kappa + gamma <= 1.0 + 1e-12,
            "kappa + gamma = {} exceeds 1",
            kappa + gamma
        );
        Self { kappa, gamma }
    }

    /// Keep-probability at precision `alpha`.
    pub fn omega(&self, alpha: f64) -> f64 {
        (self.kappa + self.gamma * alpha).min(1.0)
    }
}

/// Training set of weak labels with their per-annotation keep-probabilities.
#[derive(Debug, Clone)]
pub struct WeakClassificationDataset {
    dim: usize,
    xs: Vec<f64>,
    labels: Vec<i8>,
    omegas: Vec<f64>,
}

impl WeakClassificationDataset {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self {
            dim,
            xs: Vec::new(),
            labels: Vec::new(),
            omegas: Vec::new(),
        }
    }

    /// Appends one annotated point.
    ///
    /// # Panics
    /// If the label is not -1 or +1, or omega is outside (0.5, 1]; at
    /// omega = 0.5 the likelihood carries no label information and the EP
    /// moment updates degenerate.
    pub fn push(&mut self, x: &[f64], label: i8, omega: f64) {
        assert_eq!(x.len(), self.dim, "dimension mismatch");
        assert!(label == -1 || label == 1, "label {label} must be -1 or +1");
        assert!(
            omega > 0.5 && omega <= 1.0,
            "omega {omega} outside (0.5, 1]"
        );
        self.xs.extend_from_slice(x);
        self.labels.push(label);
        self.omegas.push(omega);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }
}

/// Moments of the tilted distribution
/// Z~^{-1} ((2 omega - 1) Phi(y f) + 1 - omega) N(f; mu_cav, var_cav):
/// returns (Z~, mean, variance).
///
/// At omega = 1 this reduces to the standard probit EP moments.
///
/// # Panics
/// If omega is outside (0.5, 1] or var_cav is not positive.
pub fn weak_moments(omega: f64, y: f64, mu_cav: f64, var_cav: f64) -> (f64, f64, f64) {
    assert!(
        omega > 0.5 && omega <= 1.0,
        "omega {omega} outside (0.5, 1]"
    );
    assert!(var_cav > 0.0, "cavity variance {var_cav} must be positive");
    debug_assert!(y == 1.0 || y == -1.0, "label {y} must be -1 or +1");
    let root = (1.0 + var_cav).sqrt();
    let z = y * mu_cav / root;
    let pdf = std_normal_pdf(z);
    let w = 2.0 * omega - 1.0;
    let z_tilde = w * std_normal_cdf(z) + 1.0 - omega;
    let mu_hat = mu_cav + var_cav * w * pdf * y / (z_tilde * root);
    let var_hat = var_cav
        - pdf * var_cav * var_cav * w / (z_tilde * (1.0 + var_cav)) * (z + pdf * w / z_tilde);
    (z_tilde, mu_hat, var_hat)
}

/// Fitted EP posterior: site natural parameters, the Gaussian posterior
/// over the latent values, and a prediction cache.
#[derive(Debug, Clone)]
pub struct EPState {
    dim: usize,
    xs: Vec<f64>,
    kp: KernelParams,
    tau: Vec<f64>,
    nu: Vec<f64>,
    mu: Vec<f64>,
    sigma: SymMatrix,
    converged: bool,
    sweeps_used: usize,
    cavity_skips: usize,
    chol_b: CholeskyFactor,
    sqrt_tau: Vec<f64>,
    z_vec: Vec<f64>,
}

/// Posterior and prediction cache recomputed from the prior and the sites:
/// B = I + S^{1/2} K S^{1/2}, Sigma = K - (S^{1/2} K)^T B^{-1} (S^{1/2} K).
#[allow(clippy::type_complexity)]
fn posterior_from_sites(
    k: &SymMatrix,
    tau: &[f64],
    nu: &[f64],
) -> Result<(SymMatrix, Vec<f64>, CholeskyFactor, Vec<f64>, Vec<f64>), MathError> {
    let n = k.dim();
    let sqrt_tau: Vec<f64> = tau.iter().map(|t| t.sqrt()).collect();
    let b = SymMatrix::from_fn(n, |i, j| {
        let v = sqrt_tau[i] * k.get(i, j) * sqrt_tau[j];
        if i == j {
            v + 1.0
        } else {
            v
        }
    });
    let chol_b = cholesky_factor(&b)?;
    // Columns of V = L^{-1} S^{1/2} K.
    let v_cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let rhs: Vec<f64> = (0..n).map(|i| sqrt_tau[i] * k.get(i, j)).collect();
            chol_b.forward_solve(&rhs)
        })
        .collect();
    let sigma = SymMatrix::from_fn(n, |i, j| k.get(i, j) - dot(&v_cols[i], &v_cols[j]));
    let mu = sigma.mul_vec(nu);
    // z_vec = nu - S^{1/2} B^{-1} S^{1/2} K nu gives predictive means as
    // k_*^T z_vec.
    let t: Vec<f64> = (0..n).map(|i| sqrt_tau[i] * dot(k.row(i), nu)).collect();
    let u = chol_b.solve(&t);
    let z_vec: Vec<f64> = (0..n).map(|i| nu[i] - sqrt_tau[i] * u[i]).collect();
    Ok((sigma, mu, chol_b, sqrt_tau, z_vec))
}

/// Fits the EP posterior with sequential site updates in ascending index
/// order, a rank-one posterior update per site, and a full recompute from
/// the prior at the end of each sweep.
///
/// Sites whose cavity variance would be nonpositive are skipped for the
/// sweep and counted in `cavity_skips`; negative site precisions are
/// clamped to zero.
///
/// # Errors
/// [`MathError::NotPositiveDefinite`] if the posterior refresh fails.
///
/// # Panics
/// If the dataset is empty.
pub fn ep_fit(
    data: &WeakClassificationDataset,
    kp: &KernelParams,
    jitter: f64,
) -> Result<EPState, MathError> {
    assert!(!data.is_empty(), "dataset must be nonempty");
    let n = data.len();
    let k = kernel_matrix(&data.xs, data.dim, kp, jitter);
    let mut tau = vec![0.0; n];
    let mut nu = vec![0.0; n];
    let mut sigma = k.clone();
    let mut mu = vec![0.0; n];
    let mut converged = false;
    let mut sweeps_used = 0;
    let mut cavity_skips = 0;

    for sweep in 1..=EP_MAX_SWEEPS {
        sweeps_used = sweep;
        let mut max_delta = 0.0f64;
        for i in 0..n {
            let s_ii = sigma.get(i, i);
            let tau_cav = 1.0 / s_ii - tau[i];
            let nu_cav = mu[i] / s_ii - nu[i];
            if tau_cav <= 0.0 {
                cavity_skips += 1;
                continue;
            }
            let (_, mu_hat, var_hat) = weak_moments(
                data.omegas[i],
                f64::from(data.labels[i]),
                nu_cav / tau_cav,
                1.0 / tau_cav,
            );
            if !(var_hat > 0.0 && mu_hat.is_finite()) {
                cavity_skips += 1;
                continue;
            }
            let mut tau_new = 1.0 / var_hat - tau_cav;
            let mut nu_new = mu_hat / var_hat - nu_cav;
            if tau_new < 0.0 {
                tau_new = 0.0;
                nu_new = 0.0;
            }
            let dtau = tau_new - tau[i];
            let dnu = nu_new - nu[i];
            let denom = 1.0 + dtau * s_ii;
            if denom <= 1e-12 {
                cavity_skips += 1;
                continue;
            }
            tau[i] = tau_new;
            nu[i] = nu_new;
            max_delta = max_delta.max(dtau.abs()).max(dnu.abs());
            let s_col = sigma.row(i).to_vec();
            let mean_coef = (dnu - dtau * mu[i]) / denom;
            sigma.rank_one_update(-dtau / denom, &s_col);
            for (m, &s) in mu.iter_mut().zip(&s_col) {
                *m += mean_coef * s;
            }
        }
        let refreshed = posterior_from_sites(&k, &tau, &nu)?;
        sigma = refreshed.0;
        mu = refreshed.1;
        if max_delta <= EP_TOL {
            converged = true;
            break;
        }
    }

    let (sigma, mu, chol_b, sqrt_tau, z_vec) = posterior_from_sites(&k, &tau, &nu)?;
    Ok(EPState {
        dim: data.dim,
        xs: data.xs.clone(),
        kp: *kp,
        tau,
        nu,
        mu,
        sigma,
        converged,
        sweeps_used,
        cavity_skips,
        chol_b,
        sqrt_tau,
        z_vec,
    })
}

impl EPState {
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn sweeps_used(&self) -> usize {
        self.sweeps_used
    }

    pub fn cavity_skips(&self) -> usize {
        self.cavity_skips
    }

    pub fn site_precisions(&self) -> &[f64] {
        &self.tau
    }

    pub fn site_means(&self) -> &[f64] {
        &self.nu
    }

    /// Posterior mean of the latent values at the training points.
    pub fn posterior_mean(&self) -> &[f64] {
        &self.mu
    }

    /// Posterior covariance of the latent values at the training points.
    pub fn posterior_cov(&self) -> &SymMatrix {
        &self.sigma
    }

    /// Predictive mean and variance of the latent function at `x`; the
    /// variance is clamped at 0 against roundoff.
    ///
    /// # Panics
    /// On dimension mismatch.
    pub fn predict_latent(&self, x: &[f64]) -> (f64, f64) {
        assert_eq!(x.len(), self.dim, "dimension mismatch");
        let n = self.z_vec.len();
        let k_star: Vec<f64> =
            (0..n).map(|i| rbf(x, &self.xs[i * self.dim..(i + 1) * self.dim], &self.kp)).collect();
        let mean = dot(&k_star, &self.z_vec);
        let scaled: Vec<f64> = k_star
            .iter()
            .zip(&self.sqrt_tau)
            .map(|(k, s)| k * s)
            .collect();
        let v = self.chol_b.forward_solve(&scaled);
        let var = self.kp.amplitude * self.kp.amplitude - dot(&v, &v);
        (mean, var.max(0.0))
    }

    /// Probability that a weak annotation at `x` with keep-probability
    /// `omega` equals +1: (2 omega - 1) Phi(mu / sqrt(1 + var)) + 1 - omega.
    ///
    /// # Panics
    /// If omega is outside (0.5, 1].
    pub fn predict_prob(&self, x: &[f64], omega: f64) -> f64 {
        assert!(
            omega > 0.5 && omega <= 1.0,
            "omega {omega} outside (0.5, 1]"
        );
        let (mean, var) = self.predict_latent(x);
        (2.0 * omega - 1.0) * std_normal_cdf(mean / (1.0 + var).sqrt()) + 1.0 - omega
    }
}
