//! Python bindings: acquisition scores as free functions, the two GP models
//! as classes, and the experiment runner. Build with
//! `cargo build -p weakgp-py` and load the produced `libweakgp.so` as the
//! module `weakgp` (see python/smoke_test.py).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use std::path::{Path, PathBuf};

use weakgp_core::acquisition as acq;
use weakgp_core::classification::{
    ep_fit, weak_moments as weak_moments_rs, EPState, FlipNoiseModel, WeakClassificationDataset,
};
use weakgp_core::experiment::{parse_config, run_experiment as run_experiment_rs, serialize_config};
use weakgp_core::kernel::KernelParams;
use weakgp_core::math::std_normal_cdf;
use weakgp_core::regression::{
    fit, fit_hyperparams, nll, AdamConfig, BaseNoise, FittedRegressor, NoiseModel,
    WeakRegressionDataset,
};

fn value_err(msg: String) -> PyErr {
    PyValueError::new_err(msg)
}

fn runtime_err(msg: String) -> PyErr {
    PyRuntimeError::new_err(msg)
}

/// MI between a clean annotation and the latent function, in nats.
#[pyfunction]
fn bald(v: f64, s: f64) -> f64 {
    acq::bald(v, s)
}

/// MI between a weak annotation at noise add-on `beta` and the latent
/// function, in nats.
#[pyfunction]
fn mi_weak_model(v: f64, s: f64, beta: f64) -> f64 {
    acq::mi_weak_model(v, s, beta)
}

/// MI between a weak annotation and the clean target when the annotation
/// noise is independent of the target, in nats.
#[pyfunction]
fn mi_weak_target_b(v: f64, s: f64, beta: f64) -> f64 {
    acq::mi_weak_target_b(v, s, beta)
}

/// MI between a weak annotation and the clean target when the annotation
/// adds noise on top of the target, in nats.
#[pyfunction]
fn mi_weak_target_c(v: f64, s: f64, beta: f64) -> f64 {
    acq::mi_weak_target_c(v, s, beta)
}

/// MI between a clean label and the latent function, in bits.
#[pyfunction]
fn bald_classification(mu: f64, var: f64) -> f64 {
    acq::bald_classification(mu, var)
}

/// MI between a weak label with keep-probability `omega` and the latent
/// function, in bits.
#[pyfunction]
fn mi_weak_model_classification(mu: f64, var: f64, omega: f64) -> f64 {
    acq::mi_weak_model_classification(mu, var, omega)
}

/// MI between a weak label and the clean label, in bits.
#[pyfunction]
fn mi_weak_target_classification(mu: f64, var: f64, omega: f64) -> f64 {
    acq::mi_weak_target_classification(mu, var, omega)
}

/// Moments of the weak-probit site update: returns (normalizer, mean,
/// variance) of the tilted distribution.
#[pyfunction]
fn weak_moments(omega: f64, y: f64, mu_cav: f64, var_cav: f64) -> PyResult<(f64, f64, f64)> {
    if !(omega > 0.5 && omega <= 1.0) {
        return Err(value_err(format!("omega {omega} outside (0.5, 1]")));
    }
    if y != 1.0 && y != -1.0 {
        return Err(value_err(format!("label {y} must be -1 or +1")));
    }
    if var_cav <= 0.0 {
        return Err(value_err(format!("cavity variance {var_cav} must be positive")));
    }
    Ok(weak_moments_rs(omega, y, mu_cav, var_cav))
}

/// Exact GP regressor over weak annotations with per-point noise add-ons.
#[pyclass]
struct GpRegressor {
    data: WeakRegressionDataset,
    kp: KernelParams,
    nm: NoiseModel,
    jitter: f64,
    fitted: Option<FittedRegressor>,
}

impl GpRegressor {
    fn require_fitted(&self) -> PyResult<&FittedRegressor> {
        self.fitted
            .as_ref()
            .ok_or_else(|| runtime_err("call fit() first".to_string()))
    }

    fn check_x(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.data.dim() {
            return Err(value_err(format!(
                "input has {} coordinates, model expects {}",
                x.len(),
                self.data.dim()
            )));
        }
        Ok(())
    }
}

#[pymethods]
impl GpRegressor {
    /// `noise_variance = None` selects the synthetic sine benchmark's
    /// input-dependent profile instead of a constant.
    #[new]
    #[pyo3(signature = (dim=1, amplitude=1.0, length_scale=1.0, gamma=1.0,
                        noise_variance=1e-3, jitter=1e-8))]
    fn new(
        dim: usize,
        amplitude: f64,
        length_scale: f64,
        gamma: f64,
        noise_variance: Option<f64>,
        jitter: f64,
    ) -> PyResult<Self> {
        if dim == 0 {
            return Err(value_err("dimension must be positive".to_string()));
        }
        if amplitude <= 0.0 || length_scale <= 0.0 {
            return Err(value_err(format!(
                "kernel parameters ({amplitude}, {length_scale}) must be positive"
            )));
        }
        if gamma <= 0.0 {
            return Err(value_err(format!("gamma {gamma} must be positive")));
        }
        if jitter < 0.0 {
            return Err(value_err(format!("jitter {jitter} must be nonnegative")));
        }
        let base = match noise_variance {
            Some(v) if v <= 0.0 => {
                return Err(value_err(format!("noise variance {v} must be positive")))
            }
            Some(v) => BaseNoise::Constant(v),
            None => BaseNoise::SineProfile,
        };
        Ok(Self {
            data: WeakRegressionDataset::new(dim),
            kp: KernelParams {
                amplitude,
                length_scale,
            },
            nm: NoiseModel::new(base, gamma),
            jitter,
            fitted: None,
        })
    }

    /// Adds one annotation acquired with noise add-on `beta`; invalidates
    /// any previous fit.
    fn add(&mut self, x: Vec<f64>, y: f64, beta: f64) -> PyResult<()> {
        self.check_x(&x)?;
        if !(0.0..=self.nm.gamma).contains(&beta) {
            return Err(value_err(format!(
                "beta {beta} outside [0, {}]",
                self.nm.gamma
            )));
        }
        self.data.push(&x, y, beta);
        self.fitted = None;
        Ok(())
    }

    fn fit(&mut self) -> PyResult<()> {
        let model = fit(&self.data, &self.kp, &self.nm, self.jitter)
            .map_err(|e| runtime_err(e.to_string()))?;
        self.fitted = Some(model);
        Ok(())
    }

    /// Posterior (mean, variance) of the latent function at `x`.
    fn predict(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        self.check_x(&x)?;
        Ok(self.require_fitted()?.predict_latent(&x))
    }

    /// Predictive (mean, variance) of a weak annotation at `x` with noise
    /// add-on `beta`.
    fn predict_weak(&self, x: Vec<f64>, beta: f64) -> PyResult<(f64, f64)> {
        self.check_x(&x)?;
        if !(0.0..=self.nm.gamma).contains(&beta) {
            return Err(value_err(format!(
                "beta {beta} outside [0, {}]",
                self.nm.gamma
            )));
        }
        Ok(self.require_fitted()?.predict_weak(&x, beta))
    }

    /// Marginal negative log-likelihood (up to a constant) at the current
    /// kernel parameters.
    fn nll(&self) -> PyResult<f64> {
        if self.data.is_empty() {
            return Err(runtime_err("dataset is empty".to_string()));
        }
        nll(&self.data, &self.kp, &self.nm, self.jitter).map_err(|e| runtime_err(e.to_string()))
    }

    /// Optimizes (amplitude, length_scale) by Adam on the log-parameters,
    /// updates the model, and returns the new values with the epoch count.
    #[pyo3(signature = (max_epochs=100))]
    fn optimize_hyperparams(&mut self, max_epochs: usize) -> PyResult<(f64, f64, usize)> {
        if self.data.is_empty() {
            return Err(runtime_err("dataset is empty".to_string()));
        }
        let adam = AdamConfig {
            max_epochs,
            ..AdamConfig::default()
        };
        let result = fit_hyperparams(&self.data, &self.kp, &self.nm, &adam, self.jitter)
            .map_err(|e| runtime_err(e.to_string()))?;
        self.kp = result.params;
        self.fitted = None;
        Ok((self.kp.amplitude, self.kp.length_scale, result.epochs))
    }

    #[getter]
    fn amplitude(&self) -> f64 {
        self.kp.amplitude
    }

    #[getter]
    fn length_scale(&self) -> f64 {
        self.kp.length_scale
    }

    fn __len__(&self) -> usize {
        self.data.len()
    }
}

/// GP classifier over weak labels, fitted by expectation propagation.
#[pyclass]
struct GpClassifier {
    data: WeakClassificationDataset,
    flip: FlipNoiseModel,
    kp: KernelParams,
    jitter: f64,
    state: Option<EPState>,
}

impl GpClassifier {
    fn require_fitted(&self) -> PyResult<&EPState> {
        self.state
            .as_ref()
            .ok_or_else(|| runtime_err("call fit() first".to_string()))
    }

    fn check_x(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.data.dim() {
            return Err(value_err(format!(
                "input has {} coordinates, model expects {}",
                x.len(),
                self.data.dim()
            )));
        }
        Ok(())
    }
}

#[pymethods]
impl GpClassifier {
    #[new]
    #[pyo3(signature = (dim=2, kappa=0.8, gamma=0.2, amplitude=1.0,
                        length_scale=1.0, jitter=1e-8))]
    fn new(
        dim: usize,
        kappa: f64,
        gamma: f64,
        amplitude: f64,
        length_scale: f64,
        jitter: f64,
    ) -> PyResult<Self> {
        if dim == 0 {
            return Err(value_err("dimension must be positive".to_string()));
        }
        if !(0.5..=1.0).contains(&kappa) || gamma < 0.0 || kappa + gamma > 1.0 + 1e-12 {
            return Err(value_err(format!(
                "flip-noise parameters kappa={kappa}, gamma={gamma} invalid: \
                 need kappa in [0.5, 1], gamma >= 0, kappa + gamma <= 1"
            )));
        }
        if amplitude <= 0.0 || length_scale <= 0.0 {
            return Err(value_err(format!(
                "kernel parameters ({amplitude}, {length_scale}) must be positive"
            )));
        }
        if jitter < 0.0 {
            return Err(value_err(format!("jitter {jitter} must be nonnegative")));
        }
        Ok(Self {
            data: WeakClassificationDataset::new(dim),
            flip: FlipNoiseModel::new(kappa, gamma),
            kp: KernelParams {
                amplitude,
                length_scale,
            },
            jitter,
            state: None,
        })
    }

    /// Keep-probability of a label annotated at precision `alpha`.
    fn omega(&self, alpha: f64) -> PyResult<f64> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(value_err(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(self.flip.omega(alpha))
    }

    /// Adds one weak label annotated at precision `alpha`; invalidates any
    /// previous fit. The precision must give a keep-probability above 0.5.
    fn add(&mut self, x: Vec<f64>, label: i8, alpha: f64) -> PyResult<()> {
        self.check_x(&x)?;
        if label != 1 && label != -1 {
            return Err(value_err(format!("label {label} must be -1 or +1")));
        }
        let omega = self.omega(alpha)?;
        if omega <= 0.5 {
            return Err(value_err(format!(
                "alpha {alpha} gives keep-probability {omega}, which carries no signal"
            )));
        }
        self.data.push(&x, label, omega);
        self.state = None;
        Ok(())
    }

    fn fit(&mut self) -> PyResult<()> {
        if self.data.is_empty() {
            return Err(runtime_err("dataset is empty".to_string()));
        }
        let state = ep_fit(&self.data, &self.kp, self.jitter)
            .map_err(|e| runtime_err(e.to_string()))?;
        self.state = Some(state);
        Ok(())
    }

    /// Posterior (mean, variance) of the latent function at `x`.
    fn predict_latent(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        self.check_x(&x)?;
        Ok(self.require_fitted()?.predict_latent(&x))
    }

    /// Probability that the clean label at `x` is +1.
    fn predict_proba(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check_x(&x)?;
        let (mu, var) = self.require_fitted()?.predict_latent(&x);
        Ok(std_normal_cdf(mu / (1.0 + var).sqrt()))
    }

    #[getter]
    fn converged(&self) -> PyResult<bool> {
        Ok(self.require_fitted()?.converged())
    }

    #[getter]
    fn sweeps(&self) -> PyResult<usize> {
        Ok(self.require_fitted()?.sweeps_used())
    }

    fn __len__(&self) -> usize {
        self.data.len()
    }
}

/// Parses a config file and returns its fully resolved form.
#[pyfunction]
fn validate_config(path: PathBuf) -> PyResult<String> {
    let cfg = parse_config(&path).map_err(|e| value_err(e.to_string()))?;
    Ok(serialize_config(&cfg))
}

/// Runs every strategy x repeat of a config, writing trajectory and
/// aggregate CSVs into `out_dir`.
#[pyfunction]
#[pyo3(signature = (config, out_dir, workers=None))]
fn run_experiment(config: PathBuf, out_dir: PathBuf, workers: Option<usize>) -> PyResult<()> {
    let cfg = parse_config(&config).map_err(|e| value_err(e.to_string()))?;
    run_experiment_rs(&cfg, Path::new(&out_dir), workers).map_err(|e| runtime_err(e.to_string()))
}

#[pymodule]
fn weakgp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(bald, m)?)?;
    m.add_function(wrap_pyfunction!(mi_weak_model, m)?)?;
    m.add_function(wrap_pyfunction!(mi_weak_target_b, m)?)?;
    m.add_function(wrap_pyfunction!(mi_weak_target_c, m)?)?;
    m.add_function(wrap_pyfunction!(bald_classification, m)?)?;
    m.add_function(wrap_pyfunction!(mi_weak_model_classification, m)?)?;
    m.add_function(wrap_pyfunction!(mi_weak_target_classification, m)?)?;
    m.add_function(wrap_pyfunction!(weak_moments, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<GpRegressor>()?;
    m.add_class::<GpClassifier>()?;
    Ok(())
}
