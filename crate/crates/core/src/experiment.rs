//! Experiment front end: INI-style config parsing with line-precise
//! errors, multi-seed execution across strategies, and quartile
//! aggregation of trajectories onto a common cost grid.

use crate::acquisition::{CostModel, PrecisionGrid};
use crate::active_loop::{
    run, AnnotationOracle, LoopConfig, LoopError, Metric, Strategy, TaskKind, TaskModel,
    TrajectoryLog,
};
use crate::classification::FlipNoiseModel;
use crate::kernel::KernelParams;
use crate::math::RngStream;
use crate::oracles::{
    gen_classification_split, gen_sine_split, load_csv_regression, ClassificationDatasetSpec,
    DataError, PoolTestSplit, RegressionOracle,
};
use crate::regression::{BaseNoise, NoiseModel};
use rayon::prelude::*;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// A rejected config key with its line (0 when the key is missing rather
/// than malformed).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config line {line}: {key}: {reason}")]
pub struct ConfigError {
    pub key: String,
    pub line: usize,
    pub reason: String,
}

fn cerr(key: &str, line: usize, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.to_string(),
        line,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    SineDirect,
    SineFromY,
    CsvFromY,
    Classification1,
    Classification2,
    Classification3,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::SineDirect => "sine_direct",
            DatasetKind::SineFromY => "sine_from_y",
            DatasetKind::CsvFromY => "csv_from_y",
            DatasetKind::Classification1 => "classification_v1",
            DatasetKind::Classification2 => "classification_v2",
            DatasetKind::Classification3 => "classification_v3",
        }
    }

    fn from_name(name: &str) -> Option<DatasetKind> {
        Some(match name {
            "sine_direct" => DatasetKind::SineDirect,
            "sine_from_y" => DatasetKind::SineFromY,
            "csv_from_y" => DatasetKind::CsvFromY,
            "classification_v1" => DatasetKind::Classification1,
            "classification_v2" => DatasetKind::Classification2,
            "classification_v3" => DatasetKind::Classification3,
            _ => return None,
        })
    }

    pub fn task(self) -> TaskKind {
        match self {
            DatasetKind::Classification1
            | DatasetKind::Classification2
            | DatasetKind::Classification3 => TaskKind::Classification,
            _ => TaskKind::Regression,
        }
    }

    fn is_sine(self) -> bool {
        matches!(self, DatasetKind::SineDirect | DatasetKind::SineFromY)
    }

    fn classification_version(self) -> Option<u8> {
        match self {
            DatasetKind::Classification1 => Some(1),
            DatasetKind::Classification2 => Some(2),
            DatasetKind::Classification3 => Some(3),
            _ => None,
        }
    }
}

/// Fully resolved experiment description; [`serialize_config`] round-trips
/// through [`parse_config`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: DatasetKind,
    pub n_points: usize,
    pub sine_frequency: f64,
    pub skewed_pool: bool,
    pub pool_fraction: f64,
    pub csv_path: Option<PathBuf>,
    pub target_column: Option<String>,
    pub amplitude: f64,
    pub length_scale: f64,
    pub jitter: f64,
    pub learn_hyperparams: bool,
    pub hyper_refit_every: usize,
    pub standardize: bool,
    pub gamma: f64,
    pub kappa: f64,
    pub noise: BaseNoise,
    pub strategies: Vec<Strategy>,
    pub grid_levels: usize,
    pub allow_infinite_target_mi: bool,
    pub cost: CostModel,
    pub budget: f64,
    pub initial_size: usize,
    pub repeats: usize,
    pub seed_base: u64,
    pub metric: Metric,
    pub charge_initial: bool,
    pub agg_grid: usize,
}

const SECTIONS: [&str; 5] = ["datasets", "model", "acquisition", "costs", "run"];

struct Fields {
    map: HashMap<(String, String), (String, usize)>,
}

impl Fields {
    fn parse(text: &str) -> Result<Fields, ConfigError> {
        let mut map = HashMap::new();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| cerr(trimmed, line, "malformed section header"))?;
                if !SECTIONS.contains(&name) {
                    return Err(cerr(name, line, "unknown section"));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(cerr(trimmed, line, "expected `key = value`"));
            };
            let key = k.trim().to_string();
            let sec = section
                .clone()
                .ok_or_else(|| cerr(&key, line, "key before any [section] header"))?;
            if map
                .insert((sec, key.clone()), (v.trim().to_string(), line))
                .is_some()
            {
                return Err(cerr(&key, line, "duplicate key"));
            }
        }
        Ok(Fields { map })
    }

    fn take(&mut self, sec: &str, key: &str) -> Option<(String, usize)> {
        self.map.remove(&(sec.to_string(), key.to_string()))
    }

    fn take_parsed<T: std::str::FromStr>(
        &mut self,
        sec: &str,
        key: &str,
        what: &str,
    ) -> Result<Option<(T, usize)>, ConfigError> {
        match self.take(sec, key) {
            None => Ok(None),
            Some((v, line)) => match v.parse() {
                Ok(p) => Ok(Some((p, line))),
                Err(_) => Err(cerr(key, line, format!("expected {what}, got `{v}`"))),
            },
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        if let Some(((sec, key), (_, line))) =
            self.map.into_iter().min_by_key(|(_, (_, line))| *line)
        {
            return Err(cerr(
                &format!("{sec}.{key}"),
                line,
                "unrecognized or inapplicable key",
            ));
        }
        Ok(())
    }
}

/// Reads and validates a config file; relative csv paths resolve against
/// the config's directory.
///
/// # Errors
/// [`ConfigError`] naming the offending key and line.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| cerr("<config>", 0, format!("cannot read {}: {e}", path.display())))?;
    parse_config_text(&text, path.parent().unwrap_or_else(|| Path::new(".")))
}

/// [`parse_config`] over in-memory text, with `base_dir` anchoring relative
/// csv paths.
pub fn parse_config_text(text: &str, base_dir: &Path) -> Result<ExperimentConfig, ConfigError> {
    let mut f = Fields::parse(text)?;

    let kind = match f.take("datasets", "kind") {
        None => return Err(cerr("kind", 0, "missing required key in [datasets]")),
        Some((v, line)) => DatasetKind::from_name(&v)
            .ok_or_else(|| cerr("kind", line, format!("unknown dataset kind `{v}`")))?,
    };
    let task = kind.task();
    let is_csv = kind == DatasetKind::CsvFromY;

    let n_points = if is_csv {
        0
    } else {
        let (n, line) = f
            .take_parsed("datasets", "n_points", "a count")?
            .unwrap_or((8000, 0));
        if n < 10 {
            return Err(cerr("n_points", line, "need at least 10 points"));
        }
        n
    };
    let default_fraction = if is_csv { 0.8 } else { 0.75 };
    let (pool_fraction, pf_line) = f
        .take_parsed("datasets", "pool_fraction", "a real in (0, 1)")?
        .unwrap_or((default_fraction, 0));
    if !(pool_fraction > 0.0 && pool_fraction < 1.0) {
        return Err(cerr("pool_fraction", pf_line, "must be inside (0, 1)"));
    }
    let (sine_frequency, skewed_pool) = if kind.is_sine() {
        let (w, line) = f
            .take_parsed("datasets", "sine_frequency", "a positive real")?
            .unwrap_or((3.0, 0));
        if w <= 0.0 {
            return Err(cerr("sine_frequency", line, "must be positive"));
        }
        let (skew, _) = f
            .take_parsed("datasets", "skewed_pool", "true or false")?
            .unwrap_or((false, 0));
        (w, skew)
    } else {
        (3.0, false)
    };
    let (csv_path, target_column) = if is_csv {
        let (p, line) = f
            .take("datasets", "csv_path")
            .ok_or_else(|| cerr("csv_path", 0, "required for csv_from_y"))?;
        let resolved = {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        if !resolved.is_file() {
            return Err(cerr(
                "csv_path",
                line,
                format!("file not found: {}", resolved.display()),
            ));
        }
        let (t, _) = f
            .take("datasets", "target_column")
            .ok_or_else(|| cerr("target_column", 0, "required for csv_from_y"))?;
        (Some(resolved), Some(t))
    } else {
        (None, None)
    };

    let (amplitude, a_line) = f
        .take_parsed("model", "amplitude", "a positive real")?
        .unwrap_or((1.0, 0));
    if amplitude <= 0.0 {
        return Err(cerr("amplitude", a_line, "must be positive"));
    }
    let default_l = if kind.is_sine() {
        3.0 / sine_frequency
    } else {
        1.0
    };
    let (length_scale, l_line) = f
        .take_parsed("model", "length_scale", "a positive real")?
        .unwrap_or((default_l, 0));
    if length_scale <= 0.0 {
        return Err(cerr("length_scale", l_line, "must be positive"));
    }
    let (jitter, j_line) = f
        .take_parsed("model", "jitter", "a nonnegative real")?
        .unwrap_or((1e-8, 0));
    if jitter < 0.0 {
        return Err(cerr("jitter", j_line, "must be nonnegative"));
    }
    let default_gamma = match task {
        TaskKind::Regression if is_csv => 1.0,
        TaskKind::Regression => 0.09,
        TaskKind::Classification => 0.2,
    };
    let (gamma, g_line) = f
        .take_parsed("model", "gamma", "a positive real")?
        .unwrap_or((default_gamma, 0));
    if gamma <= 0.0 {
        return Err(cerr("gamma", g_line, "must be positive"));
    }

    let mut kappa = 0.8;
    let mut noise = BaseNoise::SineProfile;
    let mut learn_hyperparams = false;
    let mut hyper_refit_every = 1;
    let mut standardize = false;
    match task {
        TaskKind::Classification => {
            let (k, line) = f
                .take_parsed("model", "kappa", "a real in [0.5, 1]")?
                .unwrap_or((0.8, 0));
            if !(0.5..=1.0).contains(&k) {
                return Err(cerr("kappa", line, "must be inside [0.5, 1]"));
            }
            if k + gamma > 1.0 + 1e-12 {
                return Err(cerr(
                    "kappa",
                    line,
                    format!("kappa + gamma = {} exceeds 1", k + gamma),
                ));
            }
            kappa = k;
        }
        TaskKind::Regression => {
            noise = match f.take("model", "noise") {
                None => {
                    if is_csv {
                        BaseNoise::Constant(1e-3)
                    } else {
                        BaseNoise::SineProfile
                    }
                }
                Some((v, line)) => match v.as_str() {
                    "sine_profile" => {
                        if is_csv {
                            return Err(cerr(
                                "noise",
                                line,
                                "csv data uses a constant base-noise floor",
                            ));
                        }
                        BaseNoise::SineProfile
                    }
                    "constant" => {
                        let (c, c_line) = f
                            .take_parsed("model", "noise_const", "a positive real")?
                            .unwrap_or((1e-3, 0));
                        if c <= 0.0 {
                            return Err(cerr("noise_const", c_line, "must be positive"));
                        }
                        BaseNoise::Constant(c)
                    }
                    other => {
                        return Err(cerr(
                            "noise",
                            line,
                            format!("expected sine_profile or constant, got `{other}`"),
                        ))
                    }
                },
            };
            let (lh, _) = f
                .take_parsed("model", "learn_hyperparams", "true or false")?
                .unwrap_or((false, 0));
            learn_hyperparams = lh;
            let (every, e_line) = f
                .take_parsed("model", "hyper_refit_every", "a count")?
                .unwrap_or((1, 0));
            if every < 1 {
                return Err(cerr("hyper_refit_every", e_line, "must be at least 1"));
            }
            hyper_refit_every = every;
            let (st, s_line) = f
                .take_parsed("model", "standardize", "true or false")?
                .unwrap_or((false, 0));
            if st && !matches!(noise, BaseNoise::Constant(_)) {
                return Err(cerr(
                    "standardize",
                    s_line,
                    "requires a constant base-noise profile",
                ));
            }
            standardize = st;
        }
    }

    let (strategies, strategies_line) = match f.take("acquisition", "strategies") {
        None => return Err(cerr("strategies", 0, "missing required key in [acquisition]")),
        Some((v, line)) => {
            let mut list = Vec::new();
            for name in v.split(',') {
                let name = name.trim();
                let s = Strategy::from_name(name)
                    .ok_or_else(|| cerr("strategies", line, format!("unknown strategy `{name}`")))?;
                if !s.compatible_with(task) {
                    return Err(cerr(
                        "strategies",
                        line,
                        format!("{name} is incompatible with {} data", kind.name()),
                    ));
                }
                if list.contains(&s) {
                    return Err(cerr("strategies", line, format!("duplicate strategy `{name}`")));
                }
                list.push(s);
            }
            if list.is_empty() {
                return Err(cerr("strategies", line, "need at least one strategy"));
            }
            (list, line)
        }
    };
    let (grid_levels, gl_line) = f
        .take_parsed("acquisition", "grid_levels", "a count")?
        .unwrap_or((11, 0));
    if grid_levels < 1 {
        return Err(cerr("grid_levels", gl_line, "need at least one level"));
    }
    let (allow_infinite_target_mi, _) = f
        .take_parsed("acquisition", "allow_infinite_target_mi", "true or false")?
        .unwrap_or((false, 0));
    if strategies.contains(&Strategy::MiWeakTargetB)
        && !allow_infinite_target_mi
        && grid_levels == 1
    {
        return Err(cerr(
            "strategies",
            strategies_line,
            "mi_weak_target_b needs a beta > 0 level (raise grid_levels or allow_infinite_target_mi)",
        ));
    }

    let (cost_name, cost_line) = match f.take("costs", "kind") {
        None => (
            match task {
                TaskKind::Regression => "power".to_string(),
                TaskKind::Classification => "linear".to_string(),
            },
            0,
        ),
        Some((v, line)) => (v, line),
    };
    let cost = match (task, cost_name.as_str()) {
        (TaskKind::Regression, "power") => {
            let (c, c_line) = f
                .take_parsed("costs", "c", "a nonnegative real")?
                .unwrap_or((9.0, 0));
            if c < 0.0 {
                return Err(cerr("c", c_line, "must be nonnegative"));
            }
            let (q, q_line) = f
                .take_parsed("costs", "q", "a nonnegative real")?
                .unwrap_or((1.0, 0));
            if q < 0.0 {
                return Err(cerr("q", q_line, "must be nonnegative"));
            }
            CostModel::Power { c, q, gamma }
        }
        (TaskKind::Classification, "linear") => {
            let (b, b_line) = f
                .take_parsed("costs", "b", "a positive real")?
                .unwrap_or((0.1, 0));
            if b <= 0.0 {
                return Err(cerr("b", b_line, "must be positive"));
            }
            let (c, c_line) = f
                .take_parsed("costs", "c", "a nonnegative real")?
                .unwrap_or((0.9, 0));
            if c < 0.0 {
                return Err(cerr("c", c_line, "must be nonnegative"));
            }
            CostModel::Linear { b, c }
        }
        (TaskKind::Regression, "linear") => {
            return Err(cerr(
                "kind",
                cost_line,
                "linear costs pair with classification data",
            ));
        }
        (TaskKind::Classification, "power") => {
            return Err(cerr(
                "kind",
                cost_line,
                "power costs pair with regression data",
            ));
        }
        (_, other) => {
            return Err(cerr(
                "kind",
                cost_line,
                format!("expected power or linear, got `{other}`"),
            ));
        }
    };

    let (budget, b_line) = f
        .take_parsed("run", "budget", "a positive real")?
        .unwrap_or((50.0, 0));
    if budget <= 0.0 {
        return Err(cerr("budget", b_line, "must be positive"));
    }
    let default_initial = match kind {
        DatasetKind::CsvFromY => 20,
        k if k.task() == TaskKind::Classification => 5,
        _ => 10,
    };
    let (initial_size, i_line) = f
        .take_parsed("run", "initial_size", "a count")?
        .unwrap_or((default_initial, 0));
    if initial_size < 1 {
        return Err(cerr("initial_size", i_line, "must be at least 1"));
    }
    let (repeats, r_line) = f
        .take_parsed("run", "repeats", "a count")?
        .unwrap_or((15, 0));
    if repeats < 1 {
        return Err(cerr("repeats", r_line, "must be at least 1"));
    }
    let (seed_base, _) = f
        .take_parsed("run", "seed_base", "an unsigned integer")?
        .unwrap_or((0u64, 0));
    let metric = match f.take("run", "metric") {
        None => match task {
            TaskKind::Regression => Metric::Mse,
            TaskKind::Classification => Metric::Accuracy,
        },
        Some((v, line)) => match v.as_str() {
            "mse" if task == TaskKind::Regression => Metric::Mse,
            "accuracy" if task == TaskKind::Classification => Metric::Accuracy,
            "mse" | "accuracy" => {
                return Err(cerr("metric", line, format!("`{v}` does not fit {} data", kind.name())))
            }
            other => return Err(cerr("metric", line, format!("expected mse or accuracy, got `{other}`"))),
        },
    };
    let (charge_initial, _) = f
        .take_parsed("run", "charge_initial", "true or false")?
        .unwrap_or((false, 0));
    let (agg_grid, ag_line) = f
        .take_parsed("run", "agg_grid", "a count")?
        .unwrap_or((100, 0));
    if agg_grid < 1 {
        return Err(cerr("agg_grid", ag_line, "need at least one grid point"));
    }

    f.finish()?;
    Ok(ExperimentConfig {
        kind,
        n_points,
        sine_frequency,
        skewed_pool,
        pool_fraction,
        csv_path,
        target_column,
        amplitude,
        length_scale,
        jitter,
        learn_hyperparams,
        hyper_refit_every,
        standardize,
        gamma,
        kappa,
        noise,
        strategies,
        grid_levels,
        allow_infinite_target_mi,
        cost,
        budget,
        initial_size,
        repeats,
        seed_base,
        metric,
        charge_initial,
        agg_grid,
    })
}

/// Canonical text form of a config: every applicable key explicit, so
/// parsing it back reproduces the struct exactly.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let mut s = String::from("[datasets]\n");
    writeln!(s, "kind = {}", cfg.kind.name()).unwrap();
    if let Some(p) = &cfg.csv_path {
        writeln!(s, "csv_path = {}", p.display()).unwrap();
        writeln!(s, "target_column = {}", cfg.target_column.as_deref().unwrap_or("")).unwrap();
    } else {
        writeln!(s, "n_points = {}", cfg.n_points).unwrap();
    }
    if cfg.kind.is_sine() {
        writeln!(s, "sine_frequency = {}", cfg.sine_frequency).unwrap();
        writeln!(s, "skewed_pool = {}", cfg.skewed_pool).unwrap();
    }
    writeln!(s, "pool_fraction = {}", cfg.pool_fraction).unwrap();

    writeln!(s, "\n[model]").unwrap();
    writeln!(s, "amplitude = {}", cfg.amplitude).unwrap();
    writeln!(s, "length_scale = {}", cfg.length_scale).unwrap();
    writeln!(s, "jitter = {}", cfg.jitter).unwrap();
    writeln!(s, "gamma = {}", cfg.gamma).unwrap();
    match cfg.kind.task() {
        TaskKind::Classification => {
            writeln!(s, "kappa = {}", cfg.kappa).unwrap();
        }
        TaskKind::Regression => {
            match cfg.noise {
                BaseNoise::SineProfile => writeln!(s, "noise = sine_profile").unwrap(),
                BaseNoise::Constant(v) => {
                    writeln!(s, "noise = constant").unwrap();
                    writeln!(s, "noise_const = {v}").unwrap();
                }
            }
            writeln!(s, "learn_hyperparams = {}", cfg.learn_hyperparams).unwrap();
            writeln!(s, "hyper_refit_every = {}", cfg.hyper_refit_every).unwrap();
            writeln!(s, "standardize = {}", cfg.standardize).unwrap();
        }
    }

    writeln!(s, "\n[acquisition]").unwrap();
    let names: Vec<&str> = cfg.strategies.iter().map(|st| st.name()).collect();
    writeln!(s, "strategies = {}", names.join(", ")).unwrap();
    writeln!(s, "grid_levels = {}", cfg.grid_levels).unwrap();
    writeln!(s, "allow_infinite_target_mi = {}", cfg.allow_infinite_target_mi).unwrap();

    writeln!(s, "\n[costs]").unwrap();
    match cfg.cost {
        CostModel::Power { c, q, .. } => {
            writeln!(s, "kind = power").unwrap();
            writeln!(s, "c = {c}").unwrap();
            writeln!(s, "q = {q}").unwrap();
        }
        CostModel::Linear { b, c } => {
            writeln!(s, "kind = linear").unwrap();
            writeln!(s, "b = {b}").unwrap();
            writeln!(s, "c = {c}").unwrap();
        }
    }

    writeln!(s, "\n[run]").unwrap();
    writeln!(s, "budget = {}", cfg.budget).unwrap();
    writeln!(s, "initial_size = {}", cfg.initial_size).unwrap();
    writeln!(s, "repeats = {}", cfg.repeats).unwrap();
    writeln!(s, "seed_base = {}", cfg.seed_base).unwrap();
    writeln!(
        s,
        "metric = {}",
        match cfg.metric {
            Metric::Mse => "mse",
            Metric::Accuracy => "accuracy",
        }
    )
    .unwrap();
    writeln!(s, "charge_initial = {}", cfg.charge_initial).unwrap();
    writeln!(s, "agg_grid = {}", cfg.agg_grid).unwrap();
    s
}

/// Builds the per-seed dataset and its annotation oracle.
///
/// # Errors
/// [`DataError`] from csv ingestion.
pub fn build_dataset(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(PoolTestSplit, AnnotationOracle), DataError> {
    let mut rng = RngStream::new(seed);
    match cfg.kind {
        DatasetKind::SineDirect => {
            let split = gen_sine_split(
                cfg.n_points,
                cfg.sine_frequency,
                cfg.skewed_pool,
                cfg.pool_fraction,
                &mut rng,
            );
            let oracle = AnnotationOracle::Regression(RegressionOracle::SineDirect {
                omega: cfg.sine_frequency,
                noise: NoiseModel::new(cfg.noise, cfg.gamma),
            });
            Ok((split, oracle))
        }
        DatasetKind::SineFromY => {
            let split = gen_sine_split(
                cfg.n_points,
                cfg.sine_frequency,
                cfg.skewed_pool,
                cfg.pool_fraction,
                &mut rng,
            );
            let oracle =
                AnnotationOracle::Regression(RegressionOracle::sine_from_y(cfg.gamma, &split));
            Ok((split, oracle))
        }
        DatasetKind::CsvFromY => {
            let split = load_csv_regression(
                cfg.csv_path.as_deref().expect("validated csv path"),
                cfg.target_column.as_deref().expect("validated target column"),
                &mut rng,
                cfg.pool_fraction,
            )?;
            let oracle =
                AnnotationOracle::Regression(RegressionOracle::csv_from_y(cfg.gamma, &split));
            Ok((split, oracle))
        }
        _ => {
            let spec = ClassificationDatasetSpec {
                version: cfg.kind.classification_version().unwrap(),
                n_points: cfg.n_points,
                noise: FlipNoiseModel::new(cfg.kappa, cfg.gamma),
                pool_fraction: cfg.pool_fraction,
            };
            Ok((
                gen_classification_split(&spec, &mut rng),
                AnnotationOracle::Classification,
            ))
        }
    }
}

/// The per-run loop configuration for one strategy of this experiment.
pub fn loop_config(cfg: &ExperimentConfig, strategy: Strategy) -> LoopConfig {
    let task = match cfg.kind.task() {
        TaskKind::Regression => TaskModel::Regression {
            noise: NoiseModel::new(cfg.noise, cfg.gamma),
            learn_hyperparams: cfg.learn_hyperparams,
            hyper_refit_every: cfg.hyper_refit_every,
            standardize: cfg.standardize,
        },
        TaskKind::Classification => TaskModel::Classification {
            flip: FlipNoiseModel::new(cfg.kappa, cfg.gamma),
        },
    };
    let grid = match cfg.kind.task() {
        TaskKind::Regression => PrecisionGrid::regression(cfg.gamma, cfg.grid_levels),
        TaskKind::Classification => PrecisionGrid::classification(
            &FlipNoiseModel::new(cfg.kappa, cfg.gamma),
            cfg.grid_levels,
        ),
    };
    LoopConfig {
        task,
        strategy,
        budget: cfg.budget,
        initial_size: cfg.initial_size,
        grid,
        cost: cfg.cost,
        kernel: KernelParams::new(cfg.amplitude, cfg.length_scale),
        jitter: cfg.jitter,
        metric: cfg.metric,
        charge_initial: cfg.charge_initial,
        allow_infinite_target_mi: cfg.allow_infinite_target_mi,
    }
}

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("no trajectories to aggregate")]
    EmptyInput,
    #[error("trajectory cost ranges do not overlap")]
    DegenerateRange,
}

/// Pointwise quartiles of a strategy's runs on a shared cost grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuartileCurve {
    pub strategy: String,
    pub costs: Vec<f64>,
    pub q1: Vec<f64>,
    pub median: Vec<f64>,
    pub q3: Vec<f64>,
}

impl QuartileCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cost,q1,median,q3\n");
        for i in 0..self.costs.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.costs[i], self.q1[i], self.median[i], self.q3[i]
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn lin_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Piecewise-linear interpolation on a nondecreasing cost axis; exact at
/// the nodes.
fn interp(points: &[(f64, f64)], x: f64) -> f64 {
    let x = x.clamp(points[0].0, points[points.len() - 1].0);
    match points.binary_search_by(|&(c, _)| c.partial_cmp(&x).unwrap()) {
        Ok(i) => points[i].1,
        Err(i) => {
            let (x0, y0) = points[i - 1];
            let (x1, y1) = points[i];
            y0 + (x - x0) / (x1 - x0) * (y1 - y0)
        }
    }
}

/// Order-statistic quantile with inclusive linear interpolation at
/// position p (n - 1).
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Interpolates every run's (cost, metric) steps onto a common `grid_size`
/// cost grid spanning [max of per-run minima, min of per-run maxima] and
/// takes pointwise quartiles.
///
/// # Errors
/// [`AggregateError::EmptyInput`] without runs (or with an empty run);
/// [`AggregateError::DegenerateRange`] when the ranges do not overlap.
pub fn aggregate(
    strategy: &str,
    runs: &[Vec<(f64, f64)>],
    grid_size: usize,
) -> Result<QuartileCurve, AggregateError> {
    if runs.is_empty() || runs.iter().any(Vec::is_empty) {
        return Err(AggregateError::EmptyInput);
    }
    let lo = runs
        .iter()
        .map(|r| r[0].0)
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = runs
        .iter()
        .map(|r| r[r.len() - 1].0)
        .fold(f64::INFINITY, f64::min);
    if hi < lo {
        return Err(AggregateError::DegenerateRange);
    }
    let costs = lin_grid(lo, hi, grid_size);
    let mut q1 = Vec::with_capacity(costs.len());
    let mut median = Vec::with_capacity(costs.len());
    let mut q3 = Vec::with_capacity(costs.len());
    for &c in &costs {
        let mut values: Vec<f64> = runs.iter().map(|r| interp(r, c)).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        q1.push(quantile(&values, 0.25));
        median.push(quantile(&values, 0.5));
        q3.push(quantile(&values, 0.75));
    }
    Ok(QuartileCurve {
        strategy: strategy.to_string(),
        costs,
        q1,
        median,
        q3,
    })
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("run {strategy} seed {seed}: {source}")]
    Run {
        strategy: &'static str,
        seed: u64,
        #[source]
        source: LoopError,
    },
    #[error("aggregating {strategy}: {source}")]
    Agg {
        strategy: String,
        #[source]
        source: AggregateError,
    },
}

/// One run's (cumulative_cost, metric) sequence.
type CostMetricSeries = Vec<(f64, f64)>;

fn cost_metric_pairs(log: &TrajectoryLog) -> CostMetricSeries {
    log.records
        .iter()
        .map(|r| (r.cumulative_cost, r.metric))
        .collect()
}

/// Runs repeats x strategies trajectories (in parallel up to `workers`,
/// default all cores), writing per-run `traj_{strategy}_{seed}.csv`, per-
/// strategy `agg_{strategy}.csv`, the resolved config, and an `INCOMPLETE`
/// marker that is removed only on success. Reruns with the same config are
/// byte-identical.
///
/// Each repeat r draws its dataset with seed `seed_base + r` and every
/// strategy reuses that split (paired comparisons).
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    workers: Option<usize>,
) -> Result<(), ExperimentError> {
    fs::create_dir_all(out_dir)?;
    let marker = out_dir.join("INCOMPLETE");
    fs::write(&marker, "experiment in progress or failed; outputs may be partial\n")?;
    fs::write(out_dir.join("config_resolved.ini"), serialize_config(cfg))?;

    let mut datasets = Vec::with_capacity(cfg.repeats);
    for rep in 0..cfg.repeats {
        datasets.push(build_dataset(cfg, cfg.seed_base + rep as u64)?);
    }
    let jobs: Vec<(Strategy, usize)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| (0..cfg.repeats).map(move |r| (s, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .expect("thread pool");
    let logs: Result<Vec<TrajectoryLog>, ExperimentError> = pool.install(|| {
        jobs.par_iter()
            .map(|&(strategy, rep)| {
                let (split, oracle) = &datasets[rep];
                let seed = cfg.seed_base + rep as u64;
                run(&loop_config(cfg, strategy), split, oracle, seed).map_err(|source| {
                    ExperimentError::Run {
                        strategy: strategy.name(),
                        seed,
                        source,
                    }
                })
            })
            .collect()
    });
    let logs = logs?;

    for log in &logs {
        let name = format!("traj_{}_{}.csv", log.strategy.name(), log.seed);
        log.write_csv(&out_dir.join(name))?;
    }
    for (si, &strategy) in cfg.strategies.iter().enumerate() {
        let runs: Vec<Vec<(f64, f64)>> = logs[si * cfg.repeats..(si + 1) * cfg.repeats]
            .iter()
            .map(cost_metric_pairs)
            .collect();
        let curve = aggregate(strategy.name(), &runs, cfg.agg_grid).map_err(|source| {
            ExperimentError::Agg {
                strategy: strategy.name().to_string(),
                source,
            }
        })?;
        curve.write_csv(&out_dir.join(format!("agg_{}.csv", strategy.name())))?;
    }
    fs::remove_file(&marker)?;
    Ok(())
}

/// Aggregates all `traj_*.csv` files found in `dir` (grouped by strategy,
/// filenames sorted for determinism) and writes `agg_{strategy}.csv` next
/// to them.
pub fn aggregate_dir(dir: &Path, grid_size: usize) -> Result<Vec<QuartileCurve>, ExperimentError> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.starts_with("traj_") && n.ends_with(".csv"))
        .collect();
    names.sort();
    let mut groups: Vec<(String, Vec<CostMetricSeries>)> = Vec::new();
    for name in &names {
        let log = TrajectoryLog::read_csv(&dir.join(name))?;
        let pairs = cost_metric_pairs(&log);
        let key = log.strategy.name();
        match groups.iter_mut().find(|(s, _)| s == key) {
            Some((_, v)) => v.push(pairs),
            None => groups.push((key.to_string(), vec![pairs])),
        }
    }
    if groups.is_empty() {
        return Err(ExperimentError::Agg {
            strategy: "(none)".to_string(),
            source: AggregateError::EmptyInput,
        });
    }
    let mut curves = Vec::new();
    for (name, runs) in &groups {
        let curve = aggregate(name, runs, grid_size).map_err(|source| ExperimentError::Agg {
            strategy: name.clone(),
            source,
        })?;
        curve.write_csv(&dir.join(format!("agg_{name}.csv")))?;
        curves.push(curve);
    }
    Ok(curves)
}
