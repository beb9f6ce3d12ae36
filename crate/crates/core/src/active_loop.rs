//! The budgeted acquisition loop: fit, score pool x precision grid, select,
//! annotate, append, and evaluate, with budget accounting and trajectory
//! logging.

use crate::acquisition::{
    bald_classification, mi_weak_model, mi_weak_model_classification, mi_weak_target_b,
    mi_weak_target_c, mi_weak_target_classification, select, CostModel, GridKind, PrecisionGrid,
};
use crate::classification::{ep_fit, EPState, FlipNoiseModel, WeakClassificationDataset};
use crate::kernel::{rbf, KernelParams};
use crate::math::{dot, MathError, RngStream};
use crate::oracles::{
    annotate_classification, annotate_regression, DataError, PoolTestSplit, RegressionOracle,
};
use crate::regression::{
    fit, fit_hyperparams, AdamConfig, BaseNoise, FittedRegressor, NoiseModel,
    WeakRegressionDataset,
};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Errors surfaced by a run, with the iteration they occurred in.
#[derive(Debug, Error)]
pub enum LoopError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("initial sample of {needed} exceeds pool size {pool}")]
    PoolTooSmall { pool: usize, needed: usize },
    #[error("iteration {iteration}: fit failed: {source}")]
    Fit {
        iteration: usize,
        #[source]
        source: MathError,
    },
    #[error("iteration {iteration}: annotation failed: {source}")]
    Annotation {
        iteration: usize,
        #[source]
        source: DataError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification,
}

/// Acquisition strategies. `Random` and `Bald` are the non-cost-aware
/// baselines and always annotate at maximum precision; the `Mi*` strategies
/// maximize information per cost over the full precision grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Random,
    Bald,
    MiWeakModel,
    MiWeakTargetB,
    MiWeakTargetC,
    MiWeakTargetCls,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Bald => "bald",
            Strategy::MiWeakModel => "mi_weak_model",
            Strategy::MiWeakTargetB => "mi_weak_target_b",
            Strategy::MiWeakTargetC => "mi_weak_target_c",
            Strategy::MiWeakTargetCls => "mi_weak_target_cls",
        }
    }

    pub fn from_name(name: &str) -> Option<Strategy> {
        Some(match name {
            "random" => Strategy::Random,
            "bald" => Strategy::Bald,
            "mi_weak_model" => Strategy::MiWeakModel,
            "mi_weak_target_b" => Strategy::MiWeakTargetB,
            "mi_weak_target_c" => Strategy::MiWeakTargetC,
            "mi_weak_target_cls" => Strategy::MiWeakTargetCls,
            _ => return None,
        })
    }

    pub fn compatible_with(self, task: TaskKind) -> bool {
        match self {
            Strategy::Random | Strategy::Bald | Strategy::MiWeakModel => true,
            Strategy::MiWeakTargetB | Strategy::MiWeakTargetC => task == TaskKind::Regression,
            Strategy::MiWeakTargetCls => task == TaskKind::Classification,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mse,
    Accuracy,
}

/// Task-specific model configuration.
#[derive(Debug, Clone)]
pub enum TaskModel {
    Regression {
        noise: NoiseModel,
        learn_hyperparams: bool,
        /// Refit hyperparameters at every k-th model fit (1 = every fit).
        hyper_refit_every: usize,
        /// Standardize inputs and center annotations with current training
        /// statistics before each fit; requires a constant base-noise
        /// profile.
        standardize: bool,
    },
    Classification {
        flip: FlipNoiseModel,
    },
}

impl TaskModel {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskModel::Regression { .. } => TaskKind::Regression,
            TaskModel::Classification { .. } => TaskKind::Classification,
        }
    }
}

/// Everything one run needs besides the data and the seed.
#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub task: TaskModel,
    pub strategy: Strategy,
    pub budget: f64,
    pub initial_size: usize,
    pub grid: PrecisionGrid,
    pub cost: CostModel,
    pub kernel: KernelParams,
    pub jitter: f64,
    pub metric: Metric,
    /// Charge the initial annotations against the budget (off by default:
    /// the budget covers acquisition only).
    pub charge_initial: bool,
    /// Keep beta = 0 levels for `mi_weak_target_b`, whose score diverges
    /// there; off by default (the level is dropped for that strategy).
    pub allow_infinite_target_mi: bool,
}

impl LoopConfig {
    /// # Panics
    /// On any invariant violation: nonpositive budget, zero initial size,
    /// strategy/grid/metric incompatible with the task kind, grid levels
    /// outside the noise model's range, or unaffordable charged initial
    /// set.
    pub fn validate(&self) {
        assert!(self.budget > 0.0, "budget must be positive");
        assert!(self.initial_size >= 1, "initial size must be at least 1");
        assert!(self.jitter >= 0.0, "jitter must be nonnegative");
        let task = self.task.kind();
        assert!(
            self.strategy.compatible_with(task),
            "strategy {} incompatible with {task:?}",
            self.strategy.name()
        );
        match task {
            TaskKind::Regression => {
                assert_eq!(self.grid.kind(), GridKind::RegressionBeta, "grid/task mismatch");
                assert_eq!(self.metric, Metric::Mse, "regression reports mse");
            }
            TaskKind::Classification => {
                assert_eq!(
                    self.grid.kind(),
                    GridKind::ClassificationAlpha,
                    "grid/task mismatch"
                );
                assert_eq!(self.metric, Metric::Accuracy, "classification reports accuracy");
            }
        }
        if let TaskModel::Regression {
            noise,
            hyper_refit_every,
            standardize,
            ..
        } = &self.task
        {
            assert!(*hyper_refit_every >= 1, "refit cadence must be at least 1");
            let top = *self.grid.levels().last().unwrap();
            assert!(
                top <= noise.gamma * (1.0 + 1e-12),
                "grid beta {top} exceeds gamma {}",
                noise.gamma
            );
            if *standardize {
                assert!(
                    matches!(noise.base, BaseNoise::Constant(_)),
                    "standardization requires a constant base-noise profile"
                );
            }
        }
        if self.charge_initial {
            let max = max_precision_level(&self.grid);
            let upfront = self.initial_size as f64 * self.cost.cost(max);
            assert!(
                upfront <= self.budget,
                "charged initial set costs {upfront}, over budget {}",
                self.budget
            );
        }
    }
}

/// Annotator handed to [`run`]; classification annotates by flipping the
/// split's own labels, so it needs no extra state.
#[derive(Debug, Clone)]
pub enum AnnotationOracle {
    Regression(RegressionOracle),
    Classification,
}

/// One trajectory row. The initial record (iteration 0) has no selection
/// fields; `score` is also empty for the random strategy, which does not
/// score.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub iteration: usize,
    pub cumulative_cost: f64,
    pub n_train: usize,
    pub pool_index: Option<usize>,
    pub precision: Option<f64>,
    pub score: Option<f64>,
    pub metric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalReason {
    BudgetExhausted,
    PoolEmpty,
}

impl TerminalReason {
    pub fn name(self) -> &'static str {
        match self {
            TerminalReason::BudgetExhausted => "budget_exhausted",
            TerminalReason::PoolEmpty => "pool_empty",
        }
    }

    pub fn from_name(name: &str) -> Option<TerminalReason> {
        Some(match name {
            "budget_exhausted" => TerminalReason::BudgetExhausted,
            "pool_empty" => TerminalReason::PoolEmpty,
            _ => return None,
        })
    }
}

/// Full log of one run: an initial record at the spent-so-far cost plus one
/// record per completed iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub seed: u64,
    pub strategy: Strategy,
    pub records: Vec<Record>,
    pub terminal: TerminalReason,
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), T::to_string)
}

impl TrajectoryLog {
    /// CSV with one row per record and a trailing `# terminal_reason=...`
    /// comment; floats print in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("seed,strategy,iteration,cumulative_cost,n_train,pool_index,precision,score,metric\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                self.seed,
                self.strategy.name(),
                r.iteration,
                r.cumulative_cost,
                r.n_train,
                fmt_opt(&r.pool_index),
                fmt_opt(&r.precision),
                fmt_opt(&r.score),
                r.metric
            )
            .unwrap();
        }
        writeln!(out, "# terminal_reason={}", self.terminal.name()).unwrap();
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses a file written by [`write_csv`] bit-exactly.
    pub fn read_csv(path: &Path) -> Result<TrajectoryLog, DataError> {
        let text = fs::read_to_string(path)?;
        let parse_err = |row: usize, column: &str| DataError::ParseError {
            row,
            column: column.to_string(),
        };
        let terminal = text
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix("# terminal_reason="))
            .and_then(TerminalReason::from_name)
            .ok_or_else(|| parse_err(0, "terminal_reason"))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut seed = 0;
        let mut strategy = None;
        let mut records = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line()) as usize;
            let field = |i: usize| record.get(i).unwrap_or("");
            let num = |i: usize, name: &str| -> Result<f64, DataError> {
                field(i).parse().map_err(|_| parse_err(line, name))
            };
            let opt_num = |i: usize, name: &str| -> Result<Option<f64>, DataError> {
                if field(i).is_empty() {
                    Ok(None)
                } else {
                    num(i, name).map(Some)
                }
            };
            if records.is_empty() {
                seed = field(0).parse().map_err(|_| parse_err(line, "seed"))?;
                strategy = Strategy::from_name(field(1));
            }
            records.push(Record {
                iteration: num(2, "iteration")? as usize,
                cumulative_cost: num(3, "cumulative_cost")?,
                n_train: num(4, "n_train")? as usize,
                pool_index: opt_num(5, "pool_index")?.map(|v| v as usize),
                precision: opt_num(6, "precision")?,
                score: opt_num(7, "score")?,
                metric: num(8, "metric")?,
            });
        }
        if records.is_empty() {
            return Err(DataError::EmptyFile);
        }
        Ok(TrajectoryLog {
            seed,
            strategy: strategy.ok_or_else(|| parse_err(0, "strategy"))?,
            records,
            terminal,
        })
    }
}

/// Draws `n` distinct uniform pool indices, in draw order.
///
/// # Errors
/// [`LoopError::PoolTooSmall`] when the pool cannot seed `n` points.
pub fn initial_sample(
    pool_size: usize,
    n: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>, LoopError> {
    if n > pool_size {
        return Err(LoopError::PoolTooSmall {
            pool: pool_size,
            needed: n,
        });
    }
    Ok(rng.choose_distinct(pool_size, n))
}

/// Mean squared error of the latent predictive mean against clean targets,
/// after shifting predictions by `y_offset` (the training-annotation mean
/// removed before fitting, 0 when centering is off). `test_xs` must be in
/// the model's input coordinates.
///
/// # Errors
/// [`LoopError::EmptyTestSet`].
pub fn evaluate_regression(
    model: &FittedRegressor,
    test_xs: &[f64],
    test_targets: &[f64],
    y_offset: f64,
) -> Result<f64, LoopError> {
    if test_targets.is_empty() {
        return Err(LoopError::EmptyTestSet);
    }
    let dim = test_xs.len() / test_targets.len();
    let sum: f64 = test_targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let (m, _) = model.predict_latent(&test_xs[i * dim..(i + 1) * dim]);
            let e = m + y_offset - t;
            e * e
        })
        .sum();
    Ok(sum / test_targets.len() as f64)
}

/// Fraction of test points whose clean-label prediction
/// (predict_prob(x, omega=1) >= 0.5 mapped to +1, else -1) matches the true
/// label.
///
/// # Errors
/// [`LoopError::EmptyTestSet`].
pub fn evaluate_classification(
    state: &EPState,
    test_xs: &[f64],
    test_targets: &[f64],
) -> Result<f64, LoopError> {
    if test_targets.is_empty() {
        return Err(LoopError::EmptyTestSet);
    }
    let dim = test_xs.len() / test_targets.len();
    let correct = test_targets
        .iter()
        .enumerate()
        .filter(|&(i, &t)| {
            let p = state.predict_prob(&test_xs[i * dim..(i + 1) * dim], 1.0);
            let pred = if p >= 0.5 { 1.0 } else { -1.0 };
            pred == t
        })
        .count();
    Ok(correct as f64 / test_targets.len() as f64)
}

fn max_precision_level(grid: &PrecisionGrid) -> f64 {
    grid.restricted_to_max_precision().levels()[0]
}

/// The grid a strategy actually scores over: the baselines collapse to the
/// most precise level, and mi_weak_target_b drops beta = 0 unless infinite
/// scores are explicitly allowed.
fn effective_grid(config: &LoopConfig) -> PrecisionGrid {
    let g = match config.strategy {
        Strategy::Random | Strategy::Bald => config.grid.restricted_to_max_precision(),
        Strategy::MiWeakTargetB if !config.allow_infinite_target_mi => {
            config.grid.without_zero_beta()
        }
        _ => config.grid.clone(),
    };
    assert!(
        !g.is_empty(),
        "strategy {} has no usable precision level",
        config.strategy.name()
    );
    g
}

/// Runs one seeded active-learning trajectory.
///
/// RNG draw order per run: initial sample, then the initial annotations in
/// sample order, then per iteration (for the random strategy) the pool pick
/// after the affordability check, then the annotation draw.
///
/// # Errors
/// [`LoopError`] on empty test set, too-small pool, or fit/annotation
/// failures (with iteration context).
///
/// # Panics
/// If the config is invalid ([`LoopConfig::validate`]) or the oracle kind
/// does not match the task kind.
pub fn run(
    config: &LoopConfig,
    split: &PoolTestSplit,
    oracle: &AnnotationOracle,
    seed: u64,
) -> Result<TrajectoryLog, LoopError> {
    config.validate();
    if split.n_test() == 0 {
        return Err(LoopError::EmptyTestSet);
    }
    match (&config.task, oracle) {
        (TaskModel::Regression { .. }, AnnotationOracle::Regression(orc)) => {
            run_regression(config, split, orc, seed)
        }
        (TaskModel::Classification { .. }, AnnotationOracle::Classification) => {
            run_classification(config, split, seed)
        }
        _ => panic!("oracle kind does not match task kind"),
    }
}

/// Incrementally updated joint GP posterior over fixed probe points (test
/// set first, then pool). Observing a probe extends the implicit Cholesky
/// factor by one row, costing O(probes x observations) per update instead
/// of a full refit.
struct IncrementalPosterior {
    dim: usize,
    kp: KernelParams,
    xs: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
    mu: Vec<f64>,
    var: Vec<f64>,
    live: Vec<bool>,
}

impl IncrementalPosterior {
    fn new(kp: &KernelParams, jitter: f64, dim: usize, xs: Vec<f64>) -> Self {
        let n = xs.len() / dim;
        let prior = kp.amplitude * kp.amplitude + jitter;
        Self {
            dim,
            kp: *kp,
            xs,
            coeffs: vec![Vec::new(); n],
            mu: vec![0.0; n],
            var: vec![prior; n],
            live: vec![true; n],
        }
    }

    fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    /// Predictive (mean, variance) at probe `i`, variance clamped at 0.
    fn stats(&self, i: usize) -> (f64, f64) {
        (self.mu[i], self.var[i].max(0.0))
    }

    /// Conditions on an observation y = f(x_j) + noise at probe `j` and
    /// retires the probe.
    fn observe(&mut self, j: usize, y: f64, noise: f64) {
        let sd = (self.var[j].max(0.0) + noise).sqrt();
        let u_new = (y - self.mu[j]) / sd;
        let vj = std::mem::take(&mut self.coeffs[j]);
        self.live[j] = false;
        let xj = self.x(j).to_vec();
        for t in 0..self.mu.len() {
            if !self.live[t] {
                continue;
            }
            let c = rbf(&self.xs[t * self.dim..(t + 1) * self.dim], &xj, &self.kp)
                - dot(&self.coeffs[t], &vj);
            let e = c / sd;
            self.coeffs[t].push(e);
            self.mu[t] += e * u_new;
            self.var[t] -= e * e;
        }
    }

    fn mse(&self, n_test: usize, targets: &[f64]) -> f64 {
        let sum: f64 = targets
            .iter()
            .enumerate()
            .map(|(t, &y)| (self.mu[t] - y) * (self.mu[t] - y))
            .sum();
        sum / n_test as f64
    }
}

fn regression_mi(strategy: Strategy, v: f64, s: f64, beta: f64) -> f64 {
    match strategy {
        Strategy::Bald | Strategy::MiWeakModel => mi_weak_model(v, s, beta),
        Strategy::MiWeakTargetB => mi_weak_target_b(v, s, beta),
        Strategy::MiWeakTargetC => mi_weak_target_c(v, s, beta),
        _ => unreachable!("random does not score"),
    }
}

fn classification_mi(strategy: Strategy, mu: f64, v: f64, omega: f64) -> f64 {
    match strategy {
        Strategy::Bald => bald_classification(mu, v),
        Strategy::MiWeakModel => mi_weak_model_classification(mu, v, omega),
        Strategy::MiWeakTargetCls => mi_weak_target_classification(mu, v, omega),
        _ => unreachable!("random does not score"),
    }
}

/// What the per-iteration head of the loop decided.
struct Pick {
    pool_index: usize,
    precision: f64,
    score: Option<f64>,
    cost: f64,
}

/// Budget-aware pick: baselines draw uniformly at max precision, scored
/// strategies take the select() argmax; `None` means stop with the given
/// reason. A 1-ulp cumulative overshoot of the budget is treated as
/// exhaustion.
fn pick_next(
    config: &LoopConfig,
    grid_eff: &PrecisionGrid,
    alive: &[usize],
    spent: f64,
    rng: &mut RngStream,
    mi: impl FnMut(usize, f64) -> f64,
) -> Result<Pick, TerminalReason> {
    if config.strategy == Strategy::Random {
        let precision = grid_eff.levels()[0];
        let cost = config.cost.cost(precision);
        if spent + cost > config.budget {
            return Err(TerminalReason::BudgetExhausted);
        }
        let pool_index = alive[rng.below(alive.len())];
        return Ok(Pick {
            pool_index,
            precision,
            score: None,
            cost,
        });
    }
    let sel = select(alive, grid_eff, &config.cost, config.budget - spent, mi)
        .ok_or(TerminalReason::BudgetExhausted)?;
    if spent + sel.cost > config.budget {
        return Err(TerminalReason::BudgetExhausted);
    }
    Ok(Pick {
        pool_index: sel.pool_index,
        precision: sel.precision,
        score: Some(sel.score),
        cost: sel.cost,
    })
}

fn run_regression(
    config: &LoopConfig,
    split: &PoolTestSplit,
    oracle: &RegressionOracle,
    seed: u64,
) -> Result<TrajectoryLog, LoopError> {
    let TaskModel::Regression {
        noise,
        learn_hyperparams,
        standardize,
        ..
    } = &config.task
    else {
        unreachable!()
    };
    if *learn_hyperparams || *standardize {
        run_regression_direct(config, split, oracle, seed)
    } else {
        run_regression_incremental(config, split, oracle, noise, seed)
    }
}

fn loop_setup(
    config: &LoopConfig,
    split: &PoolTestSplit,
    rng: &mut RngStream,
) -> Result<(Vec<usize>, Vec<usize>, f64), LoopError> {
    let initial = initial_sample(split.n_pool(), config.initial_size, rng)?;
    let mut in_pool = vec![true; split.n_pool()];
    for &i in &initial {
        in_pool[i] = false;
    }
    let alive: Vec<usize> = (0..split.n_pool()).filter(|&i| in_pool[i]).collect();
    let spent = if config.charge_initial {
        initial.len() as f64 * config.cost.cost(max_precision_level(&config.grid))
    } else {
        0.0
    };
    Ok((initial, alive, spent))
}

fn retire(alive: &mut Vec<usize>, pool_index: usize) {
    let pos = alive
        .binary_search(&pool_index)
        .expect("selected point must be alive");
    alive.remove(pos);
}

fn run_regression_incremental(
    config: &LoopConfig,
    split: &PoolTestSplit,
    oracle: &RegressionOracle,
    noise: &NoiseModel,
    seed: u64,
) -> Result<TrajectoryLog, LoopError> {
    let mut rng = RngStream::new(seed);
    let (initial, mut alive, mut spent) = loop_setup(config, split, &mut rng)?;
    let grid_eff = effective_grid(config);
    let beta_init = max_precision_level(&config.grid);
    let n_test = split.n_test();

    let mut xs = split.test_xs.clone();
    xs.extend_from_slice(&split.pool_xs);
    let mut engine = IncrementalPosterior::new(&config.kernel, config.jitter, split.dim, xs);
    for &idx in &initial {
        let x = split.pool_x(idx);
        let y = annotate_regression(oracle, idx, x, beta_init, &mut rng)
            .map_err(|source| LoopError::Annotation { iteration: 0, source })?;
        engine.observe(n_test + idx, y, noise.base_variance(x) + beta_init);
    }

    let mut records = vec![Record {
        iteration: 0,
        cumulative_cost: spent,
        n_train: initial.len(),
        pool_index: None,
        precision: None,
        score: None,
        metric: engine.mse(n_test, &split.test_targets),
    }];

    let mut iteration = 0;
    let terminal = loop {
        if alive.is_empty() {
            break TerminalReason::PoolEmpty;
        }
        iteration += 1;
        let pick = match pick_next(config, &grid_eff, &alive, spent, &mut rng, |p, beta| {
            let (_, v) = engine.stats(n_test + p);
            regression_mi(config.strategy, v, noise.base_variance(split.pool_x(p)), beta)
        }) {
            Ok(p) => p,
            Err(reason) => break reason,
        };
        let x = split.pool_x(pick.pool_index);
        let y = annotate_regression(oracle, pick.pool_index, x, pick.precision, &mut rng)
            .map_err(|source| LoopError::Annotation { iteration, source })?;
        engine.observe(
            n_test + pick.pool_index,
            y,
            noise.base_variance(x) + pick.precision,
        );
        retire(&mut alive, pick.pool_index);
        spent += pick.cost;
        records.push(Record {
            iteration,
            cumulative_cost: spent,
            n_train: initial.len() + iteration,
            pool_index: Some(pick.pool_index),
            precision: Some(pick.precision),
            score: pick.score,
            metric: engine.mse(n_test, &split.test_targets),
        });
    };

    Ok(TrajectoryLog {
        seed,
        strategy: config.strategy,
        records,
        terminal,
    })
}

/// Input standardization and annotation centering derived from the current
/// training set (identity when standardization is off).
struct Transform {
    mean: Vec<f64>,
    std: Vec<f64>,
    y_mean: f64,
    active: bool,
}

impl Transform {
    fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            y_mean: 0.0,
            active: false,
        }
    }

    fn from_dataset(data: &WeakRegressionDataset) -> Self {
        let dim = data.dim();
        let n = data.len() as f64;
        let mut mean = vec![0.0; dim];
        for i in 0..data.len() {
            for (m, &v) in mean.iter_mut().zip(data.x(i)) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for i in 0..data.len() {
            for ((s, m), &v) in var.iter_mut().zip(&mean).zip(data.x(i)) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|&v| {
                let s = v.sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let y_mean = data.ys().iter().sum::<f64>() / n;
        Self {
            mean,
            std,
            y_mean,
            active: true,
        }
    }

    fn x(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (m, s))| (v - m) / s)
            .collect()
    }

    fn apply(&self, data: &WeakRegressionDataset) -> WeakRegressionDataset {
        let mut out = WeakRegressionDataset::new(data.dim());
        for i in 0..data.len() {
            out.push(&self.x(data.x(i)), data.ys()[i] - self.y_mean, data.betas()[i]);
        }
        out
    }
}

fn run_regression_direct(
    config: &LoopConfig,
    split: &PoolTestSplit,
    oracle: &RegressionOracle,
    seed: u64,
) -> Result<TrajectoryLog, LoopError> {
    let TaskModel::Regression {
        noise,
        learn_hyperparams,
        hyper_refit_every,
        standardize,
    } = &config.task
    else {
        unreachable!()
    };
    let mut rng = RngStream::new(seed);
    let (initial, mut alive, mut spent) = loop_setup(config, split, &mut rng)?;
    let grid_eff = effective_grid(config);
    let beta_init = max_precision_level(&config.grid);

    let mut dataset = WeakRegressionDataset::new(split.dim);
    for &idx in &initial {
        let x = split.pool_x(idx);
        let y = annotate_regression(oracle, idx, x, beta_init, &mut rng)
            .map_err(|source| LoopError::Annotation { iteration: 0, source })?;
        dataset.push(x, y, beta_init);
    }

    let mut kp = config.kernel;
    let mut fit_events = 0usize;
    // Standardize -> center -> (due) hyperparameter refit with warm start ->
    // fit, all against the current training set.
    let refit = |dataset: &WeakRegressionDataset,
                 kp: &mut KernelParams,
                 fit_events: &mut usize,
                 iteration: usize|
     -> Result<(FittedRegressor, Transform), LoopError> {
        let tf = if *standardize {
            Transform::from_dataset(dataset)
        } else {
            Transform::identity(dataset.dim())
        };
        let tdata = if tf.active {
            tf.apply(dataset)
        } else {
            dataset.clone()
        };
        if *learn_hyperparams && fit_events.is_multiple_of(*hyper_refit_every) {
            let hf = fit_hyperparams(&tdata, kp, noise, &AdamConfig::default(), config.jitter)
                .map_err(|source| LoopError::Fit { iteration, source })?;
            *kp = hf.params;
        }
        *fit_events += 1;
        let model = fit(&tdata, kp, noise, config.jitter)
            .map_err(|source| LoopError::Fit { iteration, source })?;
        Ok((model, tf))
    };

    let evaluate = |model: &FittedRegressor, tf: &Transform| -> Result<f64, LoopError> {
        let test_xs: Vec<f64> = if tf.active {
            (0..split.n_test()).flat_map(|t| tf.x(split.test_x(t))).collect()
        } else {
            split.test_xs.clone()
        };
        evaluate_regression(model, &test_xs, &split.test_targets, tf.y_mean)
    };

    let (mut model, mut tf) = refit(&dataset, &mut kp, &mut fit_events, 0)?;
    let mut records = vec![Record {
        iteration: 0,
        cumulative_cost: spent,
        n_train: initial.len(),
        pool_index: None,
        precision: None,
        score: None,
        metric: evaluate(&model, &tf)?,
    }];

    let mut iteration = 0;
    let terminal = loop {
        if alive.is_empty() {
            break TerminalReason::PoolEmpty;
        }
        iteration += 1;
        // One predictive evaluation per alive point, shared across levels.
        let stats: Vec<(f64, f64)> = alive
            .iter()
            .map(|&p| {
                let x = split.pool_x(p);
                let (_, v) = model.predict_latent(&tf.x(x));
                (v, noise.base_variance(x))
            })
            .collect();
        let pick = match pick_next(config, &grid_eff, &alive, spent, &mut rng, |p, beta| {
            let pos = alive.binary_search(&p).unwrap();
            let (v, s) = stats[pos];
            regression_mi(config.strategy, v, s, beta)
        }) {
            Ok(p) => p,
            Err(reason) => break reason,
        };
        let x = split.pool_x(pick.pool_index);
        let y = annotate_regression(oracle, pick.pool_index, x, pick.precision, &mut rng)
            .map_err(|source| LoopError::Annotation { iteration, source })?;
        dataset.push(x, y, pick.precision);
        retire(&mut alive, pick.pool_index);
        spent += pick.cost;
        (model, tf) = refit(&dataset, &mut kp, &mut fit_events, iteration)?;
        records.push(Record {
            iteration,
            cumulative_cost: spent,
            n_train: dataset.len(),
            pool_index: Some(pick.pool_index),
            precision: Some(pick.precision),
            score: pick.score,
            metric: evaluate(&model, &tf)?,
        });
    };

    Ok(TrajectoryLog {
        seed,
        strategy: config.strategy,
        records,
        terminal,
    })
}

fn run_classification(
    config: &LoopConfig,
    split: &PoolTestSplit,
    seed: u64,
) -> Result<TrajectoryLog, LoopError> {
    let TaskModel::Classification { flip } = &config.task else {
        unreachable!()
    };
    let mut rng = RngStream::new(seed);
    let (initial, mut alive, mut spent) = loop_setup(config, split, &mut rng)?;
    let grid_eff = effective_grid(config);
    let alpha_init = max_precision_level(&config.grid);
    let omega_init = flip.omega(alpha_init);

    let mut dataset = WeakClassificationDataset::new(split.dim);
    for &idx in &initial {
        let label = split.pool_targets[idx] as i8;
        let weak = annotate_classification(label, omega_init, &mut rng);
        dataset.push(split.pool_x(idx), weak, omega_init);
    }
    let mut state = ep_fit(&dataset, &config.kernel, config.jitter)
        .map_err(|source| LoopError::Fit { iteration: 0, source })?;

    let mut records = vec![Record {
        iteration: 0,
        cumulative_cost: spent,
        n_train: initial.len(),
        pool_index: None,
        precision: None,
        score: None,
        metric: evaluate_classification(&state, &split.test_xs, &split.test_targets)?,
    }];

    let mut iteration = 0;
    let terminal = loop {
        if alive.is_empty() {
            break TerminalReason::PoolEmpty;
        }
        iteration += 1;
        let stats: Vec<(f64, f64)> = alive
            .iter()
            .map(|&p| state.predict_latent(split.pool_x(p)))
            .collect();
        let pick = match pick_next(config, &grid_eff, &alive, spent, &mut rng, |p, alpha| {
            let pos = alive.binary_search(&p).unwrap();
            let (m, v) = stats[pos];
            classification_mi(config.strategy, m, v, flip.omega(alpha))
        }) {
            Ok(p) => p,
            Err(reason) => break reason,
        };
        let omega = flip.omega(pick.precision);
        let label = split.pool_targets[pick.pool_index] as i8;
        let weak = annotate_classification(label, omega, &mut rng);
        dataset.push(split.pool_x(pick.pool_index), weak, omega);
        retire(&mut alive, pick.pool_index);
        spent += pick.cost;
        state = ep_fit(&dataset, &config.kernel, config.jitter)
            .map_err(|source| LoopError::Fit { iteration, source })?;
        records.push(Record {
            iteration,
            cumulative_cost: spent,
            n_train: dataset.len(),
            pool_index: Some(pick.pool_index),
            precision: Some(pick.precision),
            score: pick.score,
            metric: evaluate_classification(&state, &split.test_xs, &split.test_targets)?,
        });
    };

    Ok(TrajectoryLog {
        seed,
        strategy: config.strategy,
        records,
        terminal,
    })
}
