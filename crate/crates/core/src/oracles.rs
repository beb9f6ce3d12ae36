//! Synthetic data generators, CSV ingestion, and simulated annotation
//! oracles that return weak annotations at a requested precision.

use crate::classification::FlipNoiseModel;
use crate::math::RngStream;
use crate::regression::{sine_variance, NoiseModel};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Errors from data loading and annotation oracles.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}, column {column}: value is not a number")]
    ParseError { row: usize, column: String },
    #[error("no data rows")]
    EmptyFile,
    #[error("column {0} not found")]
    MissingColumn(String),
    #[error("pool index {index} is not a known annotated point")]
    UnknownPoint { index: usize },
}

/// Disjoint pool and test sets produced by a generator or a CSV split.
///
/// Pool targets are the latent clean values Y, kept for oracles that
/// annotate by corrupting Y; test targets are always clean draws that never
/// pass through the weak channel. For classification both hold labels
/// (+1/-1) stored as floats.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolTestSplit {
    pub dim: usize,
    pub pool_xs: Vec<f64>,
    pub pool_targets: Vec<f64>,
    pub test_xs: Vec<f64>,
    pub test_targets: Vec<f64>,
}

impl PoolTestSplit {
    pub fn n_pool(&self) -> usize {
        self.pool_targets.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_targets.len()
    }

    pub fn pool_x(&self, i: usize) -> &[f64] {
        &self.pool_xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn test_x(&self, i: usize) -> &[f64] {
        &self.test_xs[i * self.dim..(i + 1) * self.dim]
    }
}

/// Mean of the synthetic sine task, 0.2 x sin(omega x).
pub fn sine_mean(omega: f64, x: f64) -> f64 {
    0.2 * x * (omega * x).sin()
}

fn pool_count(n: usize, pool_fraction: f64) -> usize {
    (pool_fraction * n as f64).floor() as usize
}

/// Generates the 1-D sine task: pool inputs on [0, 5) (skewed 0.9/0.1
/// toward [0, 2.5) when requested), test inputs always uniform, and clean
/// targets drawn from N(mean, sigma^2(x)) for every point. Per point the
/// input is drawn first, then its target.
///
/// # Panics
/// If `n` < 10, omega is not positive, or `pool_fraction` is not in (0, 1).
pub fn gen_sine_split(
    n: usize,
    omega: f64,
    skewed: bool,
    pool_fraction: f64,
    rng: &mut RngStream,
) -> PoolTestSplit {
    assert!(n >= 10, "need at least 10 points, got {n}");
    assert!(omega > 0.0, "omega {omega} must be positive");
    assert!(
        pool_fraction > 0.0 && pool_fraction < 1.0,
        "pool fraction {pool_fraction} outside (0, 1)"
    );
    let n_pool = pool_count(n, pool_fraction);
    let n_test = n - n_pool;
    let mut pool_xs = Vec::with_capacity(n_pool);
    let mut pool_targets = Vec::with_capacity(n_pool);
    for _ in 0..n_pool {
        let x = if skewed {
            let half = if rng.uniform() < 0.9 { 0.0 } else { 2.5 };
            half + 2.5 * rng.uniform()
        } else {
            5.0 * rng.uniform()
        };
        pool_xs.push(x);
        pool_targets.push(sine_mean(omega, x) + sine_variance(x).sqrt() * rng.standard_normal());
    }
    let mut test_xs = Vec::with_capacity(n_test);
    let mut test_targets = Vec::with_capacity(n_test);
    for _ in 0..n_test {
        let x = 5.0 * rng.uniform();
        test_xs.push(x);
        test_targets.push(sine_mean(omega, x) + sine_variance(x).sqrt() * rng.standard_normal());
    }
    PoolTestSplit {
        dim: 1,
        pool_xs,
        pool_targets,
        test_xs,
        test_targets,
    }
}

/// Simulated regression annotator.
#[derive(Debug, Clone)]
pub enum RegressionOracle {
    /// Draws y~ ~ N(0.2 x sin(omega x), sigma^2(x) + beta) directly from
    /// the generative model.
    SineDirect { omega: f64, noise: NoiseModel },
    /// Corrupts the cached clean pool target: y~ ~ N(Y_i, beta).
    SineFromY { gamma: f64, pool_ys: Vec<f64> },
    /// Corrupts the CSV target: y~ ~ N(Y_i, beta).
    CsvFromY { gamma: f64, pool_ys: Vec<f64> },
}

impl RegressionOracle {
    pub fn sine_from_y(gamma: f64, split: &PoolTestSplit) -> Self {
        RegressionOracle::SineFromY {
            gamma,
            pool_ys: split.pool_targets.clone(),
        }
    }

    pub fn csv_from_y(gamma: f64, split: &PoolTestSplit) -> Self {
        RegressionOracle::CsvFromY {
            gamma,
            pool_ys: split.pool_targets.clone(),
        }
    }

    fn gamma(&self) -> f64 {
        match self {
            RegressionOracle::SineDirect { noise, .. } => noise.gamma,
            RegressionOracle::SineFromY { gamma, .. } => *gamma,
            RegressionOracle::CsvFromY { gamma, .. } => *gamma,
        }
    }
}

/// Annotates pool point `pool_index` at input `x` with added-noise level
/// `beta`. Always consumes exactly one normal draw, so at beta = 0 the
/// from-Y oracles return the cached target bit-exactly.
///
/// # Errors
/// [`DataError::UnknownPoint`] when a from-Y oracle has no cached target at
/// `pool_index`.
///
/// # Panics
/// If `beta` is outside [0, gamma].
pub fn annotate_regression(
    oracle: &RegressionOracle,
    pool_index: usize,
    x: &[f64],
    beta: f64,
    rng: &mut RngStream,
) -> Result<f64, DataError> {
    assert!(
        beta >= 0.0 && beta <= oracle.gamma(),
        "beta {beta} outside [0, {}]",
        oracle.gamma()
    );
    let z = rng.standard_normal();
    match oracle {
        RegressionOracle::SineDirect { omega, noise } => {
            let total = noise.base_variance(x) + beta;
            Ok(sine_mean(*omega, x[0]) + total.sqrt() * z)
        }
        RegressionOracle::SineFromY { pool_ys, .. }
        | RegressionOracle::CsvFromY { pool_ys, .. } => {
            let y = pool_ys
                .get(pool_index)
                .ok_or(DataError::UnknownPoint { index: pool_index })?;
            Ok(y + beta.sqrt() * z)
        }
    }
}

/// Parameters of the 2-D toy classification tasks on [-2, 2]^2.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationDatasetSpec {
    /// 1: sign(x1) with random labels inside |x1| <= 0.25; 2: sign(x1) with
    /// half the points drawn from the all-positive sub-block x1 in [1.5, 2];
    /// 3: unit-cell checkerboard.
    pub version: u8,
    pub n_points: usize,
    pub noise: FlipNoiseModel,
    pub pool_fraction: f64,
}

fn sign_label(x1: f64) -> f64 {
    if x1 >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn checkerboard_label(x1: f64, x2: f64) -> f64 {
    if (x1.floor() + x2.floor()) as i64 % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Generates one toy classification task; the first floor(pool_fraction N)
/// points form the pool. Per point the input is drawn first, then any label
/// randomness.
///
/// # Panics
/// If the version is not 1-3, `n_points` < 10, or `pool_fraction` is
/// outside (0, 1).
pub fn gen_classification_split(
    spec: &ClassificationDatasetSpec,
    rng: &mut RngStream,
) -> PoolTestSplit {
    assert!(
        (1..=3).contains(&spec.version),
        "version {} must be 1, 2, or 3",
        spec.version
    );
    assert!(spec.n_points >= 10, "need at least 10 points");
    assert!(
        spec.pool_fraction > 0.0 && spec.pool_fraction < 1.0,
        "pool fraction {} outside (0, 1)",
        spec.pool_fraction
    );
    let n = spec.n_points;
    let mut xs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let forced_positive = spec.version == 2 && rng.uniform() < 0.5;
        let (x1, x2) = if forced_positive {
            (1.5 + 0.5 * rng.uniform(), -2.0 + 4.0 * rng.uniform())
        } else {
            (-2.0 + 4.0 * rng.uniform(), -2.0 + 4.0 * rng.uniform())
        };
        let label = match spec.version {
            1 => {
                if x1.abs() <= 0.25 {
                    if rng.uniform() < 0.5 {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    sign_label(x1)
                }
            }
            2 => sign_label(x1),
            _ => checkerboard_label(x1, x2),
        };
        xs.push(x1);
        xs.push(x2);
        labels.push(label);
    }
    let n_pool = pool_count(n, spec.pool_fraction);
    PoolTestSplit {
        dim: 2,
        pool_xs: xs[..2 * n_pool].to_vec(),
        pool_targets: labels[..n_pool].to_vec(),
        test_xs: xs[2 * n_pool..].to_vec(),
        test_targets: labels[n_pool..].to_vec(),
    }
}

/// Returns `true_label` with probability `omega`, its negation otherwise;
/// consumes exactly one uniform draw.
///
/// # Panics
/// If omega is outside (0.5, 1] or the label is not -1 or +1.
pub fn annotate_classification(true_label: i8, omega: f64, rng: &mut RngStream) -> i8 {
    assert!(
        omega > 0.5 && omega <= 1.0,
        "omega {omega} outside (0.5, 1]"
    );
    assert!(
        true_label == -1 || true_label == 1,
        "label {true_label} must be -1 or +1"
    );
    if rng.uniform() < omega {
        true_label
    } else {
        -true_label
    }
}

fn parse_field(raw: &str, row: usize, column: &str) -> Result<f64, DataError> {
    raw.trim().parse().map_err(|_| DataError::ParseError {
        row,
        column: column.to_string(),
    })
}

/// Loads a headered numeric CSV, takes `target_column` as the clean target
/// and every other column as a feature, shuffles rows with `rng`, and
/// splits floor(pool_fraction n) rows into the pool.
///
/// # Errors
/// [`DataError::MissingColumn`], [`DataError::ParseError`] (with 1-based
/// file line), or [`DataError::EmptyFile`] when fewer than two data rows
/// remain.
///
/// # Panics
/// If `pool_fraction` is outside (0, 1).
pub fn load_csv_regression(
    path: &Path,
    target_column: &str,
    rng: &mut RngStream,
    pool_fraction: f64,
) -> Result<PoolTestSplit, DataError> {
    assert!(
        pool_fraction > 0.0 && pool_fraction < 1.0,
        "pool fraction {pool_fraction} outside (0, 1)"
    );
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| DataError::MissingColumn(target_column.to_string()))?;
    let dim = headers.len() - 1;
    if dim == 0 {
        return Err(DataError::MissingColumn("any feature column".to_string()));
    }

    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line()) as usize;
        let mut features = Vec::with_capacity(dim);
        let mut target = 0.0;
        for (col, raw) in record.iter().enumerate() {
            let name = headers.get(col).map_or("?", String::as_str);
            let value = parse_field(raw, line, name)?;
            if col == target_idx {
                target = value;
            } else {
                features.push(value);
            }
        }
        rows.push((features, target));
    }
    let n = rows.len();
    if n < 2 {
        return Err(DataError::EmptyFile);
    }

    let order = rng.permutation(n);
    let n_pool = pool_count(n, pool_fraction).clamp(1, n - 1);
    let mut split = PoolTestSplit {
        dim,
        pool_xs: Vec::with_capacity(n_pool * dim),
        pool_targets: Vec::with_capacity(n_pool),
        test_xs: Vec::with_capacity((n - n_pool) * dim),
        test_targets: Vec::with_capacity(n - n_pool),
    };
    for (rank, &row) in order.iter().enumerate() {
        let (features, target) = &rows[row];
        if rank < n_pool {
            split.pool_xs.extend_from_slice(features);
            split.pool_targets.push(*target);
        } else {
            split.test_xs.extend_from_slice(features);
            split.test_targets.push(*target);
        }
    }
    Ok(split)
}

/// Writes a split as CSV with columns `role,x0..,target`, one row per
/// point; floats print in shortest round-trip form.
pub fn dump_split(split: &PoolTestSplit, path: &Path) -> Result<(), DataError> {
    let mut out = String::from("role");
    for d in 0..split.dim {
        write!(out, ",x{d}").unwrap();
    }
    out.push_str(",target\n");
    let mut push_rows = |role: &str, xs: &[f64], targets: &[f64]| {
        for (i, t) in targets.iter().enumerate() {
            out.push_str(role);
            for v in &xs[i * split.dim..(i + 1) * split.dim] {
                write!(out, ",{v}").unwrap();
            }
            writeln!(out, ",{t}").unwrap();
        }
    };
    push_rows("pool", &split.pool_xs, &split.pool_targets);
    push_rows("test", &split.test_xs, &split.test_targets);
    fs::write(path, out)?;
    Ok(())
}

/// Reloads a file written by [`dump_split`], reproducing the split
/// bit-exactly.
pub fn load_split_dump(path: &Path) -> Result<PoolTestSplit, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.len() < 3 || headers[0] != "role" || headers.last().map(String::as_str) != Some("target") {
        return Err(DataError::MissingColumn("role/target".to_string()));
    }
    let dim = headers.len() - 2;
    let mut split = PoolTestSplit {
        dim,
        pool_xs: Vec::new(),
        pool_targets: Vec::new(),
        test_xs: Vec::new(),
        test_targets: Vec::new(),
    };
    let mut any = false;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line()) as usize;
        any = true;
        let role = record.get(0).unwrap_or("");
        let (xs, targets) = match role {
            "pool" => (&mut split.pool_xs, &mut split.pool_targets),
            "test" => (&mut split.test_xs, &mut split.test_targets),
            other => {
                return Err(DataError::ParseError {
                    row: line,
                    column: format!("role value {other:?}"),
                })
            }
        };
        for (col, header) in headers.iter().enumerate().take(dim + 1).skip(1) {
            xs.push(parse_field(record.get(col).unwrap_or(""), line, header)?);
        }
        targets.push(parse_field(record.get(dim + 1).unwrap_or(""), line, "target")?);
    }
    if !any {
        return Err(DataError::EmptyFile);
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::BaseNoise;

    #[test]
    fn sine_split_ranges_and_counts() {
        let mut rng = RngStream::new(1);
        let split = gen_sine_split(1000, 3.0, false, 0.75, &mut rng);
        assert_eq!(split.n_pool(), 750);
        assert_eq!(split.n_test(), 250);
        assert!(split.pool_xs.iter().all(|&x| (0.0..5.0).contains(&x)));
        assert!(split.test_xs.iter().all(|&x| (0.0..5.0).contains(&x)));
    }

    #[test]
    fn sine_split_uniform_pool_balance() {
        let mut rng = RngStream::new(2);
        let split = gen_sine_split(8000, 3.0, false, 0.75, &mut rng);
        let frac = split.pool_xs.iter().filter(|&&x| x < 2.5).count() as f64
            / split.n_pool() as f64;
        assert!((0.47..=0.53).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn sine_split_skewed_pool_balance() {
        let mut rng = RngStream::new(3);
        let split = gen_sine_split(8000, 3.0, true, 0.75, &mut rng);
        let frac = split.pool_xs.iter().filter(|&&x| x < 2.5).count() as f64
            / split.n_pool() as f64;
        assert!((0.885..=0.915).contains(&frac), "fraction {frac}");
        let test_frac = split.test_xs.iter().filter(|&&x| x < 2.5).count() as f64
            / split.n_test() as f64;
        assert!((0.4..=0.6).contains(&test_frac), "test stays uniform: {test_frac}");
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_sine_split(500, 3.0, true, 0.75, &mut RngStream::new(7));
        let b = gen_sine_split(500, 3.0, true, 0.75, &mut RngStream::new(7));
        assert_eq!(a, b);
        let spec = ClassificationDatasetSpec {
            version: 3,
            n_points: 200,
            noise: FlipNoiseModel::new(0.8, 0.2),
            pool_fraction: 0.75,
        };
        let c = gen_classification_split(&spec, &mut RngStream::new(7));
        let d = gen_classification_split(&spec, &mut RngStream::new(7));
        assert_eq!(c, d);
    }

    #[test]
    fn sine_direct_annotation_variance() {
        let oracle = RegressionOracle::SineDirect {
            omega: 3.0,
            noise: NoiseModel::new(BaseNoise::SineProfile, 0.09),
        };
        let mut rng = RngStream::new(4);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| annotate_regression(&oracle, 0, &[0.0], 0.09, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((0.095..=0.105).contains(&var), "sample variance {var}");
        assert!(mean.abs() < 0.01);
    }

    #[test]
    fn from_y_zero_beta_is_exact() {
        let mut rng = RngStream::new(5);
        let split = gen_sine_split(100, 3.0, false, 0.75, &mut rng);
        let oracle = RegressionOracle::sine_from_y(0.09, &split);
        for i in [0, 3, 74] {
            let y = annotate_regression(&oracle, i, split.pool_x(i), 0.0, &mut rng).unwrap();
            assert_eq!(y.to_bits(), split.pool_targets[i].to_bits());
        }
    }

    #[test]
    fn from_y_unknown_point() {
        let mut rng = RngStream::new(6);
        let split = gen_sine_split(20, 3.0, false, 0.75, &mut rng);
        let oracle = RegressionOracle::csv_from_y(1.0, &split);
        let err = annotate_regression(&oracle, 999, &[0.0], 0.0, &mut rng).unwrap_err();
        assert!(matches!(err, DataError::UnknownPoint { index: 999 }));
    }

    #[test]
    fn classification_labels_by_version() {
        assert_eq!(checkerboard_label(0.5, 0.5), 1.0);
        assert_eq!(checkerboard_label(-0.5, 0.5), -1.0);
        assert_eq!(checkerboard_label(-0.5, -0.5), 1.0);
        assert_eq!(sign_label(1.0), 1.0);
        assert_eq!(sign_label(-0.1), -1.0);
    }

    #[test]
    fn classification_split_geometry() {
        let noise = FlipNoiseModel::new(0.8, 0.2);
        for version in 1..=3 {
            let spec = ClassificationDatasetSpec {
                version,
                n_points: 8000,
                noise,
                pool_fraction: 0.75,
            };
            let split = gen_classification_split(&spec, &mut RngStream::new(version as u64));
            assert_eq!(split.n_pool(), 6000);
            assert_eq!(split.n_test(), 2000);
            assert!(split.pool_xs.iter().all(|&v| (-2.0..=2.0).contains(&v)));
            assert!(split
                .pool_targets
                .iter()
                .chain(&split.test_targets)
                .all(|&l| l == 1.0 || l == -1.0));
        }
    }

    #[test]
    fn v1_noise_block_is_balanced() {
        let spec = ClassificationDatasetSpec {
            version: 1,
            n_points: 8000,
            noise: FlipNoiseModel::new(0.8, 0.2),
            pool_fraction: 0.75,
        };
        let split = gen_classification_split(&spec, &mut RngStream::new(11));
        let mut sum = 0.0;
        let mut count = 0;
        let mut outside_ok = true;
        for i in 0..split.n_pool() {
            let x = split.pool_x(i);
            if x[0].abs() <= 0.25 {
                sum += split.pool_targets[i];
                count += 1;
            } else {
                outside_ok &= split.pool_targets[i] == sign_label(x[0]);
            }
        }
        assert!(outside_ok, "labels outside the block are deterministic");
        let mean = sum / count as f64;
        assert!(mean.abs() <= 0.05, "block label mean {mean} over {count}");
    }

    #[test]
    fn v2_skews_into_positive_subblock() {
        let spec = ClassificationDatasetSpec {
            version: 2,
            n_points: 8000,
            noise: FlipNoiseModel::new(0.8, 0.2),
            pool_fraction: 0.75,
        };
        let split = gen_classification_split(&spec, &mut RngStream::new(12));
        let in_block = (0..split.n_pool())
            .filter(|&i| split.pool_x(i)[0] >= 1.5)
            .count() as f64
            / split.n_pool() as f64;
        // 50% forced plus 1/8 of the uniform half.
        assert!((0.53..=0.60).contains(&in_block), "fraction {in_block}");
    }

    #[test]
    fn annotate_classification_rates() {
        let mut rng = RngStream::new(8);
        for _ in 0..100 {
            assert_eq!(annotate_classification(1, 1.0, &mut rng), 1);
            assert_eq!(annotate_classification(-1, 1.0, &mut rng), -1);
        }
        let n = 100_000;
        let kept = (0..n)
            .filter(|_| annotate_classification(1, 0.8, &mut rng) == 1)
            .count() as f64
            / n as f64;
        assert!((0.795..=0.805).contains(&kept), "keep rate {kept}");
    }

    #[test]
    fn csv_load_split_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut body = String::from("f1,f2,strength\n");
        for i in 0..10 {
            body.push_str(&format!("{}.5,{},{}\n", i, i * 2, 100 - i));
        }
        fs::write(&path, &body).unwrap();
        let split =
            load_csv_regression(&path, "strength", &mut RngStream::new(1), 0.8).unwrap();
        assert_eq!(split.dim, 2);
        assert_eq!(split.n_pool(), 8);
        assert_eq!(split.n_test(), 2);
        assert!(split.pool_targets.iter().all(|&t| (91.0..=100.0).contains(&t)));

        fs::write(&path, "f1,f2,strength\n").unwrap();
        assert!(matches!(
            load_csv_regression(&path, "strength", &mut RngStream::new(1), 0.8),
            Err(DataError::EmptyFile)
        ));

        fs::write(&path, "f1,f2,strength\n1,oops,3\n2,2,2\n").unwrap();
        match load_csv_regression(&path, "strength", &mut RngStream::new(1), 0.8) {
            Err(DataError::ParseError { row, column }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "f2");
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        fs::write(&path, "f1,f2,strength\n1,2,3\n4,5,6\n").unwrap();
        assert!(matches!(
            load_csv_regression(&path, "nope", &mut RngStream::new(1), 0.8),
            Err(DataError::MissingColumn(_))
        ));
    }

    #[test]
    fn dump_round_trips_bit_exactly() {
        let mut rng = RngStream::new(9);
        let split = gen_sine_split(50, 3.0, false, 0.8, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dump.csv");
        dump_split(&split, &path).unwrap();
        let back = load_split_dump(&path).unwrap();
        assert_eq!(split, back);
    }
}
