//! Acquisition scores: mutual-information gains per annotation, annotation
//! cost models, precision grids, and budget-aware argmax selection of the
//! (point, precision) pair with the best information-per-cost ratio.

use crate::classification::FlipNoiseModel;
use crate::math::{binary_entropy, std_normal_cdf};
use std::f64::consts::{LN_2, PI};

/// Information gain about the latent f from a noiseless observation:
/// 0.5 ln(1 + v / s) nats, for latent variance `v` and observation noise
/// variance `s`.
pub fn bald(v: f64, s: f64) -> f64 {
    mi_weak_model(v, s, 0.0)
}

/// Information gain about the latent f from a weak annotation with extra
/// noise `beta`: 0.5 ln(1 + v / (s + beta)) nats.
///
/// # Panics
/// If `v` or `beta` is negative, or `s + beta` is not positive.
pub fn mi_weak_model(v: f64, s: f64, beta: f64) -> f64 {
    assert!(v >= 0.0, "latent variance {v} must be nonnegative");
    assert!(beta >= 0.0, "beta {beta} must be nonnegative");
    assert!(s + beta > 0.0, "total noise {} must be positive", s + beta);
    0.5 * (1.0 + v / (s + beta)).ln()
}

/// Information gain about the clean observation Y from a weak annotation:
/// 0.5 (ln(v + s + beta) - ln beta) nats. Diverges to +inf as beta -> 0,
/// where the weak annotation determines Y exactly.
///
/// # Panics
/// If any argument is negative or `v + s` is not positive.
pub fn mi_weak_target_b(v: f64, s: f64, beta: f64) -> f64 {
    assert!(v >= 0.0, "latent variance {v} must be nonnegative");
    assert!(s >= 0.0, "noise variance {s} must be nonnegative");
    assert!(beta >= 0.0, "beta {beta} must be nonnegative");
    assert!(v + s > 0.0, "v + s must be positive");
    0.5 * ((v + s + beta).ln() - beta.ln())
}

/// Information gain about a fresh clean draw Y' at the same point from a
/// weak annotation: 0.5 (ln(v + s + beta) - ln(v + s + beta - v^2/(v + s)))
/// nats. Stays finite at beta = 0 because Y' retains its own noise.
///
/// # Panics
/// Same domain as [`mi_weak_target_b`].
pub fn mi_weak_target_c(v: f64, s: f64, beta: f64) -> f64 {
    assert!(v >= 0.0, "latent variance {v} must be nonnegative");
    assert!(s >= 0.0, "noise variance {s} must be nonnegative");
    assert!(beta >= 0.0, "beta {beta} must be nonnegative");
    assert!(v + s > 0.0, "v + s must be positive");
    let total = v + s + beta;
    (0.5 * (total.ln() - (total - v * v / (v + s)).ln())).max(0.0)
}

/// Probability that a weak annotation with keep-probability `omega` is +1
/// under a latent Gaussian (mu, var).
fn weak_marginal(mu: f64, var: f64, omega: f64) -> f64 {
    (2.0 * omega - 1.0) * std_normal_cdf(mu / (1.0 + var).sqrt()) + 1.0 - omega
}

/// Information gain about the latent f from one weak binary annotation, in
/// bits, by a squared-exponential fit to the conditional entropy:
/// h(p_weak) - (1 - h(omega)) / sqrt(1 + 2 C var) exp(-C mu^2 / (1 + 2 C var)) - h(omega)
/// with C = (2 omega - 1)^2 / (pi ln 2 (1 - h(omega))), clamped at 0.
///
/// # Panics
/// If `var` is negative or `omega` is outside (0.5, 1].
pub fn mi_weak_model_classification(mu: f64, var: f64, omega: f64) -> f64 {
    assert!(var >= 0.0, "latent variance {var} must be nonnegative");
    assert!(
        omega > 0.5 && omega <= 1.0,
        "omega {omega} outside (0.5, 1]"
    );
    let h_omega = binary_entropy(omega);
    let w = 2.0 * omega - 1.0;
    let c = w * w / (PI * LN_2 * (1.0 - h_omega));
    let marginal = binary_entropy(weak_marginal(mu, var, omega));
    let conditional = (1.0 - h_omega) / (1.0 + 2.0 * c * var).sqrt()
        * (-c * mu * mu / (1.0 + 2.0 * c * var)).exp();
    (marginal - conditional - h_omega).max(0.0)
}

/// Information gain about the latent f from one clean binary label, in bits.
pub fn bald_classification(mu: f64, var: f64) -> f64 {
    mi_weak_model_classification(mu, var, 1.0)
}

/// Information gain about the clean label Y from a weak annotation, in
/// bits: h(p_weak) - h(omega), clamped at 0.
///
/// # Panics
/// Same domain as [`mi_weak_model_classification`].
pub fn mi_weak_target_classification(mu: f64, var: f64, omega: f64) -> f64 {
    assert!(var >= 0.0, "latent variance {var} must be nonnegative");
    assert!(
        omega > 0.5 && omega <= 1.0,
        "omega {omega} outside (0.5, 1]"
    );
    (binary_entropy(weak_marginal(mu, var, omega)) - binary_entropy(omega)).max(0.0)
}

/// Annotation cost as a function of the precision level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostModel {
    /// C(beta) = (1 + c beta / gamma)^(-q) for regression precisions;
    /// beta = 0 costs 1, beta = gamma costs (1 + c)^(-q).
    Power { c: f64, q: f64, gamma: f64 },
    /// C(alpha) = b + c alpha for classification precisions.
    Linear { b: f64, c: f64 },
}

impl CostModel {
    /// # Panics
    /// If parameters make any grid cost nonpositive: power needs c >= 0,
    /// q >= 0, gamma > 0; linear needs b > 0 and c >= 0.
    pub fn power(c: f64, q: f64, gamma: f64) -> Self {
        assert!(c >= 0.0, "cost scale c {c} must be nonnegative");
        assert!(q >= 0.0, "cost exponent q {q} must be nonnegative");
        assert!(gamma > 0.0, "gamma {gamma} must be positive");
        CostModel::Power { c, q, gamma }
    }

    /// # Panics
    /// See [`CostModel::power`].
    pub fn linear(b: f64, c: f64) -> Self {
        assert!(b > 0.0, "base cost b {b} must be positive");
        assert!(c >= 0.0, "cost slope c {c} must be nonnegative");
        CostModel::Linear { b, c }
    }

    /// Cost of one annotation at `precision` (beta for power, alpha for
    /// linear).
    ///
    /// # Panics
    /// If `precision` is negative, or exceeds 1 for the linear model.
    pub fn cost(&self, precision: f64) -> f64 {
        assert!(precision >= 0.0, "precision {precision} must be nonnegative");
        match *self {
            CostModel::Power { c, q, gamma } => (1.0 + c * precision / gamma).powf(-q),
            CostModel::Linear { b, c } => {
                assert!(precision <= 1.0, "alpha {precision} exceeds 1");
                b + c * precision
            }
        }
    }
}

/// Which precision coordinate a grid enumerates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// Added noise variance beta; smaller beta is more precise.
    RegressionBeta,
    /// Flip-noise level alpha; larger alpha is more precise.
    ClassificationAlpha,
}

/// Menu of precision levels offered to the selector, ascending in the raw
/// coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionGrid {
    kind: GridKind,
    levels: Vec<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
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

impl PrecisionGrid {
    /// Evenly spaced beta levels from 0 (exact) to `gamma` (weakest); a
    /// single level means beta = 0.
    ///
    /// # Panics
    /// If gamma is not positive or `levels` is 0.
    pub fn regression(gamma: f64, levels: usize) -> Self {
        assert!(gamma > 0.0, "gamma {gamma} must be positive");
        assert!(levels > 0, "grid needs at least one level");
        let levels = if levels == 1 {
            vec![0.0]
        } else {
            linspace(0.0, gamma, levels)
        };
        Self {
            kind: GridKind::RegressionBeta,
            levels,
        }
    }

    /// Evenly spaced alpha levels from 0 (weakest) to 1 (cleanest),
    /// dropping levels whose keep-probability would not exceed 0.5; a
    /// single level means alpha = 1.
    ///
    /// # Panics
    /// If `levels` is 0, or no level survives the keep-probability filter.
    pub fn classification(noise: &FlipNoiseModel, levels: usize) -> Self {
        assert!(levels > 0, "grid needs at least one level");
        let levels: Vec<f64> = if levels == 1 {
            vec![1.0]
        } else {
            linspace(0.0, 1.0, levels)
                .into_iter()
                .filter(|&a| noise.omega(a) > 0.5)
                .collect()
        };
        assert!(
            !levels.is_empty(),
            "no alpha level has keep-probability above 0.5"
        );
        Self {
            kind: GridKind::ClassificationAlpha,
            levels,
        }
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// The single most precise level of this grid (beta = min, alpha = max).
    pub fn restricted_to_max_precision(&self) -> Self {
        let level = match self.kind {
            GridKind::RegressionBeta => self.levels[0],
            GridKind::ClassificationAlpha => *self.levels.last().unwrap(),
        };
        Self {
            kind: self.kind,
            levels: vec![level],
        }
    }

    /// Drops beta = 0 levels, where the annotation pins Y exactly and
    /// MI(Y~; Y) diverges. No-op for classification grids.
    pub fn without_zero_beta(&self) -> Self {
        if self.kind != GridKind::RegressionBeta {
            return self.clone();
        }
        Self {
            kind: self.kind,
            levels: self.levels.iter().copied().filter(|&b| b != 0.0).collect(),
        }
    }

    /// Tie-break rank: larger means more precise.
    pub fn precision_rank(&self, precision: f64) -> f64 {
        match self.kind {
            GridKind::RegressionBeta => -precision,
            GridKind::ClassificationAlpha => precision,
        }
    }
}

/// One chosen annotation: pool entry, grid level, and its score breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub pool_index: usize,
    pub level_index: usize,
    pub precision: f64,
    pub mi: f64,
    pub cost: f64,
    /// mi / cost, the quantity maximized.
    pub score: f64,
}

/// Argmax of mi / cost over `candidates` x grid levels, restricted to
/// entries costing at most `remaining_budget`. Ties in score go to the more
/// precise level; remaining ties keep the earliest candidate. Returns None
/// when nothing is affordable or `candidates` is empty.
///
/// `mi` is called as `mi(pool_index, precision)` and must be nonnegative.
pub fn select(
    candidates: &[usize],
    grid: &PrecisionGrid,
    cost_model: &CostModel,
    remaining_budget: f64,
    mut mi: impl FnMut(usize, f64) -> f64,
) -> Option<Selection> {
    let costs: Vec<f64> = grid.levels().iter().map(|&p| cost_model.cost(p)).collect();
    let mut best: Option<Selection> = None;
    let mut best_rank = f64::NEG_INFINITY;
    for &pool_index in candidates {
        for (level_index, (&precision, &cost)) in grid.levels().iter().zip(&costs).enumerate() {
            if cost > remaining_budget {
                continue;
            }
            let gain = mi(pool_index, precision);
            debug_assert!(gain >= 0.0, "mi must be nonnegative, got {gain}");
            let score = gain / cost;
            let rank = grid.precision_rank(precision);
            let better = match &best {
                None => true,
                Some(b) => score > b.score || (score == b.score && rank > best_rank),
            };
            if better {
                best = Some(Selection {
                    pool_index,
                    level_index,
                    precision,
                    mi: gain,
                    cost,
                    score,
                });
                best_rank = rank;
            }
        }
    }
    best
}
