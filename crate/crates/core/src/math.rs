//! Scalar special functions, entropies, dense symmetric linear algebra, and
//! the seeded random stream used by every stochastic component.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Errors from the dense linear algebra routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    /// A Cholesky pivot was nonpositive, so the matrix is not positive
    /// definite. Usually a sign of missing jitter or invalid noise terms.
    #[error("matrix not positive definite: pivot {index} is {value:e}")]
    NotPositiveDefinite { index: usize, value: f64 },
}

// Rational approximations for erf/erfc from W. J. Cody's CALERF
// (Rational Chebyshev approximation for the error function, 1969).
// Coefficients kept at their published precision.
#[allow(clippy::excessive_precision)]
const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
#[allow(clippy::excessive_precision)]
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
#[allow(clippy::excessive_precision)]
const ERF_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
#[allow(clippy::excessive_precision)]
const ERF_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
#[allow(clippy::excessive_precision)]
const ERF_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
#[allow(clippy::excessive_precision)]
const ERF_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];
#[allow(clippy::excessive_precision)]
const INV_SQRT_PI: f64 = 5.641895835477562869480794515607726e-1;

/// Error function, accurate to full double precision on all of the real line.
pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        let ysq = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut xnum = ERF_A[4] * ysq;
        let mut xden = ysq;
        for i in 0..3 {
            xnum = (xnum + ERF_A[i]) * ysq;
            xden = (xden + ERF_B[i]) * ysq;
        }
        x * (xnum + ERF_A[3]) / (xden + ERF_B[3])
    } else {
        let res = 1.0 - erfc(y);
        if x < 0.0 {
            -res
        } else {
            res
        }
    }
}

/// Complementary error function, with correct relative accuracy far into
/// the tails (erfc(26) is still a normal number).
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let result = if y <= 0.46875 {
        return 1.0 - erf(x);
    } else if y <= 4.0 {
        let mut xnum = ERF_C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + ERF_C[i]) * y;
            xden = (xden + ERF_D[i]) * y;
        }
        rescale_tail(y, (xnum + ERF_C[7]) / (xden + ERF_D[7]))
    } else if y < 26.543 {
        let ysq = 1.0 / (y * y);
        let mut xnum = ERF_P[5] * ysq;
        let mut xden = ysq;
        for i in 0..4 {
            xnum = (xnum + ERF_P[i]) * ysq;
            xden = (xden + ERF_Q[i]) * ysq;
        }
        let r = ysq * (xnum + ERF_P[4]) / (xden + ERF_Q[4]);
        rescale_tail(y, (INV_SQRT_PI - r) / y)
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// Multiplies the rational tail approximation by exp(-y^2), split so that
/// the squaring of y loses no low-order bits.
fn rescale_tail(y: f64, r: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp() * r
}

/// Standard normal cumulative distribution function.
///
/// Absolute error below 1e-12 everywhere; saturates at 0 and 1 for large
/// arguments.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal probability density function.
pub fn std_normal_pdf(x: f64) -> f64 {
    (2.0 * std::f64::consts::PI).sqrt().recip() * (-0.5 * x * x).exp()
}

/// Shannon entropy of a Bernoulli(p) variable, in bits.
///
/// The p log p terms are taken as 0 at p in {0, 1}, by continuity.
///
/// # Panics
/// If `p` is outside [0, 1].
pub fn binary_entropy(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "probability {p} outside [0, 1]");
    let term = |t: f64| if t > 0.0 { -t * t.log2() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Differential entropy of a univariate Gaussian with the given variance,
/// in nats: 0.5 (1 + log(2 pi) + log variance).
///
/// # Panics
/// If `variance` is not strictly positive.
pub fn gaussian_entropy(variance: f64) -> f64 {
    assert!(variance > 0.0, "variance {variance} must be positive");
    0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln() + variance.ln())
}

/// Dense symmetric matrix with full row-major storage. Writes through
/// [`SymMatrix::set`] keep the two mirrored entries bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Zero matrix of the given dimension.
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    /// Identity matrix of the given dimension.
    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds a matrix by evaluating `f` on the upper triangle (i <= j) and
    /// mirroring, so the result is symmetric by construction.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets entry (i, j) and its mirror (j, i).
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    /// Row `i` as a slice; by symmetry this is also column `i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim, "dimension mismatch");
        (0..self.dim).map(|i| dot(self.row(i), v)).collect()
    }

    /// Adds `coef * v v^T` in place; the update is exactly symmetric.
    pub fn rank_one_update(&mut self, coef: f64, v: &[f64]) {
        assert_eq!(v.len(), self.dim, "dimension mismatch");
        for i in 0..self.dim {
            let ci = coef * v[i];
            let row = &mut self.data[i * self.dim..(i + 1) * self.dim];
            for (r, &vj) in row.iter_mut().zip(v) {
                *r += ci * vj;
            }
        }
    }
}

/// Dot product of two equal-length slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor of a positive definite matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    dim: usize,
    l: Vec<f64>,
    log_det: f64,
}

/// Factors a symmetric matrix as L L^T with L lower triangular.
///
/// # Errors
/// [`MathError::NotPositiveDefinite`] if any pivot is nonpositive.
pub fn cholesky_factor(m: &SymMatrix) -> Result<CholeskyFactor, MathError> {
    let n = m.dim();
    let mut l = vec![0.0; n * n];
    let mut log_det = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(MathError::NotPositiveDefinite { index: i, value: s });
                }
                let d = s.sqrt();
                l[i * n + i] = d;
                log_det += 2.0 * d.ln();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(CholeskyFactor { dim: n, l, log_det })
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Log-determinant of the factored matrix, in nats.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Entry (i, j) of the lower factor.
    pub fn l(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.dim + j]
    }

    /// Solves L y = rhs by forward substitution.
    ///
    /// # Panics
    /// On dimension mismatch.
    pub fn forward_solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.dim, "dimension mismatch");
        let n = self.dim;
        let mut y = rhs.to_vec();
        for i in 0..n {
            let s = dot(&self.l[i * n..i * n + i], &y[..i]);
            y[i] = (y[i] - s) / self.l[i * n + i];
        }
        y
    }

    /// Solves L^T x = rhs by back substitution.
    ///
    /// # Panics
    /// On dimension mismatch.
    pub fn backward_solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.dim, "dimension mismatch");
        let n = self.dim;
        let mut x = rhs.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for (k, xk) in x.iter().enumerate().skip(i + 1) {
                s -= self.l[k * n + i] * xk;
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }

    /// Solves (L L^T) x = rhs.
    ///
    /// # Panics
    /// On dimension mismatch.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.backward_solve(&self.forward_solve(rhs))
    }
}

/// Solves (L L^T) x = rhs against a Cholesky factor.
pub fn cholesky_solve(f: &CholeskyFactor, rhs: &[f64]) -> Vec<f64> {
    f.solve(rhs)
}

/// Deterministic random stream backed by the ChaCha8 block cipher, so a
/// seed reproduces the same draw sequence on every platform.
///
/// One stream drives one experiment run; streams are never shared.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform draw from [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }

    /// Standard normal draw.
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform integer in [0, n).
    ///
    /// # Panics
    /// If `n` is zero.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        self.rng.random_range(0..n)
    }

    /// `k` distinct uniform indices from [0, n), by partial Fisher-Yates.
    ///
    /// # Panics
    /// If `k > n`.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot choose {k} distinct items from {n}");
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let left = n - i;
            let j = if left > 1 { i + self.below(left) } else { i };
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }

    /// Uniform random permutation of [0, n).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        self.choose_distinct(n, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_at_zero_is_half() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
    }

    #[test]
    fn cdf_reflection_identity() {
        for &x in &[0.5, 1.7, 3.0] {
            let lhs = std_normal_cdf(x);
            let rhs = 1.0 - std_normal_cdf(-x);
            assert!((lhs - rhs).abs() < 1e-15, "x={x}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn cdf_saturates() {
        assert_eq!(std_normal_cdf(40.0), 1.0);
        assert_eq!(std_normal_cdf(-40.0), 0.0);
    }

    #[test]
    fn pdf_at_zero() {
        assert!((std_normal_pdf(0.0) - 0.3989422804014327).abs() < 1e-16);
    }

    #[test]
    fn pdf_is_even() {
        for &x in &[0.3, 2.1] {
            assert_eq!(std_normal_pdf(x), std_normal_pdf(-x));
        }
    }

    #[test]
    fn binary_entropy_extremes() {
        assert_eq!(binary_entropy(0.5), 1.0);
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
    }

    #[test]
    fn binary_entropy_reference_value() {
        assert!((binary_entropy(0.9) - 0.4689955935892812).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "outside")]
    fn binary_entropy_rejects_out_of_range() {
        binary_entropy(1.5);
    }

    #[test]
    fn gaussian_entropy_values() {
        let v0 = 1.0 / (2.0 * std::f64::consts::PI * std::f64::consts::E);
        assert!(gaussian_entropy(v0).abs() < 1e-14);
        assert!((gaussian_entropy(1.0) - 1.4189385332046727).abs() < 1e-15);
        let v = 0.37;
        let diff = gaussian_entropy(4.0 * v) - gaussian_entropy(v);
        assert!((diff - 0.5 * 4.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    #[should_panic(expected = "positive")]
    fn gaussian_entropy_rejects_nonpositive() {
        gaussian_entropy(0.0);
    }

    #[test]
    fn cholesky_identity() {
        let f = cholesky_factor(&SymMatrix::identity(3)).unwrap();
        assert_eq!(f.log_det(), 0.0);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_eq!(f.l(i, j), expect);
            }
        }
    }

    #[test]
    fn cholesky_two_by_two_hand_case() {
        let mut m = SymMatrix::zeros(2);
        m.set(0, 0, 4.0);
        m.set(0, 1, 2.0);
        m.set(1, 1, 3.0);
        let f = cholesky_factor(&m).unwrap();
        assert!((f.l(0, 0) - 2.0).abs() < 1e-15);
        assert!((f.l(1, 0) - 1.0).abs() < 1e-15);
        assert!((f.l(1, 1) - 2.0f64.sqrt()).abs() < 1e-15);
        let x = f.solve(&[1.0, 0.0]);
        assert!((x[0] - 3.0 / 8.0).abs() < 1e-15);
        assert!((x[1] + 1.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m = SymMatrix::zeros(2);
        m.set(0, 0, 1.0);
        m.set(0, 1, 2.0);
        m.set(1, 1, 1.0);
        match cholesky_factor(&m) {
            Err(MathError::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn identity_factor_solve_is_identity() {
        let f = cholesky_factor(&SymMatrix::identity(4)).unwrap();
        let rhs = [1.0, -2.0, 0.5, 3.0];
        assert_eq!(f.solve(&rhs), rhs.to_vec());
    }

    #[test]
    fn rng_same_seed_same_draws() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.uniform(), b.uniform());
        }
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        for _ in 0..1000 {
            assert_eq!(a.standard_normal(), b.standard_normal());
        }
    }

    #[test]
    fn choose_distinct_is_distinct_and_in_range() {
        let mut rng = RngStream::new(3);
        for _ in 0..1000 {
            let picked = rng.choose_distinct(20, 7);
            let set: std::collections::HashSet<_> = picked.iter().collect();
            assert_eq!(set.len(), 7);
            assert!(picked.iter().all(|&i| i < 20));
        }
    }

    #[test]
    fn permutation_covers_all_indices() {
        let mut rng = RngStream::new(11);
        for n in [1usize, 2, 5, 40] {
            let mut p = rng.permutation(n);
            p.sort_unstable();
            assert_eq!(p, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn rank_one_update_matches_direct() {
        let mut m = SymMatrix::identity(3);
        let v = [1.0, -2.0, 0.5];
        m.rank_one_update(0.3, &v);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 } + 0.3 * v[i] * v[j];
                assert!((m.get(i, j) - expect).abs() < 1e-15);
            }
        }
    }
}
