//! Dirac mixtures and point-symmetric sample sets.
//!
//! A symmetric set stores only the L generating samples; expansion
//! produces the full mixture {+s_i} ∪ {-s_i} (plus an optional origin
//! sample for odd total counts). The expanded mixture remembers the
//! pairing, and every moment computation sums each +s_i with its -s_i
//! partner first, so odd moments cancel exactly in floating point
//! instead of merely to rounding level.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Parametrization of a point-symmetric sample set: L generator rows,
/// expanding to 2L samples, or 2L + 1 when a center sample at the
/// origin is included.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSampleSet {
    half_positions: DMatrix<f64>,
    includes_center: bool,
}

impl SymmetricSampleSet {
    pub fn new(half_positions: DMatrix<f64>, includes_center: bool) -> Result<Self> {
        if half_positions.nrows() == 0 || half_positions.ncols() == 0 {
            return Err(Error::InvalidConfig(
                "symmetric set needs at least one generator sample and one dimension".into(),
            ));
        }
        if half_positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "symmetric set contains non-finite positions".into(),
            ));
        }
        Ok(SymmetricSampleSet {
            half_positions,
            includes_center,
        })
    }

    pub fn dim(&self) -> usize {
        self.half_positions.ncols()
    }

    /// Number of generator samples L.
    pub fn half_count(&self) -> usize {
        self.half_positions.nrows()
    }

    pub fn includes_center(&self) -> bool {
        self.includes_center
    }

    /// Total number of samples after expansion: 2L or 2L + 1.
    pub fn total_samples(&self) -> usize {
        2 * self.half_count() + usize::from(self.includes_center)
    }

    /// Generator rows, one sample per row.
    pub fn half_positions(&self) -> &DMatrix<f64> {
        &self.half_positions
    }

    /// Expand to the full equally weighted mixture. Row layout: rows
    /// 0..L are +s_i, rows L..2L are -s_i, the center (if any) is last.
    pub fn expand(&self) -> DiracMixture {
        let l = self.half_count();
        let n = self.dim();
        let m = self.total_samples();
        let w = 1.0 / m as f64;
        let mut positions = DMatrix::zeros(m, n);
        for i in 0..l {
            for j in 0..n {
                let v = self.half_positions[(i, j)];
                positions[(i, j)] = v;
                positions[(l + i, j)] = -v;
            }
        }
        DiracMixture {
            positions,
            weights: DVector::from_element(m, w),
            symmetry: Some(SymmetryTag {
                half_count: l,
                includes_center: self.includes_center,
            }),
        }
    }
}

/// Pairing metadata for mixtures produced by [`SymmetricSampleSet::expand`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SymmetryTag {
    half_count: usize,
    includes_center: bool,
}

/// A discrete density: weighted point masses.
#[derive(Debug, Clone, PartialEq)]
pub struct DiracMixture {
    positions: DMatrix<f64>,
    weights: DVector<f64>,
    symmetry: Option<SymmetryTag>,
}

impl DiracMixture {
    /// Standard constructor: strictly positive weights summing to one.
    pub fn new(positions: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        Self::validate_shapes(&positions, &weights)?;
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidConfig(
                "mixture weights must be strictly positive".into(),
            ));
        }
        Ok(DiracMixture {
            positions,
            weights,
            symmetry: None,
        })
    }

    /// Constructor admitting zero or negative weights, still summing to
    /// one. Cubature rules of algebraic degree five and higher are the
    /// intended users: their classical constructions have weights that
    /// change sign as the dimension grows, yet they remain valid
    /// integration rules.
    pub fn with_signed_weights(positions: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        Self::validate_shapes(&positions, &weights)?;
        Ok(DiracMixture {
            positions,
            weights,
            symmetry: None,
        })
    }

    fn validate_shapes(positions: &DMatrix<f64>, weights: &DVector<f64>) -> Result<()> {
        if positions.nrows() == 0 || positions.ncols() == 0 {
            return Err(Error::InvalidConfig("empty mixture".into()));
        }
        if positions.nrows() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} positions vs {} weights",
                positions.nrows(),
                weights.len()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite position".into()));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    pub fn positions(&self) -> &DMatrix<f64> {
        &self.positions
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Whether this mixture was expanded from a symmetric set (and thus
    /// carries the exact-cancellation pairing).
    pub fn is_point_symmetric(&self) -> bool {
        self.symmetry.is_some()
    }

    /// Weighted first moment. Exactly zero for expanded symmetric sets:
    /// each +s_i is summed with its bitwise-negated partner first.
    pub fn sample_mean(&self) -> DVector<f64> {
        let n = self.dim();
        let mut mean = DVector::zeros(n);
        match self.symmetry {
            Some(tag) => {
                for i in 0..tag.half_count {
                    let w = self.weights[i];
                    for j in 0..n {
                        // +v + (-v) is exactly 0 in IEEE arithmetic
                        let pair = self.positions[(i, j)] + self.positions[(tag.half_count + i, j)];
                        mean[j] += w * pair;
                    }
                }
                if tag.includes_center {
                    let c = self.positions.nrows() - 1;
                    let w = self.weights[c];
                    for j in 0..n {
                        mean[j] += w * self.positions[(c, j)];
                    }
                }
            }
            None => {
                for i in 0..self.len() {
                    let w = self.weights[i];
                    for j in 0..n {
                        mean[j] += w * self.positions[(i, j)];
                    }
                }
            }
        }
        mean
    }

    /// Weighted second central moment about `about`:
    /// Σ α_i (x_i - about)(x_i - about)ᵀ.
    pub fn sample_covariance(&self, about: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if about.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "covariance center has {} entries, mixture dimension is {n}",
                about.len()
            )));
        }
        // centered rows scaled by weight on one side, gemm for the sum
        let mut centered = self.positions.clone();
        for i in 0..centered.nrows() {
            for j in 0..n {
                centered[(i, j)] -= about[j];
            }
        }
        let mut scaled = centered.clone();
        for i in 0..scaled.nrows() {
            let w = self.weights[i];
            scaled.row_mut(i).scale_mut(w);
        }
        let cov = centered.transpose() * scaled;
        // gemm blocking can leave sub-ulp asymmetry
        Ok(0.5 * (&cov + cov.transpose()))
    }

    /// Weighted raw moment Σ_i α_i Π_j x_{i,j}^{n_j}.
    ///
    /// For expanded symmetric sets the ± pairs are combined before
    /// accumulation, so any odd total order gives exactly zero.
    pub fn raw_moment(&self, exponents: &[u32]) -> Result<f64> {
        if exponents.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} exponents for dimension {}",
                exponents.len(),
                self.dim()
            )));
        }
        let monomial = |row: usize| -> f64 {
            let mut p = 1.0;
            for (j, &e) in exponents.iter().enumerate() {
                if e > 0 {
                    p *= self.positions[(row, j)].powi(e as i32);
                }
            }
            p
        };
        let mut acc = 0.0;
        match self.symmetry {
            Some(tag) => {
                for i in 0..tag.half_count {
                    // (-s)^e is the bitwise negation of s^e for odd
                    // total order, so this pair sum is exactly zero then
                    acc += self.weights[i] * (monomial(i) + monomial(tag.half_count + i));
                }
                if tag.includes_center {
                    let c = self.positions.nrows() - 1;
                    acc += self.weights[c] * monomial(c);
                }
            }
            None => {
                for i in 0..self.len() {
                    acc += self.weights[i] * monomial(i);
                }
            }
        }
        Ok(acc)
    }
}

/// Raw moment E[Π_j x_j^{n_j}] of the N-dimensional standard normal:
/// the coordinates are independent, each univariate moment is
/// (n - 1)!! for even n and 0 for odd n.
pub fn true_normal_moment(exponents: &[u32]) -> f64 {
    let mut prod = 1.0;
    for &e in exponents {
        if e % 2 == 1 {
            return 0.0;
        }
        prod *= double_factorial_odd_below(e);
    }
    prod
}

/// (n-1)!! for even n >= 0; empty product for n = 0.
fn double_factorial_odd_below(n: u32) -> f64 {
    let mut p = 1.0;
    let mut k = 1;
    while k < n {
        p *= k as f64;
        k += 2;
    }
    p
}
