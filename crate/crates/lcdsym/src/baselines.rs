//! Comparison sampling schemes and the affine map from standard-normal
//! sample sets to arbitrary Gaussians.
//!
//! All constructors target the N-dimensional standard normal; every
//! returned set has weights summing to one, mean zero, and sample
//! covariance within roundoff of the identity. `to_gaussian` then moves
//! any such set to a given mean and covariance through the lower
//! Cholesky factor.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::mixture::DiracMixture;
use crate::mixture::SymmetricSampleSet;
use crate::optimizer::gaussian_matrix;
use crate::{Error, Result};

/// Whether a scheme carries a sample at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

/// A Gaussian with validated symmetric positive-definite covariance.
/// The lower triangular factor is computed once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    lower: DMatrix<f64>,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "mean has {n} entries, covariance is {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite Gaussian parameter".into()));
        }
        let scale = covariance.amax().max(1.0);
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::InvalidConfig(format!(
                "covariance asymmetry {asym:.3e} exceeds tolerance"
            )));
        }
        let covariance = 0.5 * (&covariance + covariance.transpose());
        let lower = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?
            .l();
        Ok(GaussianDensity {
            mean,
            covariance,
            lower,
        })
    }

    pub fn standard(dim: usize) -> Self {
        GaussianDensity {
            mean: DVector::zeros(dim),
            covariance: DMatrix::identity(dim, dim),
            lower: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower triangular A with A Aᵀ = covariance.
    pub fn cholesky_lower(&self) -> &DMatrix<f64> {
        &self.lower
    }
}

/// Axis-aligned equally weighted scheme: samples ±√N·e_i with weight
/// 1/(2N); the odd variant widens the spread to √(N+0.5) and adds the
/// origin, weight 1/(2N+1) each. Both reproduce mean and covariance of
/// the standard normal exactly.
pub fn ukf_equal(dim: usize, parity: Parity) -> Result<DiracMixture> {
    if dim == 0 {
        return Err(Error::InvalidConfig("dimension must be positive".into()));
    }
    let (spread, center) = match parity {
        Parity::Even => ((dim as f64).sqrt(), false),
        Parity::Odd => ((dim as f64 + 0.5).sqrt(), true),
    };
    let generators = DMatrix::from_diagonal(&DVector::from_element(dim, spread));
    Ok(SymmetricSampleSet::new(generators, center)?.expand())
}

/// Fifth-degree cubature for the standard normal: the origin, 2N axial
/// points ±√(N+2)·e_i, and 2N(N−1) diagonal points √((N+2)/2)(±e_i±e_j),
/// 2N²+1 samples in total. The three weight classes are solved from the
/// exactness conditions on 1, x_i², and x_i²x_j² at construction, and
/// the x_i⁴ condition is verified afterwards, so every moment of total
/// order ≤ 5 matches the standard normal.
///
/// The axial weight (4−N)/(2(N+2)²) vanishes at N = 4 and is negative
/// beyond; the rule stays a valid degree-5 integration rule, which is
/// why the mixture is built with the signed-weight constructor.
pub fn ckf5(dim: usize) -> Result<DiracMixture> {
    if dim < 2 {
        return Err(Error::InvalidConfig(
            "the fifth-degree rule needs at least 2 dimensions".into(),
        ));
    }
    let n = dim as f64;
    let r2 = n + 2.0; // squared axial radius
    let s2 = 0.5 * (n + 2.0); // squared diagonal coordinate
    let axial = 2.0 * n;
    let diagonal = 2.0 * n * (n - 1.0);
    // rows: total weight, E[x_i^2] = 1, E[x_i^2 x_j^2] = 1
    let system = Matrix3::new(
        1.0,
        axial,
        diagonal,
        0.0,
        2.0 * r2,
        4.0 * (n - 1.0) * s2,
        0.0,
        0.0,
        4.0 * s2 * s2,
    );
    let rhs = Vector3::new(1.0, 1.0, 1.0);
    let w = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("degree-5 weight system is singular".into()))?;
    let (w0, w1, w2) = (w[0], w[1], w[2]);
    if !(w0.is_finite() && w1.is_finite() && w2.is_finite()) {
        return Err(Error::Numerical("non-finite degree-5 weights".into()));
    }
    let fourth = 2.0 * r2 * r2 * w1 + 4.0 * (n - 1.0) * s2 * s2 * w2;
    if (fourth - 3.0).abs() > 1e-9 {
        return Err(Error::Numerical(format!(
            "degree-5 weight solve violates the fourth-moment condition by {:.3e}",
            (fourth - 3.0).abs()
        )));
    }

    let count = 2 * dim * dim + 1;
    let mut positions = DMatrix::zeros(count, dim);
    let mut weights = DVector::zeros(count);
    weights[0] = w0;
    let r = r2.sqrt();
    let mut row = 1;
    for i in 0..dim {
        positions[(row, i)] = r;
        weights[row] = w1;
        positions[(row + 1, i)] = -r;
        weights[row + 1] = w1;
        row += 2;
    }
    let s = s2.sqrt();
    for i in 0..dim {
        for j in (i + 1)..dim {
            for (a, b) in [(s, s), (-s, -s), (s, -s), (-s, s)] {
                positions[(row, i)] = a;
                positions[(row, j)] = b;
                weights[row] = w2;
                row += 1;
            }
        }
    }
    debug_assert_eq!(row, count);
    DiracMixture::with_signed_weights(positions, weights)
}

/// Hard cap for the corner-product scheme; the sample count doubles
/// per dimension, so anything beyond this is out of reach anyway.
pub const GHKF_MAX_DIM: usize = 25;

/// Two-node Gauss-Hermite product rule: 2^N equally weighted samples at
/// every sign combination of (±1, ..., ±1). The axis nodes and weights
/// come from the 2x2 Jacobi-matrix eigenproblem of the Hermite
/// recurrence, which places them at ±1 with weight ½ each; the rule is
/// exact through total order 3 but puts E[x_i⁴] at 1 instead of 3.
pub fn ghkf(dim: usize, nodes_per_axis: usize) -> Result<DiracMixture> {
    if dim == 0 {
        return Err(Error::InvalidConfig("dimension must be positive".into()));
    }
    if nodes_per_axis != 2 {
        return Err(Error::InvalidConfig(
            "only the two-node-per-axis product rule is supported".into(),
        ));
    }
    if dim > GHKF_MAX_DIM {
        return Err(Error::InvalidConfig(format!(
            "{dim} dimensions would need 2^{dim} samples; refusing beyond {GHKF_MAX_DIM}"
        )));
    }
    // Jacobi matrix of the Hermite recurrence for the standard normal
    // weight: zero diagonal, off-diagonal √k
    let jacobi = nalgebra::Matrix2::<f64>::new(0.0, 1.0, 1.0, 0.0);
    let eig = nalgebra::SymmetricEigen::new(jacobi);
    let mut axis: Vec<(f64, f64)> = (0..2usize)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    axis.sort_by(|a, b| a.0.total_cmp(&b.0));

    let count = 1usize << dim;
    let mut positions = DMatrix::zeros(count, dim);
    let mut weights = DVector::zeros(count);
    for idx in 0..count {
        let mut w = 1.0;
        for j in 0..dim {
            let (node, axis_w) = axis[(idx >> j) & 1];
            positions[(idx, j)] = node;
            w *= axis_w;
        }
        weights[idx] = w;
    }
    DiracMixture::new(positions, weights)
}

/// Randomly rotated and stretched axis sets: per iteration, a
/// Haar-random orthogonal matrix turns the 2N axial points and a random
/// stretch ρ widens them to ±ρ√N per axis, with per-point weight
/// 1/(2N·iterations·ρ²) chosen so each iteration contributes exactly
/// I/iterations to the covariance. A single merged center sample
/// carries the leftover weight. ρ² is drawn uniformly from [1, 3]:
/// bounded below by 1 so the center weight stays nonnegative, wide
/// enough above to vary the spread meaningfully. iterations·2N + 1
/// samples, deterministic per seed.
pub fn rukf(dim: usize, iterations: usize, seed: u64) -> Result<DiracMixture> {
    if dim == 0 {
        return Err(Error::InvalidConfig("dimension must be positive".into()));
    }
    if iterations == 0 {
        return Err(Error::InvalidConfig("need at least one iteration".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let count = iterations * 2 * dim + 1;
    let mut positions = DMatrix::zeros(count, dim);
    let mut weights = DVector::zeros(count);
    let sqrt_n = (dim as f64).sqrt();
    let mut center_weight = 1.0;
    let mut row = 0;
    for _ in 0..iterations {
        let q = haar_orthogonal(dim, &mut rng);
        let rho2 = 1.0 + 2.0 * rng.gen::<f64>();
        let spread = rho2.sqrt() * sqrt_n;
        let w = 1.0 / (2.0 * dim as f64 * iterations as f64 * rho2);
        for i in 0..dim {
            for d in 0..dim {
                let v = spread * q[(d, i)];
                positions[(row, d)] = v;
                positions[(row + 1, d)] = -v;
            }
            weights[row] = w;
            weights[row + 1] = w;
            row += 2;
        }
        center_weight -= 2.0 * dim as f64 * w;
    }
    weights[count - 1] = center_weight;
    DiracMixture::with_signed_weights(positions, weights)
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// R-diagonal signs folded into Q.
fn haar_orthogonal(dim: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let g = gaussian_matrix(dim, dim, rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Affinely move a standard-normal sample set to `target`: x_i = μ + A·s_i
/// with A the lower Cholesky factor. Weights are unchanged, so sample
/// mean and covariance become μ and A·I·Aᵀ = C.
pub fn to_gaussian(std_set: &DiracMixture, target: &GaussianDensity) -> Result<DiracMixture> {
    if std_set.dim() != target.dim() {
        return Err(Error::DimensionMismatch(format!(
            "set dimension {} vs Gaussian dimension {}",
            std_set.dim(),
            target.dim()
        )));
    }
    let mean = std_set.sample_mean();
    if mean.amax() > 1e-8 {
        return Err(Error::InvalidConfig(format!(
            "set mean deviates from zero by {:.3e}; not a standard-normal set",
            mean.amax()
        )));
    }
    let cov = std_set.sample_covariance(&DVector::zeros(std_set.dim()))?;
    let dev = (&cov - DMatrix::identity(std_set.dim(), std_set.dim())).amax();
    if dev > 1e-8 {
        return Err(Error::InvalidConfig(format!(
            "set covariance deviates from identity by {:.3e}; not a standard-normal set",
            dev
        )));
    }
    let a = target.cholesky_lower();
    let mut out = std_set.positions() * a.transpose();
    for mut row in out.row_iter_mut() {
        row += target.mean().transpose();
    }
    DiracMixture::with_signed_weights(out, std_set.weights().clone())
}
