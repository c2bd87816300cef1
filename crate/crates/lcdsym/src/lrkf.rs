//! Sample-based Kalman filtering over arbitrary nonlinear models.
//!
//! Prediction and update both follow the same pattern: stack the state
//! and noise into one joint Gaussian, place a standard-normal sample
//! set on it affinely, push every sample through the model, and read
//! the needed means and covariances off the weighted outputs. The
//! update then applies the Kalman formulas with the gain obtained by
//! solving against the factorized innovation covariance; no matrix is
//! ever inverted explicitly.
//!
//! Covariance hygiene after every moment computation: symmetrize, then
//! treat eigenvalues below -1e-10 as an error and clamp the roundoff
//! band [-1e-10, 0) to zero. Long tracking runs accumulate asymmetry
//! without this.
//!
//! Prediction and update may use different sampling schemes and sample
//! counts; each call asks its scheme for the joint dimension it needs.

use nalgebra::{DMatrix, DVector};

use crate::baselines::{to_gaussian, GaussianDensity};
use crate::mixture::DiracMixture;
use crate::{Error, Result};

/// Gaussian state belief at a discrete time index.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    pub time_index: usize,
    pub density: GaussianDensity,
}

impl StateEstimate {
    pub fn new(time_index: usize, density: GaussianDensity) -> Self {
        StateEstimate {
            time_index,
            density,
        }
    }

    pub fn dim(&self) -> usize {
        self.density.dim()
    }

    pub fn mean(&self) -> &DVector<f64> {
        self.density.mean()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        self.density.covariance()
    }
}

/// State transition x_k = a(x_{k-1}, w_k) with additive-or-not noise w.
pub trait SystemModel {
    fn noise(&self) -> &GaussianDensity;
    fn step(&self, state: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64>;
}

/// Measurement y = h(x, v) with noise v.
pub trait MeasurementModel {
    fn noise(&self) -> &GaussianDensity;
    fn measurement_dim(&self) -> usize;
    fn measure(&self, state: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64>;
}

/// Supplier of standard-normal sample sets of any requested dimension
/// (mean 0 and covariance I within 1e-8, weights summing to one; the
/// affine placement validates this on every call).
pub trait SamplingScheme {
    fn standard_normal_set(&self, dim: usize) -> Result<DiracMixture>;
}

impl<F> SamplingScheme for F
where
    F: Fn(usize) -> Result<DiracMixture>,
{
    fn standard_normal_set(&self, dim: usize) -> Result<DiracMixture> {
        self(dim)
    }
}

/// System model a(x, w) given by a closure.
pub struct FnSystemModel<F> {
    pub noise: GaussianDensity,
    pub f: F,
}

impl<F> SystemModel for FnSystemModel<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    fn noise(&self) -> &GaussianDensity {
        &self.noise
    }

    fn step(&self, state: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
        (self.f)(state, noise)
    }
}

/// Measurement model h(x, v) given by a closure.
pub struct FnMeasurementModel<F> {
    pub noise: GaussianDensity,
    pub measurement_dim: usize,
    pub f: F,
}

impl<F> MeasurementModel for FnMeasurementModel<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    fn noise(&self) -> &GaussianDensity {
        &self.noise
    }

    fn measurement_dim(&self) -> usize {
        self.measurement_dim
    }

    fn measure(&self, state: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
        (self.f)(state, noise)
    }
}

/// x_k = A x_{k-1} + w.
pub struct LinearSystemModel {
    pub matrix: DMatrix<f64>,
    pub noise: GaussianDensity,
}

impl SystemModel for LinearSystemModel {
    fn noise(&self) -> &GaussianDensity {
        &self.noise
    }

    fn step(&self, state: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
        &self.matrix * state + noise
    }
}

/// y = H x + v.
pub struct LinearMeasurementModel {
    pub matrix: DMatrix<f64>,
    pub noise: GaussianDensity,
}

impl MeasurementModel for LinearMeasurementModel {
    fn noise(&self) -> &GaussianDensity {
        &self.noise
    }

    fn measurement_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn measure(&self, state: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
        &self.matrix * state + noise
    }
}

/// Independent stacking of two Gaussians: concatenated means,
/// block-diagonal covariance.
fn stacked_gaussian(a: &GaussianDensity, b: &GaussianDensity) -> Result<GaussianDensity> {
    let (na, nb) = (a.dim(), b.dim());
    let mut mean = DVector::zeros(na + nb);
    mean.rows_mut(0, na).copy_from(a.mean());
    mean.rows_mut(na, nb).copy_from(b.mean());
    let mut cov = DMatrix::zeros(na + nb, na + nb);
    cov.view_mut((0, 0), (na, na)).copy_from(a.covariance());
    cov.view_mut((na, na), (nb, nb)).copy_from(b.covariance());
    GaussianDensity::new(mean, cov)
}

/// Sample the joint density of an independent (state, noise) pair by
/// affinely placing the scheme's standard-normal set on the stacked
/// Gaussian. Row layout: state coordinates first, noise after.
pub fn joint_sampling(
    state: &GaussianDensity,
    noise: &GaussianDensity,
    scheme: &impl SamplingScheme,
) -> Result<DiracMixture> {
    let joint = stacked_gaussian(state, noise)?;
    let std_set = scheme.standard_normal_set(joint.dim())?;
    to_gaussian(&std_set, &joint)
}

/// Symmetrize and police positive semidefiniteness: eigenvalues below
/// -1e-10 are a numerical-consistency error, the roundoff band up to
/// zero is clamped.
fn sanitize_covariance(cov: DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let sym = 0.5 * (&cov + cov.transpose());
    let eig = sym.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -1e-10 {
        return Err(Error::Numerical(format!(
            "{context}: covariance eigenvalue {min:.3e} violates positive semidefiniteness"
        )));
    }
    if min < 0.0 {
        let clamped = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&l| l.max(0.0)),
        );
        let rebuilt =
            &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        return Ok(0.5 * (&rebuilt + rebuilt.transpose()));
    }
    Ok(sym)
}

/// Run every joint sample through a model output function and collect
/// the outputs as rows. `n_state` coordinates feed the state argument,
/// the rest the noise argument.
fn push_through<FOut>(
    joint: &DiracMixture,
    n_state: usize,
    out_dim: usize,
    what: &str,
    f: FOut,
) -> Result<DMatrix<f64>>
where
    FOut: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let n_noise = joint.dim() - n_state;
    let mut outputs = DMatrix::zeros(joint.len(), out_dim);
    for i in 0..joint.len() {
        let row = joint.positions().row(i);
        let x = DVector::from_iterator(n_state, row.columns(0, n_state).iter().copied());
        let w = DVector::from_iterator(n_noise, row.columns(n_state, n_noise).iter().copied());
        let y = f(&x, &w);
        if y.len() != out_dim {
            return Err(Error::DimensionMismatch(format!(
                "{what} returned {} entries, expected {out_dim}",
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "{what} produced a non-finite output at sample {i}"
            )));
        }
        outputs.row_mut(i).copy_from(&y.transpose());
    }
    Ok(outputs)
}

fn weighted_mean(outputs: &DMatrix<f64>, weights: &DVector<f64>) -> DVector<f64> {
    outputs.transpose() * weights
}

fn weighted_cross_covariance(
    left: &DMatrix<f64>,
    left_mean: &DVector<f64>,
    right: &DMatrix<f64>,
    right_mean: &DVector<f64>,
    weights: &DVector<f64>,
) -> DMatrix<f64> {
    let mut lc = left.clone();
    for mut row in lc.row_iter_mut() {
        row -= left_mean.transpose();
    }
    let mut rc = right.clone();
    for (i, mut row) in rc.row_iter_mut().enumerate() {
        row -= right_mean.transpose();
        row *= weights[i];
    }
    lc.transpose() * rc
}

/// Sample-based prediction: x̂ᵖ = Σ αᵢ a(xᵢ, wᵢ) and the matching
/// spread. Advances the time index.
pub fn predict_sampled(
    est: &StateEstimate,
    model: &impl SystemModel,
    scheme: &impl SamplingScheme,
) -> Result<StateEstimate> {
    let n = est.dim();
    let joint = joint_sampling(&est.density, model.noise(), scheme)?;
    let outputs = push_through(&joint, n, n, "system model", |x, w| model.step(x, w))?;
    let mean = weighted_mean(&outputs, joint.weights());
    let cov = weighted_cross_covariance(&outputs, &mean, &outputs, &mean, joint.weights());
    let cov = sanitize_covariance(cov, "prediction")?;
    Ok(StateEstimate::new(
        est.time_index + 1,
        GaussianDensity::new(mean, cov)?,
    ))
}

/// Analytic prediction for a linear system x_k = A x + w. `noise` None
/// means a deterministic transition. Advances the time index.
pub fn predict_linear(
    est: &StateEstimate,
    a: &DMatrix<f64>,
    noise: Option<&GaussianDensity>,
) -> Result<StateEstimate> {
    let n = est.dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "system matrix is {}x{}, state dimension is {n}",
            a.nrows(),
            a.ncols()
        )));
    }
    if let Some(w) = noise {
        if w.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "noise dimension {} vs state dimension {n}",
                w.dim()
            )));
        }
    }
    let mut mean = a * est.mean();
    let mut cov = a * est.covariance() * a.transpose();
    if let Some(w) = noise {
        mean += w.mean();
        cov += w.covariance();
    }
    let cov = sanitize_covariance(cov, "linear prediction")?;
    Ok(StateEstimate::new(
        est.time_index + 1,
        GaussianDensity::new(mean, cov)?,
    ))
}

/// Weighted measurement moments of a model under the current belief:
/// predicted measurement ŷ, innovation covariance C^y, and state-
/// measurement cross-covariance C^xy.
pub fn measurement_moments(
    est: &StateEstimate,
    model: &impl MeasurementModel,
    scheme: &impl SamplingScheme,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = est.dim();
    let ny = model.measurement_dim();
    let joint = joint_sampling(&est.density, model.noise(), scheme)?;
    let outputs = push_through(&joint, n, ny, "measurement model", |x, v| {
        model.measure(x, v)
    })?;
    let y_mean = weighted_mean(&outputs, joint.weights());
    let cy = weighted_cross_covariance(&outputs, &y_mean, &outputs, &y_mean, joint.weights());
    let cy = 0.5 * (&cy + cy.transpose());
    let states = joint.positions().columns(0, n).into_owned();
    let cxy = weighted_cross_covariance(&states, est.mean(), &outputs, &y_mean, joint.weights());
    Ok((y_mean, cy, cxy))
}

/// Kalman measurement update. The gain is applied by solving against
/// the Cholesky factorization of the innovation covariance; the
/// posterior covariance is formed as C^p − TᵀT with T the triangular
/// solve of the cross-covariance, which keeps it symmetric by
/// construction. The time index is unchanged (the update refines the
/// belief at the same instant).
pub fn update(
    est: &StateEstimate,
    measurement: &DVector<f64>,
    model: &impl MeasurementModel,
    scheme: &impl SamplingScheme,
) -> Result<StateEstimate> {
    let ny = model.measurement_dim();
    if measurement.len() != ny {
        return Err(Error::DimensionMismatch(format!(
            "measurement has {} entries, model expects {ny}",
            measurement.len()
        )));
    }
    let (y_mean, cy, cxy) = measurement_moments(est, model, scheme)?;
    let chol = cy.clone().cholesky().ok_or_else(|| {
        Error::Numerical("innovation covariance is singular; cannot form a gain".into())
    })?;
    let innovation = measurement - &y_mean;
    let mean = est.mean() + &cxy * chol.solve(&innovation);
    let t = chol
        .l()
        .solve_lower_triangular(&cxy.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed in the update".into()))?;
    let cov = est.covariance() - t.transpose() * &t;
    let cov = sanitize_covariance(cov, "update")?;
    Ok(StateEstimate::new(
        est.time_index,
        GaussianDensity::new(mean, cov)?,
    ))
}
