//! Extended-object tracking of a cylinder from noisy surface points.
//!
//! The 12-dimensional state stacks position, velocity, two orientation
//! angles, their rates, radius, and length. Dynamics are constant
//! velocity on positions and angles. A measured point y on the lateral
//! surface satisfies an implicit equation: after undoing the pose,
//! m = (R(φʸ)R(φˣ))⁻¹(y − v − c) must sit on the radius in its first
//! two coordinates and inside the axial extent in its third. The filter
//! therefore observes the residual
//!
//!   h = [ mˣ² + mʸ² − r²,  m᙮ᶻ − s·l,  (mᶻ − s·l)² ]
//!
//! against a pseudo-measurement of zero, where s is the unknown axial
//! fraction of the point, a multiplicative noise uniform on
//! (−0.5, 0.5). For sampling, s is moment-matched as N(0, 1/12).
//!
//! Rotation convention (the source material leaves it open): R(φˣ) is
//! the right-handed rotation about the world x-axis, R(φʸ) about the
//! world y-axis, composed as R(φʸ)·R(φˣ).

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::baselines::GaussianDensity;
use crate::lrkf::{FnMeasurementModel, StateEstimate};
use crate::optimizer::gaussian_matrix;
use crate::{Error, Result};

pub const STATE_DIM: usize = 12;

/// Measurements per time step.
pub const DEFAULT_BATCH: usize = 20;

/// Variance of the axial-fraction noise s ~ U(−0.5, 0.5).
pub const AXIAL_FRACTION_VARIANCE: f64 = 1.0 / 12.0;

/// Additive measurement noise covariance scale: v ~ N(0, 0.01·I₃).
pub const MEASUREMENT_NOISE_VARIANCE: f64 = 0.01;

/// Cylinder pose, motion, and shape. Vector layout:
/// [c(3), ν(3), φ(2), ω(2), r, l].
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub angles: Vector2<f64>,
    pub angular_velocity: Vector2<f64>,
    pub radius: f64,
    pub length: f64,
}

impl CylinderState {
    pub fn from_vector(x: &DVector<f64>) -> Result<Self> {
        if x.len() != STATE_DIM {
            return Err(Error::DimensionMismatch(format!(
                "cylinder state has {STATE_DIM} entries, got {}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite cylinder state".into()));
        }
        Ok(CylinderState {
            position: Vector3::new(x[0], x[1], x[2]),
            velocity: Vector3::new(x[3], x[4], x[5]),
            angles: Vector2::new(x[6], x[7]),
            angular_velocity: Vector2::new(x[8], x[9]),
            radius: x[10],
            length: x[11],
        })
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_row_slice(&[
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
            self.angles.x,
            self.angles.y,
            self.angular_velocity.x,
            self.angular_velocity.y,
            self.radius,
            self.length,
        ])
    }

    /// Ground truth must have physical shape; a filter's Gaussian
    /// estimate is allowed to stray (use |r|, |l| when deriving
    /// geometry from an estimate).
    pub fn validate_ground_truth(&self) -> Result<()> {
        if self.radius > 0.0 && self.length > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "ground-truth cylinder needs positive shape (r = {}, l = {})",
                self.radius, self.length
            )))
        }
    }

    /// World-from-body rotation R(φʸ)·R(φˣ).
    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::y_axis(), self.angles.y)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.angles.x)
    }
}

/// One noisy point observed on the cylinder surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint(pub Vector3<f64>);

impl SurfacePoint {
    pub fn new(y: Vector3<f64>) -> Result<Self> {
        if y.iter().all(|v| v.is_finite()) {
            Ok(SurfacePoint(y))
        } else {
            Err(Error::InvalidConfig("non-finite surface point".into()))
        }
    }
}

/// Constant-velocity transition: positions gain their velocities,
/// angles their rates; shape persists.
pub fn system_matrix() -> DMatrix<f64> {
    let mut a = DMatrix::identity(STATE_DIM, STATE_DIM);
    for i in 0..3 {
        a[(i, 3 + i)] = 1.0;
    }
    for i in 0..2 {
        a[(6 + i, 8 + i)] = 1.0;
    }
    a
}

/// Zero-mean process noise with the per-block variances
/// (10⁻⁶ position, 10⁻⁴ velocity, 10⁻¹⁰ angle, 10⁻⁵ angular rate,
/// 10⁻⁴ shape).
pub fn process_noise() -> GaussianDensity {
    let mut diag = Vec::with_capacity(STATE_DIM);
    diag.extend_from_slice(&[1e-6; 3]);
    diag.extend_from_slice(&[1e-4; 3]);
    diag.extend_from_slice(&[1e-10; 2]);
    diag.extend_from_slice(&[1e-5; 2]);
    diag.extend_from_slice(&[1e-4; 2]);
    GaussianDensity::new(
        DVector::zeros(STATE_DIM),
        DMatrix::from_diagonal(&DVector::from_vec(diag)),
    )
    .expect("fixed diagonal covariance is positive definite")
}

/// Residual of one surface point against the cylinder surface. Zero
/// (all three rows) exactly when y − v lies on the lateral surface at
/// axial fraction s. The third row is the exact square of the second.
pub fn measure(
    state: &CylinderState,
    observed: &SurfacePoint,
    v: &Vector3<f64>,
    s: f64,
) -> Vector3<f64> {
    let m = state.rotation().inverse() * (observed.0 - v - state.position);
    let radial = m.x * m.x + m.y * m.y - state.radius * state.radius;
    let axial = m.z - s * state.length;
    Vector3::new(radial, axial, axial * axial)
}

/// Per-batch measurement noise: each point carries (vˣ, vʸ, vᶻ, s)
/// with v ~ N(0, 0.01·I₃) and s moment-matched to N(0, 1/12).
pub fn measurement_noise_density(batch: usize) -> Result<GaussianDensity> {
    if batch == 0 {
        return Err(Error::InvalidConfig("empty measurement batch".into()));
    }
    let mut diag = Vec::with_capacity(4 * batch);
    for _ in 0..batch {
        diag.extend_from_slice(&[
            MEASUREMENT_NOISE_VARIANCE,
            MEASUREMENT_NOISE_VARIANCE,
            MEASUREMENT_NOISE_VARIANCE,
            AXIAL_FRACTION_VARIANCE,
        ]);
    }
    GaussianDensity::new(
        DVector::zeros(4 * batch),
        DMatrix::from_diagonal(&DVector::from_vec(diag)),
    )
}

/// Concatenated residuals of a whole batch, in input order. `noises`
/// holds one (v, s) quadruple per point, matching
/// `measurement_noise_density`. The pseudo-measurement to compare
/// against is the zero vector of length 3·batch.
pub fn stacked_measure(
    state: &CylinderState,
    points: &[SurfacePoint],
    noises: &DVector<f64>,
) -> Result<DVector<f64>> {
    if points.is_empty() {
        return Err(Error::InvalidConfig("empty measurement batch".into()));
    }
    if noises.len() != 4 * points.len() {
        return Err(Error::DimensionMismatch(format!(
            "batch of {} points needs {} noise entries, got {}",
            points.len(),
            4 * points.len(),
            noises.len()
        )));
    }
    let mut out = DVector::zeros(3 * points.len());
    for (j, point) in points.iter().enumerate() {
        let v = Vector3::new(noises[4 * j], noises[4 * j + 1], noises[4 * j + 2]);
        let s = noises[4 * j + 3];
        out.rows_mut(3 * j, 3)
            .copy_from(&measure(state, point, &v, s));
    }
    Ok(out)
}

/// The zero pseudo-measurement for a batch.
pub fn pseudo_measurement(batch: usize) -> DVector<f64> {
    DVector::zeros(3 * batch)
}

/// Measurement model over a fixed batch of observed points, ready for
/// the filter update. For a 20-point batch the measurement is
/// 60-dimensional with an 80-dimensional noise vector, so the joint
/// sampling dimension is 12 + 80 = 92.
#[allow(clippy::type_complexity)]
pub fn measurement_model(
    points: Vec<SurfacePoint>,
) -> Result<FnMeasurementModel<impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>>> {
    let noise = measurement_noise_density(points.len())?;
    let dim = 3 * points.len();
    Ok(FnMeasurementModel {
        noise,
        measurement_dim: dim,
        f: move |x: &DVector<f64>, w: &DVector<f64>| {
            let state = CylinderState::from_vector(x).expect("12-dimensional filter state");
            stacked_measure(&state, &points, w).expect("noise dimension fixed by the model")
        },
    })
}

/// When the shape steps happen and where it goes. Thresholds are time
/// indices; a value holds from its step onward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSchedule {
    pub initial_radius: f64,
    pub initial_length: f64,
    pub length_up: (usize, f64),
    pub radius_up: (usize, f64),
    pub length_down: (usize, f64),
}

impl Default for ShapeSchedule {
    fn default() -> Self {
        ShapeSchedule {
            initial_radius: 0.3,
            initial_length: 1.0,
            length_up: (200, 1.5),
            radius_up: (300, 0.4),
            length_down: (400, 0.5),
        }
    }
}

impl ShapeSchedule {
    /// Shape at time index k.
    pub fn shape_at(&self, k: usize) -> (f64, f64) {
        let r = if k >= self.radius_up.0 {
            self.radius_up.1
        } else {
            self.initial_radius
        };
        let l = if k >= self.length_down.0 {
            self.length_down.1
        } else if k >= self.length_up.0 {
            self.length_up.1
        } else {
            self.initial_length
        };
        (r, l)
    }

    /// Default thresholds assume a 500-step run; this rescales them
    /// proportionally for shorter or longer runs.
    pub fn scaled_to(self, steps: usize) -> Self {
        let scale = |t: usize| (t * steps) / 500;
        ShapeSchedule {
            length_up: (scale(self.length_up.0), self.length_up.1),
            radius_up: (scale(self.radius_up.0), self.radius_up.1),
            length_down: (scale(self.length_down.0), self.length_down.1),
            ..self
        }
    }
}

/// Ground-truth generation settings. The reference material describes
/// its trajectory only qualitatively; this path (a smooth loop with
/// sinusoidal angular rates, shape steps per schedule) is our
/// configuration, not a reproduction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryConfig {
    pub steps: usize,
    pub batch: usize,
    /// Peak translation speed per step.
    pub translation_speed: f64,
    /// Peak angular rate per step (radians).
    pub angular_rate: f64,
    /// Whether position and angles receive process-noise kicks.
    pub process_noise: bool,
    pub schedule: ShapeSchedule,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            steps: 500,
            batch: DEFAULT_BATCH,
            translation_speed: 0.02,
            angular_rate: 0.03,
            process_noise: true,
            schedule: ShapeSchedule::default(),
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("need at least one step".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig(
                "need at least one measurement per step".into(),
            ));
        }
        if self.schedule.initial_radius <= 0.0 || self.schedule.initial_length <= 0.0 {
            return Err(Error::InvalidConfig(
                "initial shape must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Simulated ground truth and measurements, deterministic per seed.
/// `states[k]` is the truth at step k and `measurements[k]` the batch
/// observed there: uniform axial fraction, uniform surface angle, and
/// N(0, 0.01·I₃) additive noise on each point.
pub fn simulate_trajectory(
    config: &TrajectoryConfig,
    seed: u64,
) -> Result<(Vec<CylinderState>, Vec<Vec<SurfacePoint>>)> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let steps = config.steps;
    let tau = std::f64::consts::TAU;
    let (r0, l0) = config.schedule.shape_at(0);
    let mut truth = CylinderState {
        position: Vector3::zeros(),
        velocity: Vector3::zeros(),
        angles: Vector2::zeros(),
        angular_velocity: Vector2::zeros(),
        radius: r0,
        length: l0,
    };
    let noise_std = MEASUREMENT_NOISE_VARIANCE.sqrt();
    let mut states = Vec::with_capacity(steps);
    let mut measurements = Vec::with_capacity(steps);
    for k in 0..steps {
        let phase = k as f64 / steps as f64;
        truth.velocity = config.translation_speed
            * Vector3::new(
                (tau * phase).cos(),
                (tau * phase).sin(),
                0.5 * (2.0 * tau * phase).cos(),
            );
        truth.angular_velocity =
            config.angular_rate * Vector2::new((tau * phase).sin(), (tau * phase).cos());
        let (r, l) = config.schedule.shape_at(k);
        truth.radius = r;
        truth.length = l;
        truth.validate_ground_truth()?;

        let rot = truth.rotation();
        let mut batch = Vec::with_capacity(config.batch);
        let mut kicks: Vec<(f64, f64)> = Vec::with_capacity(config.batch);
        for _ in 0..config.batch {
            kicks.push((rng.gen::<f64>() - 0.5, tau * rng.gen::<f64>()));
        }
        let vnoise = gaussian_matrix(config.batch, 3, &mut rng);
        for (j, (s, theta)) in kicks.into_iter().enumerate() {
            let local = Vector3::new(
                truth.radius * theta.cos(),
                truth.radius * theta.sin(),
                s * truth.length,
            );
            let y = rot * local
                + truth.position
                + noise_std * Vector3::new(vnoise[(j, 0)], vnoise[(j, 1)], vnoise[(j, 2)]);
            batch.push(SurfacePoint(y));
        }
        states.push(truth.clone());
        measurements.push(batch);

        truth.position += truth.velocity;
        truth.angles += truth.angular_velocity;
        if config.process_noise {
            let w = gaussian_matrix(1, 5, &mut rng);
            truth.position += 1e-3 * Vector3::new(w[(0, 0)], w[(0, 1)], w[(0, 2)]);
            truth.angles += 1e-5 * Vector2::new(w[(0, 3)], w[(0, 4)]);
        }
    }
    Ok((states, measurements))
}

/// First belief from the first measurement batch: position from the
/// batch statistics, zero motion, neutral shape guess (r = 1, l = 2),
/// and fixed uncertainty blocks (10⁻³ motion, 10⁻⁷ angles and rates,
/// 10⁻² shape). The position block gets +10⁻⁶·I₃ so a degenerate batch
/// (all points identical) still yields a usable covariance.
pub fn initial_estimate(first_batch: &[SurfacePoint]) -> Result<StateEstimate> {
    if first_batch.len() < 2 {
        return Err(Error::InvalidConfig(
            "initialization needs at least two points for a position covariance".into(),
        ));
    }
    let n = first_batch.len() as f64;
    let mut center = Vector3::zeros();
    for p in first_batch {
        center += p.0;
    }
    center /= n;
    let mut cc = Matrix3::zeros();
    for p in first_batch {
        let d = p.0 - center;
        cc += d * d.transpose();
    }
    cc /= n - 1.0;
    cc += 1e-6 * Matrix3::identity();

    let mut mean = DVector::zeros(STATE_DIM);
    mean.rows_mut(0, 3).copy_from(&center);
    mean[10] = 1.0;
    mean[11] = 2.0;
    let mut cov = DMatrix::zeros(STATE_DIM, STATE_DIM);
    cov.view_mut((0, 0), (3, 3)).copy_from(&cc);
    for i in 3..6 {
        cov[(i, i)] = 1e-3;
    }
    for i in 6..10 {
        cov[(i, i)] = 1e-7;
    }
    for i in 10..12 {
        cov[(i, i)] = 1e-2;
    }
    Ok(StateEstimate::new(0, GaussianDensity::new(mean, cov)?))
}
