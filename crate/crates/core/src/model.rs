//! Plant and sensor models, and seeded generation of truth and measurements.
//!
//! The plant is `x(k+1) = A x(k) + B w(k)` with `w ~ N(0, Q_omega)`, and
//! every sensor `i` of cluster `s` observes `y(k) = C x(k) + v(k)` with
//! `v ~ N(0, R_{s,i})`, all noises mutually independent.

use alloc::vec::Vec;

use crate::numerics::{Matrix, SpdMatrix};
use crate::rng::{self, domain, GaussianSampler};
use crate::{Error, Result};

/// Linear plant with a measurement matrix shared by all sensors.
///
/// The matrices are time-invariant; the `*_at(k)` accessors are the
/// evaluation points a time-varying model would override.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    A: Matrix,
    B: Matrix,
    C: Matrix,
    Q_omega: SpdMatrix,
}

impl StateSpaceModel {
    pub fn new(A: Matrix, B: Matrix, C: Matrix, Q_omega: SpdMatrix) -> Result<Self> {
        let n = A.nrows();
        if !A.is_square() || n == 0 {
            return Err(Error::InvalidModel("transition matrix must be square and non-empty"));
        }
        if B.nrows() != n {
            return Err(Error::dims("noise input matrix", (n, B.ncols()), B.shape()));
        }
        if C.ncols() != n || C.nrows() == 0 {
            return Err(Error::dims("measurement matrix", (C.nrows().max(1), n), C.shape()));
        }
        if Q_omega.dim() != B.ncols() {
            return Err(Error::dims(
                "process noise covariance",
                (B.ncols(), B.ncols()),
                Q_omega.shape(),
            ));
        }
        if [&A, &B, &C].iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { context: "model" });
        }
        Ok(Self { A, B, C, Q_omega })
    }

    pub fn state_dim(&self) -> usize {
        self.A.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.B.ncols()
    }

    pub fn measurement_dim(&self) -> usize {
        self.C.nrows()
    }

    pub fn transition_at(&self, _k: usize) -> &Matrix {
        &self.A
    }

    pub fn noise_input_at(&self, _k: usize) -> &Matrix {
        &self.B
    }

    pub fn measurement_at(&self, _k: usize) -> &Matrix {
        &self.C
    }

    pub fn transition(&self) -> &Matrix {
        &self.A
    }

    pub fn noise_input(&self) -> &Matrix {
        &self.B
    }

    pub fn measurement(&self) -> &Matrix {
        &self.C
    }

    pub fn process_noise(&self) -> &SpdMatrix {
        &self.Q_omega
    }

    /// `B Q_omega B^T`, the process noise as seen in state space.
    pub fn state_process_noise_at(&self, k: usize) -> Matrix {
        let b = self.noise_input_at(k);
        b * self.Q_omega.as_matrix() * b.transpose()
    }
}

/// Constant-velocity target model with sampling period `h`:
/// `A = [[1, h], [0, 1]]`, `B = [h^2/2, h]^T`, `C = [1, 0]`, `Q_omega = [q]`.
pub fn tracking_model(h: f64, q: f64) -> Result<StateSpaceModel> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidModel("sampling period must be positive"));
    }
    let A = Matrix::from_row_slice(2, 2, &[1.0, h, 0.0, 1.0]);
    let B = Matrix::from_row_slice(2, 1, &[h * h / 2.0, h]);
    let C = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let Q = SpdMatrix::from_diagonal(&[q])?;
    StateSpaceModel::new(A, B, C, Q)
}

/// Default heterogeneous noise variances for an `n`-sensor cluster:
/// `0.5 + 0.25 (i - 1)` for sensor `i = 1..n`.
pub fn default_noise_schedule(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 + 0.25 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpec {
    pub cluster_id: usize,
    pub sensor_id: usize,
    noise: SpdMatrix,
}

impl SensorSpec {
    pub fn new(cluster_id: usize, sensor_id: usize, noise: Matrix) -> Result<Self> {
        Ok(Self {
            cluster_id,
            sensor_id,
            noise: SpdMatrix::positive_definite(noise)?,
        })
    }

    pub fn noise(&self) -> &SpdMatrix {
        &self.noise
    }
}

/// The sensors reporting to one cluster head. Sensor order is fusion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub cluster_id: usize,
    sensors: Vec<SensorSpec>,
}

impl ClusterSpec {
    /// Sensors must be non-empty, belong to `cluster_id`, share one
    /// measurement dimension and be numbered `1..=n` in order.
    pub fn new(cluster_id: usize, sensors: Vec<SensorSpec>) -> Result<Self> {
        let first = sensors.first().ok_or(Error::InvalidModel("cluster has no sensors"))?;
        let q = first.noise.dim();
        for (idx, s) in sensors.iter().enumerate() {
            if s.cluster_id != cluster_id {
                return Err(Error::ClusterMismatch {
                    expected: cluster_id,
                    found: s.cluster_id,
                });
            }
            if s.sensor_id != idx + 1 {
                return Err(Error::InvalidModel("sensor ids must run 1..=n in order"));
            }
            if s.noise.dim() != q {
                return Err(Error::dims("sensor noise", (q, q), s.noise.shape()));
            }
        }
        Ok(Self { cluster_id, sensors })
    }

    /// Scalar-measurement cluster with the given noise variances.
    pub fn scalar(cluster_id: usize, variances: &[f64]) -> Result<Self> {
        let sensors = variances
            .iter()
            .enumerate()
            .map(|(i, &r)| SensorSpec::new(cluster_id, i + 1, Matrix::from_element(1, 1, r)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cluster_id, sensors)
    }

    pub fn sensors(&self) -> &[SensorSpec] {
        &self.sensors
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn measurement_dim(&self) -> usize {
        self.sensors[0].noise.dim()
    }
}

/// One sensor reading with its noise covariance and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasurement {
    pub y: Matrix,
    noise: SpdMatrix,
    pub cluster_id: usize,
    pub sensor_id: usize,
    pub step: usize,
}

impl GaussianMeasurement {
    pub fn new(y: Matrix, noise: SpdMatrix, cluster_id: usize, sensor_id: usize, step: usize) -> Result<Self> {
        let q = noise.dim();
        if y.shape() != (q, 1) {
            return Err(Error::dims("measurement value", (q, 1), y.shape()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "measurement value",
            });
        }
        if noise.min_eigenvalue() <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: noise.min_eigenvalue(),
            });
        }
        Ok(Self {
            y,
            noise,
            cluster_id,
            sensor_id,
            step,
        })
    }

    /// Convenience for scalar readings.
    pub fn scalar(y: f64, variance: f64, cluster_id: usize, sensor_id: usize, step: usize) -> Result<Self> {
        let noise = SpdMatrix::positive_definite(Matrix::from_element(1, 1, variance))?;
        Self::new(Matrix::from_element(1, 1, y), noise, cluster_id, sensor_id, step)
    }

    pub fn noise(&self) -> &SpdMatrix {
        &self.noise
    }

    pub fn dim(&self) -> usize {
        self.noise.dim()
    }
}

/// True states `x(0..=T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Matrix>,
}

impl Trajectory {
    /// Number of transitions `T` (one less than the number of states).
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn state(&self, k: usize) -> &Matrix {
        &self.states[k]
    }
}

/// Propagates `x0` through the plant for `horizon` steps with process noise
/// drawn from the stream identified by `seed`.
pub fn simulate_truth(model: &StateSpaceModel, x0: &Matrix, horizon: usize, seed: u64) -> Result<Trajectory> {
    let n = model.state_dim();
    if x0.shape() != (n, 1) {
        return Err(Error::dims("initial state", (n, 1), x0.shape()));
    }
    if horizon == 0 {
        return Err(Error::InvalidScenario("horizon must be at least 1"));
    }
    let sampler = GaussianSampler::new(model.process_noise());
    let mut rng = rng::stream(seed, &[domain::PROCESS_NOISE]);
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(x0.clone());
    for k in 0..horizon {
        let w = sampler.sample(&mut rng);
        let next = model.transition_at(k) * &states[k] + model.noise_input_at(k) * w;
        states.push(next);
    }
    Ok(Trajectory { states })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementNoise {
    Sampled,
    /// Readings equal `C x(k)` exactly; the declared covariances are kept.
    Disabled,
}

/// Noisy readings of every sensor in `cluster` for `k = 1..=T`,
/// indexed `[k - 1][sensor position]`.
pub fn measure(
    traj: &Trajectory,
    cluster: &ClusterSpec,
    model: &StateSpaceModel,
    seed: u64,
) -> Result<Vec<Vec<GaussianMeasurement>>> {
    measure_with(traj, cluster, model, seed, MeasurementNoise::Sampled)
}

/// Same as [`measure`] without noise.
pub fn measure_noiseless(
    traj: &Trajectory,
    cluster: &ClusterSpec,
    model: &StateSpaceModel,
) -> Result<Vec<Vec<GaussianMeasurement>>> {
    measure_with(traj, cluster, model, 0, MeasurementNoise::Disabled)
}

pub fn measure_with(
    traj: &Trajectory,
    cluster: &ClusterSpec,
    model: &StateSpaceModel,
    seed: u64,
    noise: MeasurementNoise,
) -> Result<Vec<Vec<GaussianMeasurement>>> {
    let horizon = traj.horizon();
    if horizon == 0 {
        return Err(Error::InvalidScenario("trajectory has no steps to measure"));
    }
    let q = model.measurement_dim();
    if cluster.measurement_dim() != q {
        return Err(Error::dims(
            "sensor noise vs measurement matrix",
            (q, q),
            (cluster.measurement_dim(), cluster.measurement_dim()),
        ));
    }
    let n = model.state_dim();
    if let Some(bad) = traj.states.iter().find(|x| x.shape() != (n, 1)) {
        return Err(Error::dims("trajectory state", (n, 1), bad.shape()));
    }

    let mut out: Vec<Vec<GaussianMeasurement>> = (0..horizon).map(|_| Vec::with_capacity(cluster.len())).collect();
    for sensor in cluster.sensors() {
        let sampler = GaussianSampler::new(sensor.noise());
        let mut rng = rng::stream(
            seed,
            &[
                domain::MEASUREMENT_NOISE,
                cluster.cluster_id as u64,
                sensor.sensor_id as u64,
            ],
        );
        for k in 1..=horizon {
            let mut y = model.measurement_at(k) * traj.state(k);
            if noise == MeasurementNoise::Sampled {
                y += sampler.sample(&mut rng);
            }
            out[k - 1].push(GaussianMeasurement::new(
                y,
                sensor.noise().clone(),
                cluster.cluster_id,
                sensor.sensor_id,
                k,
            )?);
        }
    }
    Ok(out)
}
