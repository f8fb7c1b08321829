//! End-to-end two-stage estimation and Monte Carlo evaluation.
//!
//! Stage one: every cluster head fuses its sensors' readings and runs its
//! local filter. Stage two: the cross-covariance table advances with this
//! step's gains and the local estimates are fused into one state. Every head
//! would compute the same fused state from the same inputs, so it is
//! computed once per step.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::kalman::{kf_update, ma_estimate, sk_estimate, FilterState, LocalEstimate};
use crate::measfusion::{bmf_fuse, smf_fuse, FusedMeasurement};
use crate::model::{
    default_noise_schedule, measure_with, simulate_truth, tracking_model, ClusterSpec, GaussianMeasurement,
    MeasurementNoise, StateSpaceModel, Trajectory,
};
use crate::numerics::{column, Matrix, SpdMatrix};
use crate::rng::{derive_seed, domain};
use crate::statefusion::{bsf_fuse_with, cross_cov_step, ssf_fuse_with, CrossCovarianceTable, FusedState, Singular};
use crate::{Error, Result};

/// How a cluster head turns its raw readings into a local estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MeasurementMethod {
    /// Sequential measurement fusion, then one filter update.
    Smf,
    /// Batch measurement fusion, then one filter update.
    Bmf,
    /// One filter update per reading.
    Sk,
    /// One filter update with all readings stacked.
    Ma,
}

impl MeasurementMethod {
    pub const ALL: [MeasurementMethod; 4] = [
        MeasurementMethod::Smf,
        MeasurementMethod::Bmf,
        MeasurementMethod::Sk,
        MeasurementMethod::Ma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MeasurementMethod::Smf => "smf",
            MeasurementMethod::Bmf => "bmf",
            MeasurementMethod::Sk => "sk",
            MeasurementMethod::Ma => "ma",
        }
    }

    /// Local estimate at `measurements[0].step`, plus the fused measurement
    /// when the method produces one.
    pub fn estimate(
        self,
        filter: &FilterState,
        measurements: &[GaussianMeasurement],
    ) -> Result<(LocalEstimate, Option<FusedMeasurement>)> {
        match self {
            MeasurementMethod::Smf => {
                let fused = smf_fuse(measurements)?;
                Ok((kf_update(filter, &fused)?, Some(fused)))
            }
            MeasurementMethod::Bmf => {
                let fused = bmf_fuse(measurements)?;
                Ok((kf_update(filter, &fused)?, Some(fused)))
            }
            MeasurementMethod::Sk => Ok((sk_estimate(filter, measurements)?, None)),
            MeasurementMethod::Ma => Ok((ma_estimate(filter, measurements)?, None)),
        }
    }
}

impl fmt::Display for MeasurementMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownMethod;

impl fmt::Display for UnknownMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("unknown method")
    }
}

impl core::error::Error for UnknownMethod {}

impl FromStr for MeasurementMethod {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> core::result::Result<Self, UnknownMethod> {
        MeasurementMethod::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or(UnknownMethod)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StateFusionMethod {
    #[default]
    Sequential,
    Batch,
}

impl StateFusionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            StateFusionMethod::Sequential => "ssf",
            StateFusionMethod::Batch => "bsf",
        }
    }

    pub fn fuse(self, estimates: &[LocalEstimate], table: &CrossCovarianceTable) -> Result<FusedState> {
        match self {
            StateFusionMethod::Sequential => ssf_fuse_with(estimates, table, Singular::Generalized),
            StateFusionMethod::Batch => bsf_fuse_with(estimates, table, Singular::Generalized),
        }
    }
}

impl FromStr for StateFusionMethod {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> core::result::Result<Self, UnknownMethod> {
        match s.to_ascii_lowercase().as_str() {
            "ssf" | "sequential" => Ok(StateFusionMethod::Sequential),
            "bsf" | "batch" => Ok(StateFusionMethod::Batch),
            _ => Err(UnknownMethod),
        }
    }
}

/// Scalar position sensors of one cluster, in fusion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub noise_variances: Vec<f64>,
}

impl ClusterConfig {
    pub fn with_default_noise(sensors: usize) -> Self {
        Self {
            noise_variances: default_noise_schedule(sensors),
        }
    }
}

/// A constant-velocity tracking scenario observed by clusters of scalar
/// position sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Sampling period in seconds.
    pub h: f64,
    /// Process noise variance.
    pub q_omega: f64,
    pub x0_true: Vec<f64>,
    /// Initial estimate shared by every cluster head.
    pub x0_hat: Vec<f64>,
    pub p0: Matrix,
    /// Number of steps `T`.
    pub horizon: usize,
    pub clusters: Vec<ClusterConfig>,
    /// Monte Carlo runs `L`.
    pub runs: usize,
    pub seed: u64,
    pub stage1: MeasurementMethod,
    pub state_fusion: StateFusionMethod,
    /// Simulate without process or measurement noise while the filters keep
    /// their nominal covariances.
    pub noiseless: bool,
}

impl ScenarioConfig {
    /// Three clusters of 10, 8 and 6 sensors tracking a target with
    /// `h = 0.5`, `q = 1`, `x0 = [1, 0.5]`, initial estimate `[2, 1]`,
    /// `P0 = I`, 100 steps and 1000 runs.
    pub fn builtin() -> Self {
        Self {
            h: 0.5,
            q_omega: 1.0,
            x0_true: vec![1.0, 0.5],
            x0_hat: vec![2.0, 1.0],
            p0: Matrix::identity(2, 2),
            horizon: 100,
            clusters: [10, 8, 6].into_iter().map(ClusterConfig::with_default_noise).collect(),
            runs: 1000,
            seed: 20_240_601,
            stage1: MeasurementMethod::Smf,
            state_fusion: StateFusionMethod::Sequential,
            noiseless: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.h.is_finite() || self.h <= 0.0 {
            return Err(Error::InvalidScenario("sampling period h must be positive"));
        }
        if !self.q_omega.is_finite() || self.q_omega < 0.0 {
            return Err(Error::InvalidScenario("process noise variance must be non-negative"));
        }
        if self.x0_true.len() != 2 || self.x0_hat.len() != 2 {
            return Err(Error::InvalidScenario("initial state and estimate must have 2 entries"));
        }
        if self.x0_true.iter().chain(&self.x0_hat).any(|v| !v.is_finite()) {
            return Err(Error::InvalidScenario("initial values must be finite"));
        }
        if self.p0.shape() != (2, 2) {
            return Err(Error::InvalidScenario("initial covariance must be 2x2"));
        }
        SpdMatrix::new(self.p0.clone())?;
        if self.horizon == 0 {
            return Err(Error::InvalidScenario("horizon must be at least 1"));
        }
        if self.runs == 0 {
            return Err(Error::InvalidScenario("at least one Monte Carlo run is required"));
        }
        if self.clusters.is_empty() {
            return Err(Error::InvalidScenario("at least one cluster is required"));
        }
        for c in &self.clusters {
            if c.noise_variances.is_empty() {
                return Err(Error::InvalidScenario("every cluster needs a sensor"));
            }
            if c.noise_variances.iter().any(|r| !r.is_finite() || *r <= 0.0) {
                return Err(Error::InvalidScenario("sensor noise variances must be positive"));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<StateSpaceModel> {
        tracking_model(self.h, self.q_omega)
    }

    /// Clusters numbered from 1 in configuration order.
    pub fn cluster_specs(&self) -> Result<Vec<ClusterSpec>> {
        self.clusters
            .iter()
            .enumerate()
            .map(|(i, c)| ClusterSpec::scalar(i + 1, &c.noise_variances))
            .collect()
    }

    pub fn initial_covariance(&self) -> Result<SpdMatrix> {
        SpdMatrix::new(self.p0.clone())
    }

    /// Seed of Monte Carlo run `index`.
    pub fn run_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, &[domain::RUN, index as u64])
    }

    /// FNV-1a hash over every field; identifies the configuration in reports.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        h.f64(self.h);
        h.f64(self.q_omega);
        self.x0_true.iter().for_each(|v| h.f64(*v));
        self.x0_hat.iter().for_each(|v| h.f64(*v));
        self.p0.iter().for_each(|v| h.f64(*v));
        h.u64(self.horizon as u64);
        for c in &self.clusters {
            h.u64(c.noise_variances.len() as u64);
            c.noise_variances.iter().for_each(|v| h.f64(*v));
        }
        h.u64(self.runs as u64);
        h.u64(self.seed);
        h.bytes(self.stage1.as_str().as_bytes());
        h.bytes(self.state_fusion.as_str().as_bytes());
        h.u64(self.noiseless as u64);
        h.0
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn bytes(&mut self, b: &[u8]) {
        for &byte in b {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
}

/// Truth and raw readings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub truth: Trajectory,
    /// `[cluster position][k - 1][sensor position]`
    pub measurements: Vec<Vec<Vec<GaussianMeasurement>>>,
}

pub fn generate_run(config: &ScenarioConfig, run_seed: u64) -> Result<RunData> {
    config.validate()?;
    let mut model = config.model()?;
    let noise = if config.noiseless {
        model = StateSpaceModel::new(
            model.transition().clone(),
            model.noise_input().clone(),
            model.measurement().clone(),
            SpdMatrix::zeros(model.noise_dim()),
        )?;
        MeasurementNoise::Disabled
    } else {
        MeasurementNoise::Sampled
    };
    let truth = simulate_truth(&model, &column(&config.x0_true), config.horizon, run_seed)?;
    let measurements = config
        .cluster_specs()?
        .iter()
        .map(|c| measure_with(&truth, c, &model, run_seed, noise))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunData { truth, measurements })
}

/// Everything computed at one step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub truth: Matrix,
    /// One per cluster for SMF/BMF; empty for SK and MA.
    pub fused_measurements: Vec<FusedMeasurement>,
    pub locals: Vec<LocalEstimate>,
    /// Cross-covariances at step `k`, used by the state fusion.
    pub table: CrossCovarianceTable,
    pub fused: FusedState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_seed: u64,
    pub steps: Vec<StepRecord>,
}

/// One full two-stage run with the configured methods.
pub fn run_two_stage(config: &ScenarioConfig, run_seed: u64) -> Result<RunRecord> {
    let data = generate_run(config, run_seed)?;
    run_two_stage_on(config, &data, config.stage1, config.state_fusion, run_seed)
}

/// Two-stage estimation over pre-generated data, so that several methods
/// can be compared on identical readings.
pub fn run_two_stage_on(
    config: &ScenarioConfig,
    data: &RunData,
    stage1: MeasurementMethod,
    state_fusion: StateFusionMethod,
    run_seed: u64,
) -> Result<RunRecord> {
    let model = config.model()?;
    let p0 = config.initial_covariance()?;
    let m = config.clusters.len();
    let mut filters = (0..m)
        .map(|c| FilterState::new(model.clone(), column(&config.x0_hat), p0.clone(), c + 1))
        .collect::<Result<Vec<_>>>()?;
    let mut table = CrossCovarianceTable::uniform(m, p0.as_matrix(), 0);

    let mut steps = Vec::with_capacity(config.horizon);
    for k in 1..=config.horizon {
        let mut locals = Vec::with_capacity(m);
        let mut fused_measurements = Vec::new();
        for (c, filter) in filters.iter_mut().enumerate() {
            let (estimate, fused) = stage1
                .estimate(filter, &data.measurements[c][k - 1])
                .map_err(|e| e.in_run(k, Some(c + 1)))?;
            filter.accept(estimate.clone()).map_err(|e| e.in_run(k, Some(c + 1)))?;
            fused_measurements.extend(fused);
            locals.push(estimate);
        }

        let gains: Vec<Matrix> = locals.iter().map(|e| e.gain.clone()).collect();
        table = cross_cov_step(&table, &model, &gains).map_err(|e| e.in_run(k, None))?;
        let fused = state_fusion.fuse(&locals, &table).map_err(|e| e.in_run(k, None))?;

        steps.push(StepRecord {
            k,
            truth: data.truth.state(k).clone(),
            fused_measurements,
            locals,
            table: table.clone(),
            fused,
        });
    }
    Ok(RunRecord { run_seed, steps })
}

/// Per-step position RMSE of one stage-one method.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantRmse {
    pub method: MeasurementMethod,
    /// `[cluster position][k - 1]`
    pub local: Vec<Vec<f64>>,
    /// `[k - 1]`
    pub fused: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    pub config_fingerprint: u64,
    pub seed: u64,
    pub runs: usize,
    pub horizon: usize,
    pub variants: Vec<VariantRmse>,
}

impl RmseReport {
    pub fn variant(&self, method: MeasurementMethod) -> Option<&VariantRmse> {
        self.variants.iter().find(|v| v.method == method)
    }
}

/// Position RMSE over `config.runs` runs for the configured stage-one method.
pub fn monte_carlo_rmse(config: &ScenarioConfig) -> Result<RmseReport> {
    monte_carlo_rmse_variants(config, &[config.stage1])
}

/// Same as [`monte_carlo_rmse`] for several stage-one methods, all fed the
/// same truth and readings in each run.
///
/// Squared errors are accumulated in run order, so the report is a pure
/// function of the configuration.
pub fn monte_carlo_rmse_variants(config: &ScenarioConfig, methods: &[MeasurementMethod]) -> Result<RmseReport> {
    config.validate()?;
    if methods.is_empty() {
        return Err(Error::EmptyInput);
    }
    let m = config.clusters.len();
    let t = config.horizon;
    let mut local_sq = vec![vec![vec![0.0; t]; m]; methods.len()];
    let mut fused_sq = vec![vec![0.0; t]; methods.len()];

    for run in 0..config.runs {
        let seed = config.run_seed(run);
        let data = generate_run(config, seed)?;
        for (v, &method) in methods.iter().enumerate() {
            let record = run_two_stage_on(config, &data, method, config.state_fusion, seed)?;
            for step in &record.steps {
                let truth = step.truth[0];
                for (c, local) in step.locals.iter().enumerate() {
                    let e = truth - local.x[0];
                    local_sq[v][c][step.k - 1] += e * e;
                }
                let e = truth - step.fused.x[0];
                fused_sq[v][step.k - 1] += e * e;
            }
        }
    }

    let runs = config.runs as f64;
    let rms = |sum: &f64| libm::sqrt(sum / runs);
    let variants = methods
        .iter()
        .zip(local_sq.iter().zip(&fused_sq))
        .map(|(&method, (local, fused))| VariantRmse {
            method,
            local: local.iter().map(|c| c.iter().map(rms).collect()).collect(),
            fused: fused.iter().map(rms).collect(),
        })
        .collect();
    Ok(RmseReport {
        config_fingerprint: config.fingerprint(),
        seed: config.seed,
        runs: config.runs,
        horizon: t,
        variants,
    })
}
