//! Checks that the alternative fusion routes agree.
//!
//! - Sequential vs batch measurement fusion on random readings.
//! - Fused-measurement filtering (SMF, BMF) vs sequential updates (SK) vs
//!   stacked updates (MA) over a simulated run.
//! - Sequential vs batch state fusion, on a simulated run and on random
//!   consistent joint covariances.
//!
//! Each check reports the largest deviation it saw; thresholds are up to the
//! caller.

use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::kalman::{FilterState, LocalEstimate};
use crate::measfusion::{bmf_fuse, smf_fuse};
use crate::model::GaussianMeasurement;
use crate::numerics::{column, eigen_extremes, max_abs_diff, symmetrize, Matrix, SpdMatrix};
use crate::pipeline::{generate_run, run_two_stage_on, MeasurementMethod, ScenarioConfig, StateFusionMethod};
use crate::rng::{self, domain, StreamRng};
use crate::statefusion::{
    bsf_fuse, bsf_fuse_with, joint_covariance, ssf_fuse, weight_block_sum, CrossCovarianceTable, FusedState, Singular,
};
use crate::Result;

/// Largest absolute entry-wise differences seen.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Deviation {
    pub mean: f64,
    pub covariance: f64,
}

impl Deviation {
    pub fn of(x_a: &Matrix, p_a: &Matrix, x_b: &Matrix, p_b: &Matrix) -> Self {
        Self {
            mean: max_abs_diff(x_a, x_b),
            covariance: max_abs_diff(p_a, p_b),
        }
    }

    pub fn max(self, other: Self) -> Self {
        Self {
            mean: self.mean.max(other.mean),
            covariance: self.covariance.max(other.covariance),
        }
    }

    pub fn worst(&self) -> f64 {
        self.mean.max(self.covariance)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.mean <= tol && self.covariance <= tol
    }
}

/// Random symmetric positive definite `n x n` matrix, scaled by a random
/// factor in `[e^-2, e^2]`.
pub fn random_spd(rng: &mut StreamRng, n: usize) -> SpdMatrix {
    let cols = n + 3;
    let g = Matrix::from_fn(n, cols, |_, _| StandardNormal.sample(rng));
    let scale = libm::exp(Uniform::new(-2.0, 2.0).expect("valid range").sample(rng));
    let m = (&g * g.transpose()) / cols as f64 + Matrix::identity(n, n) * 0.1;
    symmetrize(&(m * scale)).expect("Gram matrix plus ridge is positive definite")
}

/// A random positive definite joint covariance of `count` stacked
/// `dim`-dimensional estimation errors.
pub fn random_joint_covariance(rng: &mut StreamRng, dim: usize, count: usize) -> Matrix {
    let n = dim * count;
    let cols = n + 4;
    let g = Matrix::from_fn(n, cols, |_, _| StandardNormal.sample(rng));
    (&g * g.transpose()) / cols as f64 + Matrix::identity(n, n) * 0.05
}

/// `count` estimates with random means whose covariances are the diagonal
/// blocks of `joint`, plus the table of its off-diagonal blocks.
pub fn estimates_from_joint(
    rng: &mut StreamRng,
    joint: &Matrix,
    dim: usize,
    step: usize,
) -> Result<(Vec<LocalEstimate>, CrossCovarianceTable)> {
    let count = joint.nrows() / dim;
    let estimates = (0..count)
        .map(|i| {
            let p = symmetrize(&joint.view((i * dim, i * dim), (dim, dim)).into_owned())?;
            let x = Matrix::from_fn(dim, 1, |_, _| StandardNormal.sample(rng));
            LocalEstimate::prior(x, p, i + 1, step)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((estimates, CrossCovarianceTable::from_joint(joint, dim, step)?))
}

/// Sequential vs batch measurement fusion on `cases` random inputs with
/// `q` in `1..=3` and `1..=10` readings each.
pub fn measurement_fusion_cases(cases: usize, seed: u64) -> Result<Deviation> {
    let mut rng = rng::stream(seed, &[domain::PROPERTY_CASES, 1]);
    let mut worst = Deviation::default();
    for _ in 0..cases {
        let q = Uniform::new_inclusive(1usize, 3).expect("valid range").sample(&mut rng);
        let n = Uniform::new_inclusive(1usize, 10)
            .expect("valid range")
            .sample(&mut rng);
        let readings = (0..n)
            .map(|i| {
                let noise = random_spd(&mut rng, q);
                let y = Matrix::from_fn(q, 1, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    3.0 * z
                });
                GaussianMeasurement::new(y, noise, 1, i + 1, 1)
            })
            .collect::<Result<Vec<_>>>()?;
        let s = smf_fuse(&readings)?;
        let b = bmf_fuse(&readings)?;
        worst = worst.max(Deviation::of(&s.y, s.noise(), &b.y, b.noise()));
    }
    Ok(worst)
}

/// Deviations of BMF, SK and MA from SMF for one cluster over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FourWayReport {
    pub bmf: Deviation,
    pub sk: Deviation,
    pub ma: Deviation,
    pub steps: usize,
}

impl FourWayReport {
    pub fn worst(&self) -> f64 {
        self.bmf.worst().max(self.sk.worst()).max(self.ma.worst())
    }
}

/// Runs four independent local filters for cluster position `cluster` on the
/// same readings and compares them to the SMF filter at every step.
pub fn four_way(config: &ScenarioConfig, cluster: usize, run_seed: u64) -> Result<FourWayReport> {
    let data = generate_run(config, run_seed)?;
    let model = config.model()?;
    let p0 = config.initial_covariance()?;
    let readings = data
        .measurements
        .get(cluster)
        .ok_or(crate::Error::InvalidScenario("no such cluster"))?;
    let mut filters = MeasurementMethod::ALL
        .iter()
        .map(|_| FilterState::new(model.clone(), column(&config.x0_hat), p0.clone(), cluster + 1))
        .collect::<Result<Vec<_>>>()?;

    let mut report = FourWayReport {
        steps: readings.len(),
        ..Default::default()
    };
    for step_readings in readings {
        let mut estimates = Vec::with_capacity(4);
        for (f, method) in filters.iter_mut().zip(MeasurementMethod::ALL) {
            let (est, _) = method.estimate(f, step_readings)?;
            f.accept(est.clone())?;
            estimates.push(est);
        }
        let smf = &estimates[0];
        let dev = |e: &LocalEstimate| Deviation::of(&smf.x, &smf.p, &e.x, &e.p);
        report.bmf = report.bmf.max(dev(&estimates[1]));
        report.sk = report.sk.max(dev(&estimates[2]));
        report.ma = report.ma.max(dev(&estimates[3]));
    }
    Ok(report)
}

/// Sequential vs batch state fusion at every step of one simulated run
/// (both fed the same local estimates and cross-covariances).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StateFusionReport {
    /// Sequential minus batch result.
    pub deviation: Deviation,
    /// Largest entry of `sum_i W_i - I` over the sequential weight rows.
    pub weight_sum_error: f64,
    /// Largest entry of `P - W Omega W^T` for the sequential result, i.e.
    /// how far its reported covariance is from its actual error covariance.
    pub covariance_consistency: f64,
    /// Smallest eigenvalue of `P_seq - P_batch`; negative beyond rounding
    /// would mean the batch result is not optimal.
    pub min_gap_eigenvalue: f64,
    pub cases: usize,
}

impl StateFusionReport {
    fn record(&mut self, seq: &FusedState, batch: &FusedState, omega: &Matrix) -> Result<()> {
        let first = self.cases == 0;
        self.deviation = self.deviation.max(Deviation::of(&seq.x, &seq.p, &batch.x, &batch.p));
        self.weight_sum_error = self.weight_sum_error.max(weight_sum_error(&seq.weight_row));
        let actual = &seq.weight_row * omega * seq.weight_row.transpose();
        self.covariance_consistency = self.covariance_consistency.max(max_abs_diff(&seq.p, &actual));
        let (gap, _) = eigen_extremes(&(seq.p.as_matrix() - batch.p.as_matrix()));
        self.min_gap_eigenvalue = if first { gap } else { self.min_gap_eigenvalue.min(gap) };
        self.cases += 1;
        Ok(())
    }
}

pub fn state_fusion_run(config: &ScenarioConfig, run_seed: u64) -> Result<StateFusionReport> {
    let data = generate_run(config, run_seed)?;
    let record = run_two_stage_on(config, &data, config.stage1, StateFusionMethod::Sequential, run_seed)?;
    let mut report = StateFusionReport::default();
    for step in &record.steps {
        let batch =
            bsf_fuse_with(&step.locals, &step.table, Singular::Generalized).map_err(|e| e.in_run(step.k, None))?;
        let omega = joint_covariance(&step.locals, &step.table)?;
        report.record(&step.fused, &batch, &omega)?;
    }
    Ok(report)
}

fn weight_sum_error(row: &Matrix) -> f64 {
    let n = row.nrows();
    (weight_block_sum(row, n) - Matrix::identity(n, n)).amax()
}

/// Sequential vs batch state fusion on `cases` random joint covariances of
/// `count` estimates of dimension `dim`.
pub fn state_fusion_cases(cases: usize, dim: usize, count: usize, seed: u64) -> Result<StateFusionReport> {
    let mut rng = rng::stream(seed, &[domain::PROPERTY_CASES, 2]);
    let mut report = StateFusionReport::default();
    for _ in 0..cases {
        let joint = random_joint_covariance(&mut rng, dim, count);
        let (estimates, table) = estimates_from_joint(&mut rng, &joint, dim, 0)?;
        let s = ssf_fuse(&estimates, &table)?;
        let b = bsf_fuse(&estimates, &table)?;
        report.record(&s, &b, &joint)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_spd_is_well_conditioned() {
        let mut rng = rng::stream(1, &[]);
        for n in 1..5 {
            let m = random_spd(&mut rng, n);
            assert!(m.min_eigenvalue() > 0.0);
            assert!(m.condition_number() < 1e6);
        }
    }

    #[test]
    fn small_batches_agree() {
        assert!(measurement_fusion_cases(50, 9).unwrap().within(1e-10));
        let r = state_fusion_cases(50, 2, 3, 9).unwrap();
        assert_eq!(r.cases, 50);
        assert!(r.weight_sum_error < 1e-10);
        assert!(r.covariance_consistency < 1e-10);
        assert!(r.min_gap_eigenvalue > -1e-10);
    }

    #[test]
    fn four_way_short_run() {
        let c = ScenarioConfig {
            horizon: 20,
            ..ScenarioConfig::builtin()
        };
        let r = four_way(&c, 0, 4).unwrap();
        assert_eq!(r.steps, 20);
        assert!(r.worst() < 1e-8, "{r:?}");
    }
}
