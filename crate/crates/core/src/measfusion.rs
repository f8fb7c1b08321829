//! Measurement fusion inside a cluster.
//!
//! Sequential fusion folds the cluster's readings pairwise in arrival order,
//! `R_(j) = (R_(j-1)^-1 + R_{j+1}^-1)^-1` and
//! `y_(j) = R_(j) (R_(j-1)^-1 y_(j-1) + R_{j+1}^-1 y_{j+1})`.
//! Batch fusion is the weighted least squares solution over all readings at
//! once. The two agree exactly in exact arithmetic; the pairwise recursion is
//! kept literal here rather than rewritten as an information sum.

use alloc::vec::Vec;

use crate::model::GaussianMeasurement;
use crate::numerics::{symmetrize, Matrix, SpdMatrix};
use crate::{Error, Result};

/// An equivalent single measurement of `C x(k)` produced by fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedMeasurement {
    pub y: Matrix,
    noise: SpdMatrix,
    pub step: usize,
    pub cluster_id: usize,
    /// How many raw readings went into this value.
    pub fused_count: usize,
}

impl FusedMeasurement {
    pub fn noise(&self) -> &SpdMatrix {
        &self.noise
    }

    pub fn dim(&self) -> usize {
        self.noise.dim()
    }

    /// Builds one directly; `noise` must be positive definite.
    pub fn new(y: Matrix, noise: SpdMatrix, step: usize, cluster_id: usize) -> Result<Self> {
        let m = GaussianMeasurement::new(y, noise, cluster_id, 0, step)?;
        Ok(Self::from(&m))
    }
}

impl From<&GaussianMeasurement> for FusedMeasurement {
    fn from(m: &GaussianMeasurement) -> Self {
        Self {
            y: m.y.clone(),
            noise: m.noise().clone(),
            step: m.step,
            cluster_id: m.cluster_id,
            fused_count: 1,
        }
    }
}

fn check_compatible(
    expected_step: usize,
    expected_cluster: usize,
    expected_dim: usize,
    next: &GaussianMeasurement,
) -> Result<()> {
    if next.step != expected_step {
        return Err(Error::StepMismatch {
            expected: expected_step,
            found: next.step,
        });
    }
    if next.cluster_id != expected_cluster {
        return Err(Error::ClusterMismatch {
            expected: expected_cluster,
            found: next.cluster_id,
        });
    }
    if next.dim() != expected_dim {
        return Err(Error::dims("measurement", (expected_dim, 1), (next.dim(), 1)));
    }
    Ok(())
}

/// One pairwise fusion of the running result with the next reading.
pub fn smf_step(prev: &FusedMeasurement, next: &GaussianMeasurement) -> Result<FusedMeasurement> {
    check_compatible(prev.step, prev.cluster_id, prev.dim(), next)?;

    let prev_info = prev.noise.inverse()?;
    let next_info = next.noise().inverse()?;
    let noise = symmetrize(&(prev_info.as_matrix() + next_info.as_matrix()))?.inverse()?;
    let y = noise.as_matrix() * (prev_info.as_matrix() * &prev.y + next_info.as_matrix() * &next.y);

    Ok(FusedMeasurement {
        y,
        noise,
        step: prev.step,
        cluster_id: prev.cluster_id,
        fused_count: prev.fused_count + 1,
    })
}

/// Sequential fusion of `measurements` in list order.
pub fn smf_fuse(measurements: &[GaussianMeasurement]) -> Result<FusedMeasurement> {
    let (first, rest) = measurements.split_first().ok_or(Error::EmptyInput)?;
    rest.iter()
        .try_fold(FusedMeasurement::from(first), |acc, m| smf_step(&acc, m))
}

/// All intermediate results `(y_(j), R_(j))` for `j = 0..n-1`; the last one
/// is what [`smf_fuse`] returns.
pub fn smf_partials(measurements: &[GaussianMeasurement]) -> Result<Vec<FusedMeasurement>> {
    let (first, rest) = measurements.split_first().ok_or(Error::EmptyInput)?;
    let mut out = Vec::with_capacity(measurements.len());
    out.push(FusedMeasurement::from(first));
    for m in rest {
        let next = smf_step(out.last().expect("seeded above"), m)?;
        out.push(next);
    }
    Ok(out)
}

/// Batch weighted least squares fusion:
/// `R_f = (sum R_i^-1)^-1`, `y_f = R_f sum R_i^-1 y_i`.
pub fn bmf_fuse(measurements: &[GaussianMeasurement]) -> Result<FusedMeasurement> {
    let first = measurements.first().ok_or(Error::EmptyInput)?;
    let q = first.dim();
    let mut info = Matrix::zeros(q, q);
    let mut info_y = Matrix::zeros(q, 1);
    for m in measurements {
        check_compatible(first.step, first.cluster_id, q, m)?;
        let r_inv = m.noise().inverse()?;
        info_y += r_inv.as_matrix() * &m.y;
        info += r_inv.as_matrix();
    }
    let noise = symmetrize(&info)?.inverse()?;
    let y = noise.as_matrix() * info_y;
    Ok(FusedMeasurement {
        y,
        noise,
        step: first.step,
        cluster_id: first.cluster_id,
        fused_count: measurements.len(),
    })
}
