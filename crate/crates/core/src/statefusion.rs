//! Fusion of the cluster heads' local estimates with matrix weights.
//!
//! Sequential fusion combines the running fused estimate `x_(j-1)` with the
//! next local estimate `x_{j+1}` through the optimal two-input rule, using
//! the joint covariance
//!
//! ```text
//! Omega_(j) = [ P_(j-1)          P_(j-1),j+1 ]
//!             [ P_(j-1),j+1^T    P_{j+1}     ]
//! ```
//!
//! The running cross-covariance `P_(t),c` between the partial result and a
//! later estimate `c` follows from the fused error
//! `e_(t) = D1_(t) e_(t-1) + D2_(t) e_{t+1}`:
//! `P_(t),c = D1_(t) P_(t-1),c + D2_(t) P_{t+1},c`, seeded with `P_(0),c = P_{1,c}`.
//!
//! Batch fusion solves the same problem over the full `m n x m n` joint
//! covariance at once. Both give identical results in exact arithmetic.
//!
//! Indices in this module are zero-based positions in the estimate list.
//!
//! A rank-deficient joint covariance is rejected by default. When every
//! estimator starts from the same prior, the first step's joint covariance is
//! exactly singular: the estimates coincide along directions the first gains
//! do not touch. The minimum-variance combination is still unique there, and
//! [`Singular::Generalized`] computes it with the Moore-Penrose inverse.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::kalman::LocalEstimate;
use crate::model::StateSpaceModel;
use nalgebra::SymmetricEigen;

use crate::numerics::{spd_solve, stacked_identity, symmetrize, Matrix, SpdMatrix, CONDITION_LIMIT};
use crate::{Error, Result};

/// Pairwise error cross-covariances `P_{j,d}` of `m` local estimators.
///
/// Only `j < d` is stored; `get(d, j)` returns the transpose, so
/// `P_{j,d} = P_{d,j}^T` holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCovarianceTable {
    pub step: usize,
    count: usize,
    dim: usize,
    entries: BTreeMap<(usize, usize), Matrix>,
}

impl CrossCovarianceTable {
    pub fn empty(count: usize, dim: usize, step: usize) -> Self {
        Self {
            step,
            count,
            dim,
            entries: BTreeMap::new(),
        }
    }

    /// Every pair starts at `p0`: all estimators share one initial error.
    pub fn uniform(count: usize, p0: &Matrix, step: usize) -> Self {
        let mut t = Self::empty(count, p0.nrows(), step);
        for j in 0..count {
            for d in j + 1..count {
                t.entries.insert((j, d), p0.clone());
            }
        }
        t
    }

    /// Off-diagonal blocks of a joint covariance of `count` stacked estimates.
    pub fn from_joint(joint: &Matrix, dim: usize, step: usize) -> Result<Self> {
        if !joint.is_square() || dim == 0 || joint.nrows() % dim != 0 {
            return Err(Error::dims("joint covariance", (dim, dim), joint.shape()));
        }
        let count = joint.nrows() / dim;
        let mut t = Self::empty(count, dim, step);
        for j in 0..count {
            for d in j + 1..count {
                t.entries
                    .insert((j, d), joint.view((j * dim, d * dim), (dim, dim)).into_owned());
            }
        }
        Ok(t)
    }

    pub fn insert(&mut self, j: usize, d: usize, p: Matrix) -> Result<()> {
        if j == d || j >= self.count || d >= self.count {
            return Err(Error::IncompleteTable { pair: (j, d) });
        }
        if p.shape() != (self.dim, self.dim) {
            return Err(Error::dims("cross-covariance", (self.dim, self.dim), p.shape()));
        }
        if j < d {
            self.entries.insert((j, d), p);
        } else {
            self.entries.insert((d, j), p.transpose());
        }
        Ok(())
    }

    pub fn get(&self, j: usize, d: usize) -> Result<Matrix> {
        if j < d {
            self.entries.get(&(j, d)).cloned()
        } else {
            self.entries.get(&(d, j)).map(|p| p.transpose())
        }
        .ok_or(Error::IncompleteTable { pair: (j, d) })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_complete(&self) -> bool {
        self.entries.len() == self.count * self.count.saturating_sub(1) / 2
    }

    fn ensure_complete(&self) -> Result<()> {
        for j in 0..self.count {
            for d in j + 1..self.count {
                if !self.entries.contains_key(&(j, d)) {
                    return Err(Error::IncompleteTable { pair: (j, d) });
                }
            }
        }
        Ok(())
    }
}

/// Advances every `P_{j,d}` one step:
/// `P_{j,d}(k) = (I - K_j C) (A P_{j,d}(k-1) A^T + B Q B^T) (I - K_d C)^T`.
///
/// `gains[j]` is the gain estimator `j` used at step `k`.
pub fn cross_cov_step(
    table: &CrossCovarianceTable,
    model: &StateSpaceModel,
    gains: &[Matrix],
) -> Result<CrossCovarianceTable> {
    let n = model.state_dim();
    let q = model.measurement_dim();
    if gains.len() != table.count {
        return Err(Error::dims("gain list", (table.count, 1), (gains.len(), 1)));
    }
    if table.dim != n {
        return Err(Error::dims("cross-covariance", (n, n), (table.dim, table.dim)));
    }
    let k = table.step + 1;
    let c = model.measurement_at(k);
    let a = model.transition_at(k - 1);
    let process = model.state_process_noise_at(k - 1);

    let error_maps = gains
        .iter()
        .map(|g| {
            if g.shape() != (n, q) {
                return Err(Error::dims("gain", (n, q), g.shape()));
            }
            Ok(Matrix::identity(n, n) - g * c)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut next = CrossCovarianceTable::empty(table.count, n, k);
    for j in 0..table.count {
        for d in j + 1..table.count {
            let prev = table.get(j, d)?;
            let predicted = a * prev * a.transpose() + &process;
            next.entries
                .insert((j, d), &error_maps[j] * predicted * error_maps[d].transpose());
        }
    }
    Ok(next)
}

/// Weights `(D1_(j), D2_(j))` of the sequential fusions `j = 1..m-1`, stored
/// at index `j - 1`. `D1_(j)` multiplies the running result, `D2_(j)` the
/// newly arrived estimate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusionWeights {
    pub deltas: Vec<(Matrix, Matrix)>,
}

impl FusionWeights {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// Largest entry of `|D1 + D2 - I|` over all fusions.
    pub fn max_identity_deviation(&self) -> f64 {
        self.deltas
            .iter()
            .map(|(d1, d2)| {
                let n = d1.nrows();
                (d1 + d2 - Matrix::identity(n, n)).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// What to do when the joint covariance is singular or ill-conditioned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum Singular {
    /// Fail with [`Error::IllConditioned`].
    #[default]
    Reject,
    /// Use the pseudo-inverse, provided every null direction of the joint
    /// covariance has block sum zero (the estimates agree exactly along it).
    /// Otherwise fail as `Reject` does.
    Generalized,
}

/// Null directions must satisfy `|I_o^T v| <= NULL_SPACE_TOLERANCE`.
const NULL_SPACE_TOLERANCE: f64 = 1e-8;

/// `Omega^-1 I_o`, or `Omega^+ I_o` under [`Singular::Generalized`].
fn information_columns(omega: &SpdMatrix, n: usize, count: usize, policy: Singular) -> Result<Matrix> {
    let stacked = stacked_identity(n, count);
    match spd_solve(omega, &stacked) {
        Err(Error::IllConditioned { condition }) if policy == Singular::Generalized => {
            let eig = SymmetricEigen::new(omega.as_matrix().clone());
            let cutoff = eig.eigenvalues.amax() / CONDITION_LIMIT;
            let mut g = Matrix::zeros(n * count, n);
            for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
                let v = eig.eigenvectors.column(i);
                let projected = stacked.transpose() * v;
                if lambda > cutoff {
                    g += v * projected.transpose() / lambda;
                } else if projected.amax() > NULL_SPACE_TOLERANCE {
                    return Err(Error::IllConditioned { condition });
                }
            }
            Ok(g)
        }
        other => other,
    }
}

/// Result of fusing two estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseFusion {
    pub x: Matrix,
    pub p: SpdMatrix,
    /// Weight on the first input.
    pub delta_a: Matrix,
    /// Weight on the second input.
    pub delta_b: Matrix,
}

/// Optimal linear unbiased fusion of two correlated estimates.
///
/// With `G = Omega^-1 e` and `e = [I; I]`, the fused covariance is
/// `(e^T G)^-1` and the stacked column `G (e^T G)^-1` holds the transposed
/// weights, so `x = D_a x_a + D_b x_b` with `D_a + D_b = I`.
pub fn pairwise_fuse(
    x_a: &Matrix,
    p_a: &SpdMatrix,
    x_b: &Matrix,
    p_b: &SpdMatrix,
    p_ab: &Matrix,
) -> Result<PairwiseFusion> {
    pairwise_fuse_with(x_a, p_a, x_b, p_b, p_ab, Singular::Reject)
}

pub fn pairwise_fuse_with(
    x_a: &Matrix,
    p_a: &SpdMatrix,
    x_b: &Matrix,
    p_b: &SpdMatrix,
    p_ab: &Matrix,
    policy: Singular,
) -> Result<PairwiseFusion> {
    let n = p_a.dim();
    if p_b.dim() != n {
        return Err(Error::dims("second covariance", (n, n), p_b.shape()));
    }
    if p_ab.shape() != (n, n) {
        return Err(Error::dims("cross-covariance", (n, n), p_ab.shape()));
    }
    if x_a.shape() != (n, 1) || x_b.shape() != (n, 1) {
        return Err(Error::dims("estimate mean", (n, 1), x_b.shape()));
    }

    let mut omega = Matrix::zeros(2 * n, 2 * n);
    omega.view_mut((0, 0), (n, n)).copy_from(p_a.as_matrix());
    omega.view_mut((0, n), (n, n)).copy_from(p_ab);
    omega.view_mut((n, 0), (n, n)).copy_from(&p_ab.transpose());
    omega.view_mut((n, n), (n, n)).copy_from(p_b.as_matrix());
    let omega = symmetrize(&omega)?;

    let g = information_columns(&omega, n, 2, policy)?;
    let info = g.view((0, 0), (n, n)) + g.view((n, 0), (n, n));
    let p = symmetrize(&info)?.inverse()?;
    let stacked = g * p.as_matrix();
    let delta_a = stacked.view((0, 0), (n, n)).transpose();
    let delta_b = stacked.view((n, 0), (n, n)).transpose();
    let x = &delta_a * x_a + &delta_b * x_b;
    Ok(PairwiseFusion { x, p, delta_a, delta_b })
}

/// A fused state estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedState {
    pub x: Matrix,
    pub p: SpdMatrix,
    /// Block row `[W_1 .. W_m]` with `x = sum W_i x_i`.
    pub weight_row: Matrix,
    /// Per-fusion weights; empty for batch fusion.
    pub weights: FusionWeights,
    /// `P_(0) .. P_(m-1)` of the sequential fusion; empty for batch fusion.
    pub partials: Vec<SpdMatrix>,
    /// Cross-covariance `P_(j-1),j+1` fed to fusion `j`; empty for batch fusion.
    pub running_cross: Vec<Matrix>,
    pub step: usize,
}

fn check_inputs(estimates: &[LocalEstimate], table: &CrossCovarianceTable) -> Result<usize> {
    let first = estimates.first().ok_or(Error::EmptyInput)?;
    let n = first.p.dim();
    for e in estimates {
        if e.p.dim() != n || e.x.shape() != (n, 1) {
            return Err(Error::dims("local estimate", (n, 1), e.x.shape()));
        }
        if e.step != first.step {
            return Err(Error::StepMismatch {
                expected: first.step,
                found: e.step,
            });
        }
    }
    if estimates.len() > 1 {
        if table.count != estimates.len() {
            return Err(Error::dims(
                "cross-covariance table",
                (estimates.len(), estimates.len()),
                (table.count, table.count),
            ));
        }
        if table.dim != n {
            return Err(Error::dims("cross-covariance", (n, n), (table.dim, table.dim)));
        }
        if table.step != first.step {
            return Err(Error::StepMismatch {
                expected: first.step,
                found: table.step,
            });
        }
        table.ensure_complete()?;
    }
    Ok(n)
}

/// Sequential state fusion in list order.
///
/// Each step is optimal for its two inputs, but the result is in general not
/// the batch optimum of [`bsf_fuse`]: `x_(j)` may only reuse earlier
/// estimates through the fixed combination `x_(j-1)`. Its reported `p` is the
/// exact error covariance of the returned combination.
pub fn ssf_fuse(estimates: &[LocalEstimate], table: &CrossCovarianceTable) -> Result<FusedState> {
    ssf_fuse_with(estimates, table, Singular::Reject)
}

pub fn ssf_fuse_with(
    estimates: &[LocalEstimate],
    table: &CrossCovarianceTable,
    policy: Singular,
) -> Result<FusedState> {
    let n = check_inputs(estimates, table)?;
    let m = estimates.len();
    let first = &estimates[0];

    let mut x = first.x.clone();
    let mut p = first.p.clone();
    let mut partials = Vec::with_capacity(m);
    partials.push(p.clone());
    let mut weights = FusionWeights::default();
    let mut used = Vec::with_capacity(m.saturating_sub(1));
    // running[c] = P_(t),c for the estimates not fused yet
    let mut running = (0..m)
        .map(|c| {
            if c == 0 {
                Ok(Matrix::zeros(n, n))
            } else {
                table.get(0, c)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    for j in 1..m {
        let next = &estimates[j];
        let fused = pairwise_fuse_with(&x, &p, &next.x, &next.p, &running[j], policy)?;
        for (c, cross) in running.iter_mut().enumerate().skip(j + 1) {
            *cross = &fused.delta_a * &*cross + &fused.delta_b * table.get(j, c)?;
        }
        x = fused.x;
        p = fused.p;
        partials.push(p.clone());
        weights.deltas.push((fused.delta_a, fused.delta_b));
        used.push(core::mem::replace(&mut running[j], Matrix::zeros(0, 0)));
    }

    let weight_row = flatten_weights(&weights, n);
    Ok(FusedState {
        x,
        p,
        weight_row,
        weights,
        partials,
        running_cross: used,
        step: first.step,
    })
}

/// Batch fusion over the full joint covariance:
/// `W = Omega^-1 I_o (I_o^T Omega^-1 I_o)^-1`, `x = W^T [x_1; ..; x_m]`,
/// `P = (I_o^T Omega^-1 I_o)^-1`.
pub fn bsf_fuse(estimates: &[LocalEstimate], table: &CrossCovarianceTable) -> Result<FusedState> {
    bsf_fuse_with(estimates, table, Singular::Reject)
}

pub fn bsf_fuse_with(
    estimates: &[LocalEstimate],
    table: &CrossCovarianceTable,
    policy: Singular,
) -> Result<FusedState> {
    let n = check_inputs(estimates, table)?;
    let m = estimates.len();
    let omega = symmetrize(&joint_covariance(estimates, table)?)?;
    let mut stacked_x = Matrix::zeros(m * n, 1);
    for (i, e) in estimates.iter().enumerate() {
        stacked_x.view_mut((i * n, 0), (n, 1)).copy_from(&e.x);
    }
    let g = information_columns(&omega, n, m, policy)?;
    let info = (0..m).fold(Matrix::zeros(n, n), |acc, i| acc + g.view((i * n, 0), (n, n)));
    let p = symmetrize(&info)?.inverse()?;
    let weight_row = (g * p.as_matrix()).transpose();
    let x = &weight_row * stacked_x;
    Ok(FusedState {
        x,
        p,
        weight_row,
        weights: FusionWeights::default(),
        partials: Vec::new(),
        running_cross: Vec::new(),
        step: estimates[0].step,
    })
}

/// The `m n x m n` joint error covariance: `P_i` on the diagonal,
/// `P_{i,d}` off it.
pub fn joint_covariance(estimates: &[LocalEstimate], table: &CrossCovarianceTable) -> Result<Matrix> {
    let n = check_inputs(estimates, table)?;
    let m = estimates.len();
    let mut omega = Matrix::zeros(m * n, m * n);
    for (i, e) in estimates.iter().enumerate() {
        omega.view_mut((i * n, i * n), (n, n)).copy_from(e.p.as_matrix());
        for d in i + 1..m {
            let cross = table.get(i, d)?;
            omega.view_mut((d * n, i * n), (n, n)).copy_from(&cross.transpose());
            omega.view_mut((i * n, d * n), (n, n)).copy_from(&cross);
        }
    }
    Ok(omega)
}

/// The sequential weights unrolled into one block row over all `m` inputs:
/// block `i` (1-based) is `D1_(m-1) D1_(m-2) .. D1_(i) D2_(i-1)` with
/// `D2_(0) = I`. The blocks sum to `I`.
pub fn flatten_weights(w: &FusionWeights, dim: usize) -> Matrix {
    let m = w.len() + 1;
    let mut row = Matrix::zeros(dim, m * dim);
    let mut prefix = Matrix::identity(dim, dim);
    for i in (1..=m).rev() {
        let block = if i == 1 {
            prefix.clone()
        } else {
            let (d1, d2) = &w.deltas[i - 2];
            let b = &prefix * d2;
            prefix = &prefix * d1;
            b
        };
        row.view_mut((0, (i - 1) * dim), (dim, dim)).copy_from(&block);
    }
    row
}

/// Sum of the blocks of [`flatten_weights`]; the identity for valid weights.
pub fn weight_block_sum(row: &Matrix, dim: usize) -> Matrix {
    let m = row.ncols() / dim;
    (0..m).fold(Matrix::zeros(dim, dim), |acc, i| {
        acc + row.view((0, i * dim), (dim, dim))
    })
}

/// Cross-covariance between the partial result `x_(j-1)` and estimate `j+1`
/// (1-based `j`) in closed form,
/// `sum_{d=1..j} D1_(j-1) .. D1_(d) D2_(d-1) P_{d,j+1}` with `D2_(0) = I`.
///
/// This is the unrolled form of the running recursion in [`ssf_fuse`] and
/// exists to cross-check it; `weights` must hold at least `j - 1` fusions.
pub fn cross_cov_closed_form(weights: &FusionWeights, table: &CrossCovarianceTable, j: usize) -> Result<Matrix> {
    if j == 0 || j >= table.count || weights.len() + 1 < j {
        return Err(Error::IncompleteTable { pair: (j, j + 1) });
    }
    let n = table.dim;
    let mut sum = Matrix::zeros(n, n);
    for d in 1..=j {
        let mut term = Matrix::identity(n, n);
        for t in (d..j).rev() {
            term *= &weights.deltas[t - 1].0;
        }
        if d > 1 {
            term *= &weights.deltas[d - 2].1;
        }
        // table positions are zero-based: estimate d -> d-1, estimate j+1 -> j
        sum += term * table.get(d - 1, j)?;
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{column, loewner_leq, max_abs_diff};
    use alloc::vec;

    fn spd(rows: usize, data: &[f64]) -> SpdMatrix {
        symmetrize(&Matrix::from_row_slice(rows, rows, data)).unwrap()
    }

    fn est(x: &[f64], p: SpdMatrix) -> LocalEstimate {
        LocalEstimate::prior(column(x), p, 0, 4).unwrap()
    }

    /// A consistent 3-estimate joint covariance (positive definite).
    fn joint3() -> Matrix {
        let l = Matrix::from_row_slice(
            6,
            6,
            &[
                1.2, 0.0, 0.0, 0.0, 0.0, 0.0, //
                0.3, 0.9, 0.0, 0.0, 0.0, 0.0, //
                0.5, -0.2, 1.1, 0.0, 0.0, 0.0, //
                0.1, 0.4, 0.2, 0.8, 0.0, 0.0, //
                0.6, 0.1, -0.3, 0.2, 1.3, 0.0, //
                -0.2, 0.3, 0.1, 0.5, 0.2, 0.7,
            ],
        );
        &l * l.transpose()
    }

    fn estimates_from_joint(joint: &Matrix, n: usize) -> Vec<LocalEstimate> {
        (0..joint.nrows() / n)
            .map(|i| {
                let p = symmetrize(&joint.view((i * n, i * n), (n, n)).into_owned()).unwrap();
                let x: Vec<f64> = (0..n).map(|r| 0.3 * (i + 1) as f64 - 0.7 * r as f64).collect();
                est(&x, p)
            })
            .collect()
    }

    #[test]
    fn symmetric_uncorrelated_pair() {
        let r = pairwise_fuse(
            &column(&[1.0, 2.0]),
            &SpdMatrix::identity(2),
            &column(&[3.0, 0.0]),
            &SpdMatrix::identity(2),
            &Matrix::zeros(2, 2),
        )
        .unwrap();
        let half = Matrix::identity(2, 2) * 0.5;
        assert!(max_abs_diff(&r.delta_a, &half) < 1e-15);
        assert!(max_abs_diff(&r.delta_b, &half) < 1e-15);
        assert!(max_abs_diff(&r.p, &half) < 1e-15);
        assert!(max_abs_diff(&r.x, &column(&[2.0, 1.0])) < 1e-15);
    }

    #[test]
    fn scalar_information_weighting() {
        let r = pairwise_fuse(
            &column(&[1.0]),
            &SpdMatrix::from_diagonal(&[0.5]).unwrap(),
            &column(&[2.0]),
            &SpdMatrix::from_diagonal(&[2.0]).unwrap(),
            &Matrix::zeros(1, 1),
        )
        .unwrap();
        assert!((r.delta_a[(0, 0)] - 0.8).abs() < 1e-15);
        assert!((r.delta_b[(0, 0)] - 0.2).abs() < 1e-15);
        assert!((r.p[(0, 0)] - 0.4).abs() < 1e-15);
        assert!((r.x[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn dominated_second_estimate_is_ignored() {
        // b = a + independent noise, so P_ab = P_a and b carries nothing new
        let p_a = spd(2, &[1.0, 0.3, 0.3, 0.5]);
        let p_b = spd(2, &[1.8, 0.2, 0.2, 1.1]);
        let r = pairwise_fuse(&column(&[0.4, -0.1]), &p_a, &column(&[2.0, 3.0]), &p_b, p_a.as_matrix()).unwrap();
        assert!(max_abs_diff(&r.x, &column(&[0.4, -0.1])) < 1e-12);
        assert!(max_abs_diff(&r.p, &p_a) < 1e-12);
    }

    #[test]
    fn self_fusion_is_ill_conditioned() {
        let p = SpdMatrix::identity(2);
        let x = column(&[1.0, 1.0]);
        assert!(matches!(
            pairwise_fuse(&x, &p, &x, &p, p.as_matrix()),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn weights_reproduce_fused_covariance() {
        // Only the transposed weight blocks satisfy P = D Omega D^T when the
        // blocks do not commute.
        let joint = joint3();
        let p_a = symmetrize(&joint.view((0, 0), (2, 2)).into_owned()).unwrap();
        let p_b = symmetrize(&joint.view((2, 2), (2, 2)).into_owned()).unwrap();
        let p_ab = joint.view((0, 2), (2, 2)).into_owned();
        let r = pairwise_fuse(&column(&[0.0, 0.0]), &p_a, &column(&[0.0, 0.0]), &p_b, &p_ab).unwrap();
        let mut row = Matrix::zeros(2, 4);
        row.view_mut((0, 0), (2, 2)).copy_from(&r.delta_a);
        row.view_mut((0, 2), (2, 2)).copy_from(&r.delta_b);
        let omega = joint.view((0, 0), (4, 4)).into_owned();
        assert!(max_abs_diff(&(&row * omega * row.transpose()), &r.p) < 1e-12);
        assert!(max_abs_diff(&(&r.delta_a + &r.delta_b), &Matrix::identity(2, 2)) < 1e-12);
    }

    #[test]
    fn ssf_single_and_pair() {
        let e = est(&[1.0, 2.0], spd(2, &[2.0, 0.1, 0.1, 1.0]));
        let table = CrossCovarianceTable::empty(1, 2, 4);
        let s = ssf_fuse(core::slice::from_ref(&e), &table).unwrap();
        assert_eq!(s.x, e.x);
        assert_eq!(s.p, e.p);
        assert_eq!(s.weight_row, Matrix::identity(2, 2));

        let joint = joint3();
        let ests = estimates_from_joint(&joint.view((0, 0), (4, 4)).into_owned(), 2);
        let table = CrossCovarianceTable::from_joint(&joint.view((0, 0), (4, 4)).into_owned(), 2, 4).unwrap();
        let s = ssf_fuse(&ests, &table).unwrap();
        let b = bsf_fuse(&ests, &table).unwrap();
        let pf = pairwise_fuse(
            &ests[0].x,
            &ests[0].p,
            &ests[1].x,
            &ests[1].p,
            &table.get(0, 1).unwrap(),
        )
        .unwrap();
        assert_eq!(s.x, pf.x);
        assert_eq!(s.p, pf.p);
        assert!(max_abs_diff(&b.x, &pf.x) < 1e-12);
        assert!(max_abs_diff(&b.p, &pf.p) < 1e-12);
    }

    #[test]
    fn ssf_covariance_is_exact_and_batch_is_no_worse() {
        let joint = joint3();
        let ests = estimates_from_joint(&joint, 2);
        let table = CrossCovarianceTable::from_joint(&joint, 2, 4).unwrap();
        let s = ssf_fuse(&ests, &table).unwrap();
        let b = bsf_fuse(&ests, &table).unwrap();
        let stacked = Matrix::from_fn(6, 1, |r, _| ests[r / 2].x[r % 2]);
        assert!(max_abs_diff(&s.x, &(&s.weight_row * &stacked)) < 1e-12);
        let omega = joint_covariance(&ests, &table).unwrap();
        assert!(max_abs_diff(&s.p, &(&s.weight_row * &omega * s.weight_row.transpose())) < 1e-10);
        assert!(max_abs_diff(&b.p, &(&b.weight_row * &omega * b.weight_row.transpose())) < 1e-10);
        assert!(loewner_leq(&b.p, &s.p, 1e-9));
        for e in &ests {
            assert!(loewner_leq(&s.p, &e.p, 1e-9));
        }
        for w in s.partials.windows(2) {
            assert!(loewner_leq(&w[1], &w[0], 1e-9));
        }
    }

    #[test]
    fn sequential_misses_batch_optimum() {
        // e1, e2 independent with unit variance, e3 = (e1 - e2)/2 + eps.
        // Batch: var = s/(1 + 2s). Sequential: x_(1) = (x1 + x2)/2 is
        // uncorrelated with e3, giving 0.5 (0.5 + s) / (1 + s).
        let s2 = 0.1;
        let joint = Matrix::from_row_slice(3, 3, &[1.0, 0.0, 0.5, 0.0, 1.0, -0.5, 0.5, -0.5, 0.5 + s2]);
        let ests = estimates_from_joint(&joint, 1);
        let table = CrossCovarianceTable::from_joint(&joint, 1, 4).unwrap();
        let s = ssf_fuse(&ests, &table).unwrap();
        let b = bsf_fuse(&ests, &table).unwrap();
        assert!((b.p[(0, 0)] - s2 / (1.0 + 2.0 * s2)).abs() < 1e-14);
        assert!((s.p[(0, 0)] - 0.5 * (0.5 + s2) / (1.0 + s2)).abs() < 1e-14);
        let w = [s2 - 0.5, s2 + 0.5, 1.0].map(|v| v / (1.0 + 2.0 * s2));
        for (i, wi) in w.iter().enumerate() {
            assert!((b.weight_row[(0, i)] - wi).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_first_step_is_the_regularized_limit() {
        // Two filters share the prior (xp, pp) and take one position reading
        // each, so their gains are parallel and the joint covariance is
        // singular.
        let pp = spd(2, &[1.3, 0.5, 0.5, 1.25]);
        let xp = column(&[2.0, 1.0]);
        let c = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let readings = [(2.4, 0.5), (1.7, 0.8)];
        let mut ests = vec![];
        let mut maps = vec![];
        for (i, (z, r)) in readings.iter().enumerate() {
            let k = pp.as_matrix() * c.transpose() / (pp[(0, 0)] + r);
            let map = Matrix::identity(2, 2) - &k * &c;
            let p = &map * pp.as_matrix() * map.transpose() + &k * k.transpose() * *r;
            let x = &xp + &k * (z - xp[0]);
            ests.push(LocalEstimate::prior(x, symmetrize(&p).unwrap(), i + 1, 1).unwrap());
            maps.push(map);
        }
        let mut table = CrossCovarianceTable::empty(2, 2, 1);
        table
            .insert(0, 1, &maps[0] * pp.as_matrix() * maps[1].transpose())
            .unwrap();

        assert!(matches!(bsf_fuse(&ests, &table), Err(Error::IllConditioned { .. })));
        assert!(matches!(ssf_fuse(&ests, &table), Err(Error::IllConditioned { .. })));

        // Independent extra noise of variance eps on each estimate makes the
        // problem regular; its solution tends to the singular one.
        let eps = 1e-9;
        let regular: Vec<_> = ests
            .iter()
            .map(|e| {
                let p = symmetrize(&(e.p.as_matrix() + Matrix::identity(2, 2) * eps)).unwrap();
                LocalEstimate::prior(e.x.clone(), p, e.cluster_id, 1).unwrap()
            })
            .collect();
        let limit = bsf_fuse(&regular, &table).unwrap();
        let omega = joint_covariance(&ests, &table).unwrap();
        for fused in [
            bsf_fuse_with(&ests, &table, Singular::Generalized).unwrap(),
            ssf_fuse_with(&ests, &table, Singular::Generalized).unwrap(),
        ] {
            assert!(max_abs_diff(&fused.p, &limit.p) < 1e-7);
            assert!(max_abs_diff(&fused.x, &limit.x) < 1e-7);
            assert!(max_abs_diff(&fused.p, &(&fused.weight_row * &omega * fused.weight_row.transpose())) < 1e-10);
            for e in &ests {
                assert!(loewner_leq(&fused.p, &e.p, 1e-9));
            }
        }
    }

    #[test]
    fn generalized_rejects_inconsistent_singularity() {
        // Rank-deficient along a direction with nonzero block sum: a zero
        // covariance estimate that disagrees with a regular one.
        let a = est(&[0.0, 0.0], SpdMatrix::zeros(2));
        let b = est(&[1.0, 1.0], SpdMatrix::zeros(2));
        let table = CrossCovarianceTable::uniform(2, &Matrix::zeros(2, 2), 4);
        assert!(matches!(
            bsf_fuse_with(&[a, b], &table, Singular::Generalized),
            Err(Error::IllConditioned { .. })
        ));

        let p = SpdMatrix::identity(2);
        let x = column(&[1.0, 1.0]);
        let r = pairwise_fuse_with(&x, &p, &x, &p, p.as_matrix(), Singular::Generalized).unwrap();
        assert!(max_abs_diff(&r.x, &x) < 1e-12);
        assert!(max_abs_diff(&r.p, &p) < 1e-12);
    }

    #[test]
    fn uncorrelated_equal_batch() {
        let p = spd(2, &[1.5, 0.2, 0.2, 0.9]);
        let ests: Vec<_> = (0..3).map(|i| est(&[i as f64, 1.0], p.clone())).collect();
        let table = CrossCovarianceTable::uniform(3, &Matrix::zeros(2, 2), 4);
        let b = bsf_fuse(&ests, &table).unwrap();
        assert!(max_abs_diff(&b.p, &(p.as_matrix() / 3.0)) < 1e-14);
        for i in 0..3 {
            let block = b.weight_row.view((0, 2 * i), (2, 2)).into_owned();
            assert!(max_abs_diff(&block, &(Matrix::identity(2, 2) / 3.0)) < 1e-14);
        }
        assert!(max_abs_diff(&b.x, &column(&[1.0, 1.0])) < 1e-14);
    }

    #[test]
    fn flatten_two_equal_halves() {
        let half = Matrix::identity(2, 2) * 0.5;
        let w = FusionWeights {
            deltas: vec![(half.clone(), half.clone())],
        };
        let row = flatten_weights(&w, 2);
        let mut expected = Matrix::zeros(2, 4);
        expected.view_mut((0, 0), (2, 2)).copy_from(&half);
        expected.view_mut((0, 2), (2, 2)).copy_from(&half);
        assert_eq!(row, expected);
        assert_eq!(flatten_weights(&FusionWeights::default(), 3), Matrix::identity(3, 3));
    }

    #[test]
    fn flatten_matches_explicit_products() {
        let d = |a: f64, b: f64, c: f64, e: f64| Matrix::from_row_slice(2, 2, &[a, b, c, e]);
        let i2 = Matrix::identity(2, 2);
        let d1 = [d(0.6, 0.1, -0.2, 0.3), d(0.7, -0.05, 0.15, 0.55), d(0.2, 0.3, 0.0, 0.9)];
        let w = FusionWeights {
            deltas: d1.iter().map(|a| (a.clone(), &i2 - a)).collect(),
        };
        let row = flatten_weights(&w, 2);
        let (a1, a2, a3) = (&d1[0], &d1[1], &d1[2]);
        let blocks = [a3 * a2 * a1, a3 * a2 * (&i2 - a1), a3 * (&i2 - a2), &i2 - a3];
        for (i, b) in blocks.iter().enumerate() {
            assert!(max_abs_diff(&row.view((0, 2 * i), (2, 2)).into_owned(), b) < 1e-15);
        }
        assert!(max_abs_diff(&weight_block_sum(&row, 2), &i2) < 1e-12);
    }

    #[test]
    fn closed_form_matches_running_recursion() {
        let joint = joint3();
        let ests = estimates_from_joint(&joint, 2);
        let table = CrossCovarianceTable::from_joint(&joint, 2, 4).unwrap();
        let s = ssf_fuse(&ests, &table).unwrap();
        // j = 2: running cross-covariance of x_(1) with estimate 3
        let closed = cross_cov_closed_form(&s.weights, &table, 2).unwrap();
        let (d1, d2) = &s.weights.deltas[0];
        let recursion = d1 * table.get(0, 2).unwrap() + d2 * table.get(1, 2).unwrap();
        assert!(max_abs_diff(&closed, &recursion) < 1e-14);
        assert!(max_abs_diff(&closed, &s.running_cross[1]) < 1e-14);
        // j = 1 is just P_{1,2}
        assert_eq!(
            cross_cov_closed_form(&s.weights, &table, 1).unwrap(),
            table.get(0, 1).unwrap()
        );
    }

    #[test]
    fn cross_cov_step_without_updates() {
        let model = crate::model::tracking_model(0.5, 1.0).unwrap();
        let p0 = Matrix::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 0.7]);
        let mut table = CrossCovarianceTable::empty(2, 2, 0);
        table.insert(0, 1, p0.clone()).unwrap();
        let next = cross_cov_step(&table, &model, &[Matrix::zeros(2, 1), Matrix::zeros(2, 1)]).unwrap();
        let a = model.transition();
        let expected = a * &p0 * a.transpose() + model.state_process_noise_at(0);
        assert!(max_abs_diff(&next.get(0, 1).unwrap(), &expected) < 1e-15);
        assert!(max_abs_diff(&next.get(1, 0).unwrap(), &expected.transpose()) < 1e-15);
        assert_eq!(next.step, 1);
    }

    #[test]
    fn table_validation() {
        let mut t = CrossCovarianceTable::empty(3, 2, 4);
        assert!(!t.is_complete());
        assert!(t.insert(1, 1, Matrix::zeros(2, 2)).is_err());
        assert!(t.insert(0, 1, Matrix::zeros(3, 3)).is_err());
        t.insert(2, 0, Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]))
            .unwrap();
        assert_eq!(
            t.get(0, 2).unwrap(),
            Matrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0])
        );
        let ests: Vec<_> = (0..3).map(|_| est(&[0.0, 0.0], SpdMatrix::identity(2))).collect();
        assert!(matches!(ssf_fuse(&ests, &t), Err(Error::IncompleteTable { .. })));
        assert!(matches!(bsf_fuse(&ests, &t), Err(Error::IncompleteTable { .. })));
        assert_eq!(ssf_fuse(&[], &t), Err(Error::EmptyInput));
    }
}
