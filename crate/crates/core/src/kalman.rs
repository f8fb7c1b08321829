//! Local Kalman filtering at a cluster head.
//!
//! Three ways of using a cluster's readings are provided:
//! - [`kf_update`]: one update with the fused measurement (SMF or BMF output),
//! - [`sk_estimate`]: one prediction followed by one update per raw reading,
//! - [`ma_estimate`]: one update with all readings stacked into one vector.
//!
//! All covariance updates use the Joseph form.
//!
//! Every estimate carries the gain of the step that produced it, since the
//! cross-covariance recursion between cluster heads consumes it. For the
//! sequential and stacked variants the stored gain is the equivalent
//! fused-measurement gain `K = P C^T (sum R_i^-1)`, which satisfies
//! `I - K C = I - K_stacked C_stacked`; the error dynamics it describes are the
//! same ones the fused-measurement filter would have.

use crate::measfusion::FusedMeasurement;
use crate::model::{GaussianMeasurement, StateSpaceModel};
use crate::numerics::{spd_solve, symmetrize, Matrix, SpdMatrix};
use crate::{Error, Result};

/// A cluster head's estimate at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEstimate {
    pub x: Matrix,
    pub p: SpdMatrix,
    /// Gain used at `step`; zero for the initial estimate.
    pub gain: Matrix,
    pub cluster_id: usize,
    pub step: usize,
}

impl LocalEstimate {
    /// Estimate without a gain, e.g. the prior at step 0 or a test input to
    /// state fusion.
    pub fn prior(x: Matrix, p: SpdMatrix, cluster_id: usize, step: usize) -> Result<Self> {
        let n = p.dim();
        if x.shape() != (n, 1) {
            return Err(Error::dims("estimate mean", (n, 1), x.shape()));
        }
        Ok(Self {
            x,
            p,
            gain: Matrix::zeros(n, 0),
            cluster_id,
            step,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FilterState {
    model: StateSpaceModel,
    current: LocalEstimate,
}

impl FilterState {
    pub fn new(model: StateSpaceModel, x0: Matrix, p0: SpdMatrix, cluster_id: usize) -> Result<Self> {
        let n = model.state_dim();
        if p0.dim() != n {
            return Err(Error::dims("initial covariance", (n, n), p0.shape()));
        }
        let mut current = LocalEstimate::prior(x0, p0, cluster_id, 0)?;
        current.gain = Matrix::zeros(n, model.measurement_dim());
        Ok(Self { model, current })
    }

    pub fn model(&self) -> &StateSpaceModel {
        &self.model
    }

    pub fn current(&self) -> &LocalEstimate {
        &self.current
    }

    /// Advances to `next`, which must be the following step of this cluster.
    pub fn accept(&mut self, next: LocalEstimate) -> Result<()> {
        if next.step != self.current.step + 1 {
            return Err(Error::StepMismatch {
                expected: self.current.step + 1,
                found: next.step,
            });
        }
        if next.cluster_id != self.current.cluster_id {
            return Err(Error::ClusterMismatch {
                expected: self.current.cluster_id,
                found: next.cluster_id,
            });
        }
        self.current = next;
        Ok(())
    }
}

/// `x_pred = A x`, `P_pred = A P A^T + B Q B^T`.
pub fn kf_predict(f: &FilterState) -> Result<(Matrix, SpdMatrix)> {
    let k = f.current.step;
    let a = f.model.transition_at(k);
    let x_pred = a * &f.current.x;
    let p_pred = a * f.current.p.as_matrix() * a.transpose() + f.model.state_process_noise_at(k);
    Ok((x_pred, symmetrize(&p_pred)?))
}

struct Update {
    x: Matrix,
    p: SpdMatrix,
    gain: Matrix,
}

/// Joseph-form update of `(x_pred, p_pred)` with `y = C x + v`, `v ~ N(0, R)`.
fn measurement_update(x_pred: &Matrix, p_pred: &SpdMatrix, c: &Matrix, y: &Matrix, r: &SpdMatrix) -> Result<Update> {
    let n = p_pred.dim();
    let cp = c * p_pred.as_matrix();
    let innovation_cov = symmetrize(&(&cp * c.transpose() + r.as_matrix()))?;
    // K^T = S^-1 C P, using the symmetry of S and P
    let gain = spd_solve(&innovation_cov, &cp)?.transpose();
    let x = x_pred + &gain * (y - c * x_pred);
    let i_kc = Matrix::identity(n, n) - &gain * c;
    let p = &i_kc * p_pred.as_matrix() * i_kc.transpose() + &gain * r.as_matrix() * gain.transpose();
    Ok(Update {
        x,
        p: symmetrize(&p)?,
        gain,
    })
}

fn expect_next_step(f: &FilterState, step: usize) -> Result<()> {
    let expected = f.current.step + 1;
    if step != expected {
        return Err(Error::StepMismatch { expected, found: step });
    }
    Ok(())
}

/// Predict, then update with one fused measurement.
pub fn kf_update(f: &FilterState, fused: &FusedMeasurement) -> Result<LocalEstimate> {
    expect_next_step(f, fused.step)?;
    let q = f.model.measurement_dim();
    if fused.dim() != q {
        return Err(Error::dims("fused measurement", (q, 1), fused.y.shape()));
    }
    let (x_pred, p_pred) = kf_predict(f)?;
    let c = f.model.measurement_at(fused.step);
    let u = measurement_update(&x_pred, &p_pred, c, &fused.y, fused.noise())?;
    Ok(LocalEstimate {
        x: u.x,
        p: u.p,
        gain: u.gain,
        cluster_id: f.current.cluster_id,
        step: fused.step,
    })
}

fn check_batch(f: &FilterState, measurements: &[GaussianMeasurement]) -> Result<usize> {
    let first = measurements.first().ok_or(Error::EmptyInput)?;
    expect_next_step(f, first.step)?;
    let q = f.model.measurement_dim();
    for m in measurements {
        expect_next_step(f, m.step)?;
        if m.dim() != q {
            return Err(Error::dims("measurement", (q, 1), m.y.shape()));
        }
    }
    Ok(first.step)
}

/// Sequential Kalman: one prediction, then one update per reading in order.
pub fn sk_estimate(f: &FilterState, measurements: &[GaussianMeasurement]) -> Result<LocalEstimate> {
    let step = check_batch(f, measurements)?;
    let c = f.model.measurement_at(step);
    let (mut x, mut p) = kf_predict(f)?;
    let q = c.nrows();
    let mut info = Matrix::zeros(q, q);
    for m in measurements {
        let u = measurement_update(&x, &p, c, &m.y, m.noise())?;
        x = u.x;
        p = u.p;
        info += m.noise().inverse()?.as_matrix();
    }
    let gain = p.as_matrix() * c.transpose() * info;
    Ok(LocalEstimate {
        x,
        p,
        gain,
        cluster_id: f.current.cluster_id,
        step,
    })
}

/// Measurement augmentation: all readings stacked into one `nq`-vector with
/// block-diagonal noise, then a single update.
pub fn ma_estimate(f: &FilterState, measurements: &[GaussianMeasurement]) -> Result<LocalEstimate> {
    let step = check_batch(f, measurements)?;
    let c = f.model.measurement_at(step);
    let (q, nx) = c.shape();
    let count = measurements.len();

    let mut y_aug = Matrix::zeros(count * q, 1);
    let mut c_aug = Matrix::zeros(count * q, nx);
    let mut r_aug = Matrix::zeros(count * q, count * q);
    for (i, m) in measurements.iter().enumerate() {
        y_aug.view_mut((i * q, 0), (q, 1)).copy_from(&m.y);
        c_aug.view_mut((i * q, 0), (q, nx)).copy_from(c);
        r_aug.view_mut((i * q, i * q), (q, q)).copy_from(m.noise().as_matrix());
    }
    let r_aug = symmetrize(&r_aug)?;

    let (x_pred, p_pred) = kf_predict(f)?;
    let u = measurement_update(&x_pred, &p_pred, &c_aug, &y_aug, &r_aug)?;
    let gain = (0..count).fold(Matrix::zeros(nx, q), |acc, i| acc + u.gain.view((0, i * q), (nx, q)));
    Ok(LocalEstimate {
        x: u.x,
        p: u.p,
        gain,
        cluster_id: f.current.cluster_id,
        step,
    })
}
