//! Seeded noise generation.
//!
//! Every random stream is a ChaCha8 generator whose 64-bit seed is derived
//! by mixing the user seed with a domain tag and the stream's coordinates
//! (cluster, sensor) through SplitMix64. Streams for different sensors are
//! therefore unrelated, and a stream's output does not depend on how many
//! other streams exist or in which order they are consumed.

use nalgebra::SymmetricEigen;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::numerics::{Matrix, SpdMatrix};

/// Domain tags keep streams for different purposes apart.
pub mod domain {
    pub const PROCESS_NOISE: u64 = 0x5052_4f43;
    pub const MEASUREMENT_NOISE: u64 = 0x4d45_4153;
    pub const RUN: u64 = 0x5255_4e53;
    pub const PROPERTY_CASES: u64 = 0x5052_4f50;
}

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into `seed` one word at a time.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, parts: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, parts))
}

/// Draws zero-mean Gaussian vectors with a fixed covariance.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    /// `factor * factor^T` equals the covariance.
    factor: Matrix,
}

impl GaussianSampler {
    pub fn new(cov: &SpdMatrix) -> Self {
        let factor = match cov.as_matrix().clone().cholesky() {
            Some(chol) => chol.unpack(),
            // Singular (e.g. zero) covariance: fall back to the eigen square root.
            None => {
                let eig = SymmetricEigen::new(cov.as_matrix().clone());
                let roots = eig.eigenvalues.map(|v| libm::sqrt(v.max(0.0)));
                &eig.eigenvectors * Matrix::from_diagonal(&roots)
            }
        };
        Self { factor }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Matrix {
        let n = self.factor.ncols();
        let z = Matrix::from_fn(n, 1, |_, _| StandardNormal.sample(rng));
        &self.factor * z
    }
}
