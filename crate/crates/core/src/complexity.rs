//! Multiplication/division counts of the fusion methods as closed-form
//! polynomials.
//!
//! These are a cost model, transcribed as published; they are not derived
//! from the operations this crate actually performs.

use core::fmt;

/// `n_x`: state dimension, `q`: measurement dimension, `n`: sensors in the
/// cluster, `m`: number of local estimates fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityParams {
    pub n_x: u64,
    pub q: u64,
    pub n: u64,
    pub m: u64,
}

impl ComplexityParams {
    /// All parameters must be at least 1.
    pub fn new(n_x: u64, q: u64, n: u64, m: u64) -> Option<Self> {
        (n_x >= 1 && q >= 1 && n >= 1 && m >= 1).then_some(Self { n_x, q, n, m })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SequentialMeasurement,
    BatchMeasurement,
    MeasurementAugmentation,
    SequentialKalman,
    BatchState,
    SequentialState,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::SequentialMeasurement,
        Method::BatchMeasurement,
        Method::MeasurementAugmentation,
        Method::SequentialKalman,
        Method::BatchState,
        Method::SequentialState,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Method::SequentialMeasurement => "smf",
            Method::BatchMeasurement => "bmf",
            Method::MeasurementAugmentation => "ma",
            Method::SequentialKalman => "sk",
            Method::BatchState => "bsf",
            Method::SequentialState => "ssf",
        }
    }

    pub fn count(self, p: &ComplexityParams) -> i128 {
        match self {
            Method::SequentialMeasurement => delta_sm(p),
            Method::BatchMeasurement => delta_bm(p),
            Method::MeasurementAugmentation => delta_ma(p),
            Method::SequentialKalman => delta_sk(p),
            Method::BatchState => delta_bs(p),
            Method::SequentialState => delta_ss(p),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

// Counts are i128: the printed polynomials have negative terms and can be
// evaluated far outside the usual parameter range.
fn terms(p: &ComplexityParams) -> (i128, i128, i128, i128, i128) {
    (
        p.n_x as i128,
        p.q as i128,
        p.n as i128,
        p.m as i128,
        (p.n_x * p.n_x) as i128,
    )
}

/// `(n_x^2 + 5 n_x + 8n - 7) q^2 + (4 n_x^2 + n_x) q + 2 n_x^3 + n_x^2`
pub fn delta_sm(p: &ComplexityParams) -> i128 {
    let (nx, q, n, _, nx2) = terms(p);
    (nx2 + 5 * nx + 8 * n - 7) * q * q + (4 * nx2 + nx) * q + 2 * nx2 * nx + nx2
}

/// `(n_x^2 + 5 n_x + 3n + 3) q^2 + (4 n_x^2 + n_x) q + 2 n_x^3 + n_x^2`
pub fn delta_bm(p: &ComplexityParams) -> i128 {
    let (nx, q, n, _, nx2) = terms(p);
    (nx2 + 5 * nx + 3 * n + 3) * q * q + (4 * nx2 + nx) * q + 2 * nx2 * nx + nx2
}

/// `(n_x^2 + 5 n_x + 8n - 7) n^2 q^2 + (4 n_x^2 + n_x) n q + 2 n_x^3 + n_x^2`
pub fn delta_ma(p: &ComplexityParams) -> i128 {
    let (nx, q, n, _, nx2) = terms(p);
    (nx2 + 5 * nx + 8 * n - 7) * n * n * q * q + (4 * nx2 + nx) * n * q + 2 * nx2 * nx + nx2
}

/// `(n_x^2 + 5 n_x + 8n - 7) n q^2 + (4 n_x^2 + n_x) n q + n (2 n_x^3 + n_x^2)`
pub fn delta_sk(p: &ComplexityParams) -> i128 {
    let (nx, q, n, _, nx2) = terms(p);
    (nx2 + 5 * nx + 8 * n - 7) * n * q * q + (4 * nx2 + nx) * n * q + n * (2 * nx2 * nx + nx2)
}

/// `5 n_x^2 m^2 + (n_x^3 + n_x^2) m`
pub fn delta_bs(p: &ComplexityParams) -> i128 {
    let (nx, _, _, m, nx2) = terms(p);
    5 * nx2 * m * m + (nx2 * nx + nx2) * m
}

/// `(2 n_x^3 + 22 n_x^2) m - 2 n_x^3 - 22 n_x^2`
pub fn delta_ss(p: &ComplexityParams) -> i128 {
    let (nx, _, _, m, nx2) = terms(p);
    (2 * nx2 * nx + 22 * nx2) * m - 2 * nx2 * nx - 22 * nx2
}

/// Smallest `m >= 1` from which sequential state fusion is strictly cheaper
/// than batch state fusion for every larger `m` up to `m_max`.
pub fn state_fusion_crossover(n_x: u64, m_max: u64) -> Option<u64> {
    let cheaper = |m: u64| {
        let p = ComplexityParams { n_x, q: 1, n: 1, m };
        delta_ss(&p) < delta_bs(&p)
    };
    let mut crossover = None;
    for m in (1..=m_max).rev() {
        if cheaper(m) {
            crossover = Some(m);
        } else {
            break;
        }
    }
    crossover
}
