//! Two-stage fusion estimation for clustered sensor networks.
//!
//! Each cluster head first collapses the measurements of its own sensors
//! into one equivalent measurement (sequentially or in batch), runs a local
//! Kalman filter on it, and then the heads fuse their local estimates with
//! optimal matrix weights, either pairwise in arrival order or all at once.
//! Cross-covariances between the local filters are propagated so that the
//! state fusion stays optimal.
//!
//! The crate is `no_std` and only needs `alloc`. Everything touching files,
//! the command line or wall-clock time lives in the `clusterfuse` crate.
//!
//! Module map:
//! - [`numerics`]: SPD-aware helpers on top of `nalgebra`.
//! - [`model`]: plant and sensor models, seeded trajectory/measurement generation.
//! - [`measfusion`]: sequential and batch measurement fusion.
//! - [`kalman`]: local Kalman filtering, plus the sequential-update and
//!   measurement-augmentation baselines.
//! - [`statefusion`]: sequential and batch state fusion, cross-covariance tables.
//! - [`complexity`]: closed-form operation counts of the six methods.
//! - [`pipeline`]: scenarios, the end-to-end two-stage run and Monte Carlo RMSE.
//! - [`equivalence`]: drivers checking that the alternative methods agree.

#![no_std]
#![allow(non_snake_case)]

extern crate alloc;

mod error;
pub mod rng;

pub mod complexity;
pub mod equivalence;
pub mod kalman;
pub mod measfusion;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod statefusion;

pub use error::{Error, Result};
pub use numerics::{Matrix, SpdMatrix};
