//! Sparse beamforming and user-centric base-station clustering for a
//! downlink cloud radio access network with per-BS backhaul limits.
//!
//! The crate is organized bottom-up:
//!
//! - [`topology`]: wrapped-around hexagonal two-tier layout and signal strengths.
//! - [`channel`]: large-scale gains and per-slot Rayleigh channel matrices.
//! - [`qcqp`]: the convex beamformer subproblem and its dual solver.
//! - [`wmmse`]: the reweighted-l1 / WMMSE loops for dynamic and static clustering.
//! - [`clustering`]: static cluster construction heuristics and baselines.
//! - [`simulator`]: proportional-fair multi-slot campaigns and backhaul calibration.
//! - [`reporting`]: percentiles, histograms, log-utility and comparison reports.

pub mod channel;
pub mod clustering;
pub mod error;
pub mod linalg;
pub mod qcqp;
pub mod reporting;
pub mod simulator;
pub mod topology;
pub mod units;
pub mod wmmse;

pub use error::{Error, Result};
