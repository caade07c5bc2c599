//! Two-timescale hybrid federated learning (TT-HF).
//!
//! Devices run local SGD, clusters of devices periodically mix their models
//! over D2D links through consensus, and a server aggregates one sampled
//! device per cluster at aperiodic instants. The crate provides:
//!
//! * [`losses`] and [`data`]: strongly convex learning tasks and
//!   heterogeneous partitions of synthetic or CSV data;
//! * [`topology`] and [`consensus`]: wireless-derived D2D graphs, consensus
//!   matrices with certified spectral radii, lossy consensus rounds;
//! * [`trainer`]: the TT-HF loop with fixed control parameters and the
//!   federated-averaging baselines;
//! * [`bounds`]: closed-form convergence certificates;
//! * [`control`]: the adaptive controller (step size, consensus rounds,
//!   aggregation period);
//! * [`experiment`]: configuration, multi-seed orchestration and CSV/JSON
//!   outputs used by the `tthf` CLI.
//!
//! Every stochastic component draws from a seed-derived substream so a run
//! is a pure function of `(config, seed)` regardless of thread count.

pub mod bounds;
pub mod consensus;
pub mod control;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod losses;
pub mod rng;
pub mod topology;
pub mod trainer;

pub use error::{Error, Result};

/// Dense model parameter vector; the unit exchanged by every protocol step.
pub type ModelVector = ndarray::Array1<f64>;
