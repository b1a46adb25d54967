//! Desk-scale simulator for differentially-private federated learning (DPFL)
//! with noise-calibrated unlearning.
//!
//! The library is organized around a small number of subsystems:
//!
//! - [`vecnum`] — parameter-vector algebra, seeded Gaussian sampling, a
//!   ball-constrained BFGS maximizer, and the `FUI1` binary vector codec.
//! - [`models`] — softmax regression and a one-hidden-layer MLP with analytic
//!   loss/gradient, mini-batch SGD, and accuracy.
//! - [`data`] — synthetic blob generation, schema-driven CSV ingestion, and
//!   even client partitioning.
//! - [`dpfl`] — the eta-DP federated loop: clipping, uplink/downlink Gaussian
//!   mechanisms, weighted aggregation, and round history recording.
//! - [`fui`] — the unlearning pipeline: reference model, local model
//!   retraction, noise-gap calibration, and the retrain baseline.
//! - [`game`] — the two-stage server/client strategy game: utilities,
//!   closed-form optima with oracle cross-checks, and strategy-pair sweeps.
//! - [`eval`] — membership-inference attack, prediction loss, privacy
//!   parameter sweeps, and a convergence diagnostic.
//! - [`config`], [`rundir`], [`pipeline`] — flat-file configuration, run
//!   directory persistence, and end-to-end orchestration used by the CLI.

pub mod config;
pub mod data;
pub mod dpfl;
pub mod error;
pub mod eval;
pub mod fui;
pub mod game;
pub mod models;
pub mod pipeline;
pub mod rundir;
pub mod vecnum;

pub use error::{Error, Result};
