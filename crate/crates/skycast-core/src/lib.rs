//! Short-term forecasting of global horizontal irradiance (GHI) from
//! ground-based all-sky camera images.
//!
//! The crate is organised as a pipeline:
//!
//! * [`clearsky`] — solar geometry and clear-sky irradiance models, plus the
//!   smart-persistence reference forecast every skill score is measured
//!   against.
//! * [`dataset`] — archive ingestion, image preprocessing, sample assembly
//!   and leakage-free train/validation splits; includes a synthetic sky
//!   generator for self-contained experiments.
//! * [`tensor`] — a minimal dense f32 tensor engine with reverse-mode
//!   automatic differentiation and the Adam optimizer.
//! * [`model`] — the dual-branch convolutional forecast network.
//! * [`training`] — minibatch training loop with early stopping and
//!   checkpointing.
//! * [`evaluation`] — MSE / forecast-skill reports and horizon sweeps.
//! * [`introspection`] — activation maps, dead-filter detection and
//!   gradient-ascent filter visualisation.
//! * [`config`] — layered TOML run configuration shared by the CLI verbs.

pub mod clearsky;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod introspection;
pub mod model;
pub mod plot;
pub mod seed;
pub mod tensor;
pub mod training;
