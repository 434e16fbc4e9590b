//! Prediction-history pseudo-label re-training (RT4U) with split conformal
//! prediction sets.
//!
//! The crate covers the full evaluation loop on dense feature vectors:
//!
//! * [`classifier`]: a small softmax model trained by SGD on soft targets,
//!   recording per-epoch training-set logits.
//! * [`rt4u`]: pseudo-labels from the mean of the per-epoch softmax outputs
//!   and the two-round re-training procedure.
//! * [`conformal`]: LABEL split conformal calibration and prediction sets.
//! * [`postcalib`]: temperature scaling and expected calibration error.
//! * [`aggregate`]: study-level pooling of instance predictions.
//! * [`metrics`]: class-balanced accuracy and coverage, set size, ordinality
//!   and the repeated-trial protocol.
//! * [`synthdata`]: multi-slice synthetic studies with non-informative slices.
//!
//! File formats live in [`io`]; the `rt4u` binary wires everything together.

pub mod aggregate;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod conformal;
pub mod data;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod postcalib;
pub mod rng;
pub mod rt4u;
pub mod synthdata;

pub use error::{Error, Result};
