//! Medication change prediction on longitudinal EHR cohorts.
//!
//! The library covers the full pipeline: synthetic cohort generation
//! ([`cohort`]), a residual prescription model with hand-written reverse-mode
//! gradients ([`numerics`], [`model`], [`losses`]), RMSprop training with
//! portable checkpoints ([`trainer`]), ROC-based threshold calibration
//! ([`calibration`]), recurrent medication-set rollout ([`inference`]),
//! set-based evaluation metrics ([`metrics`]), and two reference baseline
//! models ([`baselines`]).

pub mod baselines;
pub mod calibration;
pub mod cohort;
pub mod error;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
