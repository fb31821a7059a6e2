//! Resting-state EEG toolkit for Parkinson's disease detection.
//!
//! The crate covers the whole chain from band-limited epochs to evaluated
//! classifiers: [`preprocess`] (FIR filtering, epoching, rejection),
//! [`spectral`] (multitaper log relative band power), [`harmonize`]
//! (reference-batch bootstrap ComBat), [`select`] (ANOVA-F and RENT),
//! [`learn`] (splits, classifiers, nested cross-validation), [`eval`]
//! (metrics and bootstrap confidence intervals), [`synth`] (synthetic
//! multi-center cohorts) and [`pipeline`] (config-driven orchestration).

pub mod error;
pub mod eval;
pub mod harmonize;
pub mod io;
pub mod learn;
pub mod linalg;
pub mod pipeline;
pub mod preprocess;
pub mod resample;
pub mod rng;
pub mod select;
pub mod spectral;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
