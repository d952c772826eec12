//! Memory-outcome prediction from epoched multi-channel EEG.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`synth`] generates seeded synthetic cohorts as [`data::EpochSet`]s.
//! 2. [`preprocess`] decimates to 250 Hz, band-passes 0.5–50 Hz and applies
//!    an average reference.
//! 3. [`spectral`] turns every channel of every trial into six band powers
//!    (dB), giving a flat 360-feature row or a 6×10×9 scalp mesh.
//! 4. [`svm`] and [`nn`] provide an RBF-kernel SVM, an MLP and a CNN.
//! 5. [`eval`] runs leave-one-subject-out cross-validation and reports
//!    accuracy, Cohen's kappa and confusion matrices.
//!
//! [`pipeline`] wires the stages together from a JSON run configuration and
//! backs the `memtrace` binary.

pub mod data;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod spectral;
pub mod svm;
pub mod synth;

pub use error::{Error, Result};
