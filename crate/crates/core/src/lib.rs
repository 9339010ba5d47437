//! Differentiable phase-correlation registration.
//!
//! Estimates the 4-DoF similarity transform (translation, rotation, scale)
//! between two birds-eye-view images by decoupled correlation: the FFT
//! magnitude spectrum in log-polar coordinates turns rotation/scale into
//! translations, and plain circular correlation recovers the remaining
//! shift. Every stage is differentiable, so small encoder-decoder feature
//! extractors can be trained end-to-end through the estimator to register
//! cross-modality image pairs where raw phase correlation fails.

pub mod config;
pub mod datasynth;
pub mod diff;
pub mod error;
pub mod estimator;
pub mod features;
pub mod metrics;
pub mod oracle;
pub mod selftest;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
