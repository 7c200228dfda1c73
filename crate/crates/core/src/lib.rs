//! Harmonic-plus-noise neural source-filter waveform model with a trainable,
//! time-variant maximum voice frequency.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: reverse-mode differentiation, parameters, Adam, checkpoints
//! - [`dsp`]: framing, STFT, mel/F0 extraction, upsampling, smoothing
//! - [`source`]: sine-harmonic and Gaussian excitation
//! - [`sinc`]: windowed-sinc low/high-pass design, time-variant FIR merge and its gradient
//! - [`condition`]: condition features, U/V trajectory, cutoff prediction
//! - [`model`]: neural filter blocks, variants, spectral loss, training and synthesis
//! - [`io`]: WAV codec, feature files, run configuration, CSV exports
//! - [`gradcheck`]: finite-difference checks used by tests and the CLI

pub mod autodiff;
pub mod condition;
pub mod dsp;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod nn;
pub mod sinc;
pub mod source;

pub use autodiff::{Graph, ParamStore, Tensor, Var};
