//! Acoustic vehicle detection and speed estimation from single-microphone
//! recordings, built around a regression-friendly intermediate target: an
//! attenuation-shaped profile that peaks when the vehicle passes the sensor.
//!
//! The crate covers the full experimental loop:
//!
//! - [`dsp`]: STFT and log-mel spectrogram front-end.
//! - [`features`]: attenuation target profiles and windowed feature assembly.
//! - [`nn`]: from-scratch fully-connected regressor (profile predictor).
//! - [`svr`]: from-scratch epsilon support vector regression (speed head).
//! - [`synth`]: deterministic synthetic pass-by and background-noise corpus.
//! - [`pipeline`]: detection, cross-validated speed estimation, and
//!   annotation correction driven by predicted pass-by instants.
//! - [`eval`]: error metrics, per-speed-class tables and report assembly.
//! - [`dataio`]: WAV and label CSV input/output.
//!
//! Everything is deterministic given a seed; experiments fan out over
//! repetition/fold jobs with per-job derived seeds, so results do not depend
//! on thread count.

pub mod cli;
pub mod config;
pub mod dataio;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod mat;
pub mod nn;
pub mod pipeline;
mod randn;
mod seed;
pub mod svg;
pub mod svr;
pub mod synth;

pub use error::{Error, Result};
