//! Ultrasonic Doppler hand-gesture recognition: continuous-wave probe
//! synthesis, WAV I/O, a two-microphone echo simulator, STFT spectrogram
//! images, augmentation, and single / early / late fusion CNN classifiers.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod augment;
pub mod cli;
pub mod dataset;
pub mod doppler;
pub mod dsp;
pub mod error;
pub mod models;
pub mod nn;
pub mod seed;

pub use error::{Error, Result};
