//! Wavefront-sensorless adaptive optics for free-space to single-mode-fiber
//! coupling: Kolmogorov phase screens, a Fourier-optics receiver model and
//! modal stochastic parallel gradient descent.

pub mod config;
pub mod control;
pub mod error;
pub mod experiment;
pub mod fourier;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod optics;
pub mod plot;
pub mod plant;
pub mod turbulence;
pub mod zernike;

pub use error::{Error, Result};
