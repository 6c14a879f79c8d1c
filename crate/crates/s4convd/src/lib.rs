//! Diagonal state-space sequence models for hourly time-series forecasting.
//!
//! The crate implements a small end-to-end stack:
//!
//! * [`types`] — split-plane complex vectors and the per-channel diagonal
//!   state-space parameterisation.
//! * [`kernelgen`] — materialisation of convolution kernels from state-space
//!   parameters: the classic Vandermonde kernel of a discretised diagonal
//!   system, and an adaptive variant that passes the decaying state responses
//!   through independent sigmoid gates on the real and imaginary planes.
//! * [`fft`] / [`seqconv`] — an iterative radix-2 FFT and causal convolution
//!   of batched sequences (FFT-based with a direct `O(L^2)` reference mode).
//! * [`model`] — encoder → per-channel state-space convolution → gated
//!   activation → decoder, with binary checkpointing.
//! * [`training`] — masked squared error in `log1p` space, reverse-mode
//!   gradients through the whole pipeline, SGD with classical momentum, a
//!   finite-difference gradient checker and the epoch loop.
//! * [`dataio`] — CSV ingestion of hourly meter/weather data, cleaning,
//!   feature assembly, temporal splits and a synthetic generator.
//! * [`metrics`] — RMSLE / RMSE.
//! * [`perf`] — GPU occupancy calculator and a cache-tiled kernel
//!   materialisation benchmark.
//!
//! All seeded entry points are deterministic: repeated runs with the same
//! seed produce bit-identical parameters, losses and files, regardless of
//! whether the `parallel` feature (rayon) is enabled.

pub mod dataio;
mod error;
pub mod fft;
pub mod kernelgen;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod perf;
pub mod seqconv;
pub mod training;
pub mod types;

pub use error::{Error, Result};
