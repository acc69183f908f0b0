//! Neighbor-conditioned interpolation of head-related transfer functions.
//!
//! An HRTF at an arbitrary source position is estimated from a handful of
//! measured HRTFs around it. The estimator stacks the neighbor spectra and
//! mixes them with a learned pointwise convolution; a residual trunk of FiLM
//! blocks then calibrates that interpolant, conditioned on sinusoidally
//! encoded neighbor offsets, the target position, and the listener's
//! anthropometry. In the full model the offset conditions are themselves
//! modulated by a hyper-convolution whose kernels are generated per frequency
//! bin from the target position and anthropometry.
//!
//! The crate contains everything needed to train and score that model without
//! a tensor framework:
//!
//! - [`geometry`]: positions, sampling grids, neighborhoods, planes.
//! - [`spectra`]: HRIR to HRTF conversion, log-spectral distance, datasets
//!   and a smooth synthetic HRTF field.
//! - [`encoding`]: sinusoidal conditioning channels.
//! - [`network`]: layers with hand-written reverse-mode gradients, the four
//!   model variants and the checkpoint format.
//! - [`training`]: loss, AdamW, LR schedule, folds and the training loop.
//! - [`baseline`]: in-plane linear interpolation.
//! - [`evaluation`]: per-plane reports, super-resolution, ablations.
//! - [`formats`]: the plain-text grid and dataset files.

pub mod baseline;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod formats;
pub mod geometry;
pub mod network;
mod parallel;
pub mod spectra;
pub mod training;

pub use error::{Error, ParseError, Result};
pub use geometry::{Grid, GridKind, NeighborSet, Plane, Position, SampleMode, SphericalPos};
pub use network::{ModelInput, ModelParams, Variant};
pub use spectra::{Anthropometry, Dataset, Hrir, Hrtf, NormStats, SubjectRecord};
pub use training::TrainConfig;

/// Frequency bins per HRTF (DC through Nyquist of a 256-point FFT).
pub const BINS: usize = 129;
/// Samples per HRIR.
pub const HRIR_LEN: usize = 256;
/// Sample rate of the HRIRs, Hz.
pub const SAMPLE_RATE: f64 = 44_100.0;
/// Anthropometric features per subject.
pub const ANTHRO_FEATURES: usize = 12;
