//! Multichannel under-determined audio source separation.
//!
//! Each source image is modelled as a zero-mean complex Gaussian whose
//! covariance factors into a nonnegative variance `v_n(ω,l) = u_n(ω)·w_n(l)`
//! and a time-invariant spatial covariance `R_n(ω)`. Parameters are fitted by
//! β-divergence nonnegative tensor factorization with multiplicative updates
//! and the sources are recovered by smooth multichannel Wiener filtering.
//!
//! Spectral bases can be supplied directly (informed separation), detected
//! in a pre-trained library, or extracted blindly from the mixture.
//!
//! Module map:
//!
//! - [`betafac`]: β-divergence and multiplicative-update kernels
//! - [`stft`]: analysis and synthesis front-end
//! - [`localgauss`]: covariances, E-step statistics and Wiener gains
//! - [`estimation`]: NTF/NMF fitting of activations and spatial covariances
//! - [`priors`]: training, extraction and detection of spectral bases
//! - [`init`]: TDOA estimation and binary time-frequency clustering
//! - [`pipeline`]: the outer separation loop
//! - [`eval`]: SDR / ISR / SIR / SAR
//! - [`io`]: WAV files, library files and synthetic mixtures
//! - [`corpus`]: synthetic speech-like sources for demos and tests

pub mod betafac;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod estimation;
pub mod eval;
pub mod init;
pub mod io;
pub mod linalg;
pub mod localgauss;
pub mod pipeline;
pub mod priors;
pub mod signal;
pub mod stft;

pub use betafac::{Beta, ComplexMatrix, NonnegMatrix, EPS};
pub use error::{Error, Result};
pub use signal::Signal;
pub use stft::{Spectrogram, StftConfig};
