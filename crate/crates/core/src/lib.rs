//! A desk-scale laboratory for PROPELLER MRI reconstruction.
//!
//! The crate covers the full processing chain on simulated data with known
//! ground truth:
//!
//! - [`trajectory`]: rotated-blade sampling, in-blade undersampling, blade
//!   subsampling and Pipe–Menon density compensation.
//! - [`phantom`]: ellipse phantoms, coil sensitivities, exact k-space
//!   simulation, correlated coil noise and per-blade phase corruption.
//! - [`nufft`]: Kaiser–Bessel gridding NUFFT with a direct-DFT oracle.
//! - [`coiltools`]: noise covariance, whitening, Walsh combination and
//!   low-resolution sensitivity estimation.
//! - [`grappa`], [`mppca`], [`phasecorr`]: the classical per-blade pipeline.
//! - [`diffkit`] and [`sslrecon`]: a small differentiable toolkit and the
//!   self-supervised unrolled reconstruction trained by k-space splitting.
//! - [`harness`]: metrics, reference pipelines and experiment orchestration.
//!
//! Data live in [`datamodel`] types and are persisted in the `.pks`
//! container (a directory holding `manifest.json` plus raw little-endian
//! blobs).

pub mod coiltools;
pub mod config;
pub mod datamodel;
pub mod diffkit;
pub mod error;
pub mod fft;
pub mod grappa;
pub mod harness;
pub mod linalg;
pub mod mppca;
pub mod nufft;
pub mod phantom;
pub mod phasecorr;
pub mod rng;
pub mod sslrecon;
pub mod trajectory;

pub use config::ReconConfig;
pub use datamodel::{AcquisitionMeta, CoilImages, Image, KSpaceDataset, NoisePrescan};
pub use error::{Error, Result};

/// Complex sample type used throughout the crate.
pub type C64 = num_complex::Complex64;
