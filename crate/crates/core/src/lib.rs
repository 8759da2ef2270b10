//! Hyperspectral unmixing under spectral variability.
//!
//! The pipeline runs in three stages: estimate the signal subspace
//! dimension ([`subspace`]), extract reference endmembers ([`extract`]),
//! then estimate abundances, scaling factors and per-pixel endmembers
//! ([`solvers`]). [`simgen`] builds synthetic scenes with ground truth and
//! [`metrics`] scores results against it.

pub mod error;
pub mod extract;
pub mod hsi;
pub mod metrics;
pub mod simgen;
pub mod solvers;
pub mod subspace;

pub use error::{Result, UnmixError};
pub use hsi::{
    perspective_project, reconstruct, spectral_angle, AbundanceMatrix, CoefficientMatrix,
    EndmemberMatrix, LocalEndmemberStack, ScalingMatrix, SpectralCube,
};
