//! Chemometric tooling for hyperspectral pest detection.
//!
//! The crate covers the full chain from ENVI cubes to class maps:
//! autoscaling ([`preprocess`]), PCA with score/label correlation gating and
//! spectral reconstruction ([`pca`]), supervised escalation of K-means++
//! ([`cluster`]), SIMPLS and PLS-DA ([`pls`]), kernel PLS tuned by Kernel
//! Flows ([`kernel`]) and PLS-driven wavelength selection ([`wavesel`]).
//! The [`cli`] module wires them into the `spectral-sift` batch tool.

pub mod cli;
pub mod cluster;
mod codec;
mod error;
pub mod kernel;
mod linalg;
pub mod pca;
pub mod pls;
pub mod preprocess;
pub mod specdata;
pub mod wavesel;

pub use error::{Error, Result};
