//! Laplacian-eigenfunction neural operators (LENO) for reaction-diffusion
//! biomarker dynamics on meshes and brain graphs.

pub mod analysis;
pub mod domain;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod spectral;
pub mod synth;
pub mod train;
pub mod transfer;
pub mod treatment;

pub use error::{Error, Result};
