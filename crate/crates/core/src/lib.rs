//! Simulation and mean-field analysis of spatially extended, noisy neural
//! networks with Gaussian random couplings and distance-dependent delays.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: the model functions, their constants and validation;
//! - [`gaussian`]: Gaussian-process sampling and moment identities;
//! - [`network`]: the finite network simulator;
//! - [`measure`]: statistics and distances on path space;
//! - [`meanfield`]: the mean-field map and its Picard fixed point;
//! - [`diagnostics`]: experiment drivers built on the above.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod gaussian;
pub mod io;
pub mod meanfield;
pub mod measure;
pub mod model;
pub mod network;
pub mod rng;

pub use config::Config;
pub use error::{Error, Result};
pub use model::{build_model, ModelParams};
