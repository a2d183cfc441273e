//! Diffusion MRI harmonization with online dictionary learning.

pub mod alteration;
pub mod cli;
pub mod config;
pub mod dictionary;
pub mod error;
pub mod evaluation;
pub mod harmonizer;
pub mod lasso;
pub mod metrics;
pub mod nifti;
pub mod patching;
pub mod rng;
pub mod sh;
pub mod volume;

pub use error::{Error, Result};
