//! Federated recommendation with low-pass spectral graph convolution.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod federation;
pub mod graph;
pub mod model;
pub mod spectral;
pub mod theory;

pub use error::{Error, Result};
