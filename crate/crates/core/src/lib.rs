//! Triad state space construction (TSSC) images of chaotic time series and a
//! small convolutional classifier for telling chaotic maps apart.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod maps;
pub mod nn;
pub mod triad;

pub use error::{Error, Result};
