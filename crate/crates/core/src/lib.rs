//! Road segmentation with spatial and interaction-space graph reasoning.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod spin;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
