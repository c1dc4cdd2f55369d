//! File formats, configuration and the command-line driver for
//! [`upada_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod tables;

pub use error::{Error, Result};
