//! File formats, checkpoints and the `storyline` command line built on
//! [`storyline_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod pipeline;
pub mod storylines;

pub use error::{Error, Result};
