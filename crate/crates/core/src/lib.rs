pub mod agent;
pub mod config;
pub mod correction;
pub mod data;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod target_models;
pub mod theory;
mod bytes;
pub use error::{Error, Result};
