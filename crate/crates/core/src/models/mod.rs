//! Shipped biped models and their configuration files.

pub mod compass;
pub mod config;
pub mod vhc;

pub use config::{ModelConfig, ModelKind};
