//! Run configuration, persistence, rendering, replay and the command
//! implementations behind the binary.

pub mod commands;
pub mod config;
pub mod evolve;
pub mod files;
pub mod render;
pub mod trajectory;

pub use commands::{Failure, EXIT_INVALID, EXIT_RUNTIME};
pub use config::{IoConfig, RunConfig};
