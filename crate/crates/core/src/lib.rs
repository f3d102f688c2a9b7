pub mod cli_io;
pub mod cppn;
pub mod environments;
pub mod error;
pub mod exec;
pub mod fluid;
pub mod harness;
pub mod lifecycle;
pub mod neat;
pub mod physics;
pub mod rng;
pub mod substrate;
