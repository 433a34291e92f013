//! Library surface of the pipeline CLI, kept separate from argument parsing
//! so integration tests can drive the same code paths directly.

pub mod commands;
pub mod config;
