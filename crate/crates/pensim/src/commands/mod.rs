//! Subcommand implementations.

pub mod crosscheck;
pub mod estimate;
pub mod simulate;
pub mod solve;
pub mod synth;
pub mod tables;
