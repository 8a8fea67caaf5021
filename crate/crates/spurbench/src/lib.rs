//! File formats, parallel evaluation and the `spurbench` command line.

pub use spurbench_core as core;

pub mod audio;
pub mod cli;
pub mod commands;
pub mod config;
pub mod formats;
pub mod parallel;
pub mod reports;
