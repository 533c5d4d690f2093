//! Command line, file formats and parallel drivers for `owssl-core`.

pub mod cli;
pub mod config;
pub mod formats;
pub mod parallel;
