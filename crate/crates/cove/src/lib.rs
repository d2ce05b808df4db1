//! Runtime around `cove-core`: concrete backends, bounded batching, config
//! files, dataset and result IO, and the `cove` command line.

pub mod backend;
pub mod batch;
pub mod cli;
pub mod config;
pub mod io;
