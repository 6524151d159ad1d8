//! Experiment runner for neural data association: configuration, file
//! formats and the sweep, demo and detector drivers used by the CLI.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod io;
