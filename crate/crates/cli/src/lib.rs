//! Experiment runner: config parsing, file formats, synthetic scenes and
//! the simulation studies.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod scenes;
pub mod study;
