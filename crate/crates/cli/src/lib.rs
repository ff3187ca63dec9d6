//! Command-line experiment driver.

pub mod commands;
pub mod config;
pub mod experiment;
