//! File formats, experiment runner and command-line front end for
//! `coalesce-core`.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod measure_spec;
pub mod output;
