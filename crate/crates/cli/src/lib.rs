//! Experiment driver for the hierarchical RG engine: configuration,
//! command dispatch and artifact output.

pub mod commands;
pub mod config;
pub mod output;
pub mod selftest;
