//! Config parsing, metrics sinks, single runs and preset suites for the
//! `fedot` experiment runner.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod suite;
