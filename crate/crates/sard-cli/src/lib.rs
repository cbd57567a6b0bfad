//! Experiment harness behind the `sard` command: configuration, domain
//! I/O and the Monte Carlo, bandwidth-search, decomposition, forecasting
//! and convergence-profile workflows.

pub mod config;
pub mod data;
pub mod experiments;
pub mod forecast;
pub mod manifest;
pub mod montecarlo;
pub mod profile;
pub mod search;
pub mod workflow;
