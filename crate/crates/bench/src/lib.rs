//! Experiment harness: sweeps, rate fitting, checks and reporting.

pub mod checks;
pub mod config;
pub mod rate;
pub mod report;
pub mod sweep;
pub mod verify;
pub mod app;
