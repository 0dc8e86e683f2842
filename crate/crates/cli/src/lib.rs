//! Experiment runner for `forcedvi`: configuration parsing, experiment execution and
//! deterministic artifact writers.

pub mod config;
pub mod output;
pub mod run;
pub mod selftest;
