//! Experiment harness for the inexact gradient method: synthetic problem
//! generators, JSON configs, per-seed runs with verification, and sweeps.

pub mod config;
pub mod generate;
pub mod output;
pub mod runner;
pub mod sweep;
