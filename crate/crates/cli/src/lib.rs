//! Scenario runner for the optomechanics model: config ingestion, named
//! experiments, sweep execution and run manifests.

pub mod error;
pub mod experiments;
pub mod manifest;
pub mod output;
pub mod runner;
pub mod scenarios;
pub mod settings;
