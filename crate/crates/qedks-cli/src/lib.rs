//! Scenario runner for the qedks solver: configuration ingestion, task
//! orchestration, artifact persistence and report emission.
//!
//! The binary (`qedks`) is a thin wrapper over [`tasks::run`]; the library
//! surface exists so the test suites can drive complete runs in-process.

pub mod artifacts;
pub mod error;
pub mod manifest;
pub mod scenario;
pub mod sweep;
pub mod tasks;

pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
pub use scenario::{Scenario, Task};
