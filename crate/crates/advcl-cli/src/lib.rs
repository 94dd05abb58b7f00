//! Library surface of the experiment pipeline: config schema, run
//! manifests, experiment wiring, and report comparison. The `advcl` binary
//! is a thin argument-parsing layer over these modules, and integration
//! tests drive them directly.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod manifest;
pub mod report;
