//! Library surface of the experiment driver, shared by the `limber` binary
//! and the integration/acceptance tests.

pub mod config;
pub mod ingest;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod svg;

pub use config::ExperimentConfig;
pub use manifest::RunManifest;
