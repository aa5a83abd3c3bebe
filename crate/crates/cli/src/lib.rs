//! Command-line runner: resolves a run configuration, drives the generator
//! and writes latents, traces, diagnostics and a manifest.

pub mod analytic;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod run;

pub use config::{
    prepare, Overrides, PredictorConfig, Prepared, RunConfig, ScenarioSpec, SweepAxis, SweepParam,
};
pub use error::CliError;
pub use run::{execute, run, ClipEntry, Manifest, RunSummary, SweepPoint};
