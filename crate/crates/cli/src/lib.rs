//! Pipeline orchestration for `defect-chain`: configuration, stage
//! commands and run manifests.
//!
//! Each stage reads only files written by earlier stages under the run
//! directory (`synth/`, `extract/`, `infer/`, `propagate/`, `compare/`) and
//! writes a `manifest.json` with checksums of everything it produced.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{exit, CliError, Result};
pub use manifest::RunManifest;
pub use stages::{cmd_compare, cmd_extract, cmd_infer, cmd_propagate, cmd_synth, StageOutcome};
