//! The run manifest: everything `train` resolved from its flags, enough to
//! repeat the run bit-for-bit with `--from-manifest`.

use std::path::{Path, PathBuf};

use banglahate::corpus::Task;
use banglahate::pipeline::PipelineConfig;
use banglahate::Error;
use serde::{Deserialize, Serialize};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const TRAINING_REPORT: &str = "training_report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInputs {
    pub task: Task,
    pub corpus: PathBuf,
    pub extra: Option<PathBuf>,
    pub label_map: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub inputs: RunInputs,
    pub pipeline: PipelineConfig,
}

impl RunManifest {
    pub fn new(inputs: RunInputs, pipeline: PipelineConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs,
            pipeline,
        }
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
