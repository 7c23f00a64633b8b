use std::path::{Path, PathBuf};

use anyhow::Context;
use reanno_core::grounding::GroundingOptions;
use reanno_core::llm_gateway::DecodingParams;
use reanno_core::promptgen::PromptConfig;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_FILE: &str = "dataset.json";
pub const GROUNDING_FILE: &str = "grounding_report.json";
pub const PIPELINE_FILE: &str = "pipeline_report.json";
pub const REPLAY_FILE: &str = "replay.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    Replay,
}

/// Everything needed to rerun an annotation with the replay backend.
/// Input paths are absolute; output names are relative to the run
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    /// `None` for the bundled schema.
    pub schema: Option<PathBuf>,
    pub schema_fingerprint: String,
    /// `None` for the bundled template.
    pub template: Option<PathBuf>,
    pub prompt: PromptConfig,
    pub decoding: DecodingParams,
    pub backend: BackendMode,
    pub endpoint: String,
    pub replay_store: PathBuf,
    pub max_in_flight: usize,
    pub grounding: GroundingOptions,
    pub corpus: PathBuf,
    pub sample: Option<usize>,
    pub seed: u64,
    pub exemplars: Option<PathBuf>,
    pub exemplar_ids: Vec<String>,
    pub input_sentences: usize,
    pub outputs: Outputs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outputs {
    pub dataset: String,
    pub grounding_report: String,
    pub pipeline_report: String,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            dataset: DATASET_FILE.into(),
            grounding_report: GROUNDING_FILE.into(),
            pipeline_report: PIPELINE_FILE.into(),
        }
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

pub fn absolute(path: &Path) -> anyhow::Result<PathBuf> {
    std::fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))
}
