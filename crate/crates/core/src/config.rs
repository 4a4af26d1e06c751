//! Run configuration: one JSON document whose sections mirror the library
//! config structs, plus dotted `key=value` overrides.
//!
//! ```json
//! {"seed": 0, "train": {"epochs": 20, "sampler": {"sequence_length": 32}}}
//! ```
//!
//! Missing fields take their defaults; unknown fields are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::synth::{PixelSynthConfig, SynthConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlignerKind {
    /// Square center crop; for frames that are already face-centered.
    #[default]
    Center,
    /// Five-point alignment from `<source>.landmarks.json` sidecars.
    Landmarks,
}

/// Frame → crop → identity vector settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// `projection[:dim]` or a pretrained slot id.
    pub backend: String,
    pub model_path: Option<PathBuf>,
    pub aligner: AlignerKind,
    pub frame_stride: usize,
    pub normalize: bool,
    pub corrupt_before_align: bool,
    /// Replaces the built-in corruption level table.
    pub corruption_table: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            backend: "projection".into(),
            model_path: None,
            aligner: AlignerKind::Center,
            frame_stride: 1,
            normalize: true,
            corrupt_before_align: true,
            corruption_table: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    /// TRAIN/VAL/TEST fractions of identities.
    pub split_fractions: [f64; 3],
    /// Assign auxiliary images to records that lack one.
    pub pair_aux: bool,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            split_fractions: [0.6, 0.2, 0.2],
            pair_aux: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Parallel worker bound; 0 = one per core.
    pub workers: usize,
    pub prepare: PrepareConfig,
    pub pipeline: PipelineConfig,
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub pixel_synth: PixelSynthConfig,
}

impl RunConfig {
    /// Defaults, overlaid with `path` (if any), then with each override.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::input(p, e.to_string()))?;
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        base.with_overrides(overrides)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut value = serde_json::to_value(self)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        serde_json::from_value(value).map_err(|e| Error::InvalidArgument(format!("config override: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.train.validate()
    }
}

/// Sets `a.b.c=value` inside a JSON tree. The key must already exist;
/// the value is parsed as JSON when possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let mut node = root;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown config key {key:?}")))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}
