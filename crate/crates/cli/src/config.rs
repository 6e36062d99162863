use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use somtom::segmentation::{ShotParams, DEFAULT_SIMILARITY_THRESHOLD};
use somtom::{TomConfig, TrackerConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    SomUi,
    Segment,
    Tom,
    EncodeRobot,
    EvalTraces,
    Validate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub shots: ShotParams,
    pub similarity_threshold: f64,
    /// Clip similarity scores; filtering runs only when this is set.
    pub scores: Option<PathBuf>,
    pub default_fps: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            shots: ShotParams::default(),
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            scores: None,
            default_fps: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub vocab: u32,
    /// Precomputed action statistics; fitted from the data when absent.
    pub stats: Option<PathBuf>,
    /// Future points per serialized trace.
    pub trace_points: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            vocab: 32000,
            stats: None,
            trace_points: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub horizon_s: f64,
    pub fps: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizon_s: 1.0,
            fps: 30.0,
        }
    }
}

/// Everything that determines a run's outputs, plus execution knobs
/// (`workers`, `out`) that do not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stage: Option<Stage>,
    pub tom: TomConfig,
    pub tracker: TrackerConfig,
    pub segmentation: SegmentationConfig,
    pub codec: CodecConfig,
    pub eval: EvalConfig,
    pub workers: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub fail_budget: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stage: None,
            tom: TomConfig::default(),
            tracker: TrackerConfig::default(),
            segmentation: SegmentationConfig::default(),
            codec: CodecConfig::default(),
            eval: EvalConfig::default(),
            workers: 0,
            seed: 0,
            out: PathBuf::from("out"),
            fail_budget: 0.01,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.tom.validate()?;
        self.tracker.validate()?;
        self.segmentation.shots.validate()?;
        let bad = |m: String| Err(CliError::Config(m));
        if !(0.0..=1.0).contains(&self.fail_budget) {
            return bad(format!("fail_budget {} outside [0, 1]", self.fail_budget));
        }
        if self.codec.vocab < somtom::codec::ACTION_TOKENS {
            return bad(format!(
                "vocab {} smaller than the {} action tokens",
                self.codec.vocab,
                somtom::codec::ACTION_TOKENS
            ));
        }
        if self.codec.trace_points == 0 {
            return bad("trace_points must be >= 1".into());
        }
        if !(self.segmentation.default_fps > 0.0) || !(self.eval.fps > 0.0) {
            return bad("fps values must be positive".into());
        }
        if !(self.eval.horizon_s >= 0.0) {
            return bad("horizon_s must be >= 0".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, excluding `workers` and `out`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("workers");
            m.remove("out");
        }
        let bytes = serde_json::to_vec(&v).expect("value serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Seed for one record: the global seed mixed with a stable hash of its id.
    pub fn record_seed(&self, id: &str) -> u64 {
        let d = Sha256::digest(id.as_bytes());
        self.seed ^ u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}
