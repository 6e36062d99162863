//! JSONL input manifests. Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use somtom::codec::UiAction;
use somtom::segmentation::Clip;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UiImageRecord {
    pub id: String,
    pub image: PathBuf,
    /// JSON array of normalized `[x, y, w, h]` boxes.
    pub boxes: PathBuf,
    #[serde(default)]
    pub actions: Vec<UiAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpan {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub id: String,
    /// Directory of PNG/PGM frames.
    pub frames: PathBuf,
    #[serde(default)]
    pub fps: Option<f64>,
    /// Annotated segments; empty means the whole video with no text.
    #[serde(default)]
    pub segments: Vec<SegmentSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub id: String,
    /// Text file with one 7-value action per line.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Record {
    UiImage(UiImageRecord),
    VideoClip(VideoRecord),
    RobotTrajectory(TrajectoryRecord),
}

impl Record {
    pub fn id(&self) -> &str {
        match self {
            Record::UiImage(r) => &r.id,
            Record::VideoClip(r) => &r.id,
            Record::RobotTrajectory(r) => &r.id,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Record::UiImage(_) => "ui-image",
            Record::VideoClip(_) => "video-clip",
            Record::RobotTrajectory(_) => "robot-trajectory",
        }
    }

    fn resolve(&mut self, base: &Path) {
        match self {
            Record::UiImage(r) => {
                r.image = base.join(&r.image);
                r.boxes = base.join(&r.boxes);
            }
            Record::VideoClip(r) => r.frames = base.join(&r.frames),
            Record::RobotTrajectory(r) => r.path = base.join(&r.path),
        }
    }

    fn paths(&self) -> Vec<&Path> {
        match self {
            Record::UiImage(r) => vec![&r.image, &r.boxes],
            Record::VideoClip(r) => vec![&r.frames],
            Record::RobotTrajectory(r) => vec![&r.path],
        }
    }
}

/// One line of a clip manifest: a clip plus where its frames live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    #[serde(flatten)]
    pub clip: Clip,
    pub frames: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    /// Precomputed traces replacing the built-in tracker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<PathBuf>,
}

impl ClipEntry {
    fn resolve(&mut self, base: &Path) {
        self.frames = base.join(&self.frames);
        if let Some(t) = &mut self.traces {
            *t = base.join(&*t);
        }
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
    let mut out = Vec::new();
    let mut problems = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) => problems.push(format!("line {}: {e}", i + 1)),
        }
    }
    if !problems.is_empty() {
        return Err(CliError::InvalidManifest {
            path: path.to_path_buf(),
            problems,
        });
    }
    Ok(out)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn duplicate_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    ids.filter(|id| !seen.insert(*id))
        .map(|id| format!("duplicate record id `{id}`"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub records: Vec<Record>,
}

impl DatasetManifest {
    /// Parses the manifest and rejects duplicate ids. Referenced files are
    /// not checked here; see [`DatasetManifest::missing_paths`].
    pub fn load(path: &Path) -> Result<Self> {
        let mut records: Vec<Record> = read_jsonl(path)?;
        let base = base_dir(path);
        records.iter_mut().for_each(|r| r.resolve(&base));
        let problems = duplicate_ids(records.iter().map(Record::id));
        if !problems.is_empty() {
            return Err(CliError::InvalidManifest {
                path: path.to_path_buf(),
                problems,
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            records,
        })
    }

    pub fn missing_paths(&self) -> Vec<String> {
        self.records
            .iter()
            .flat_map(|r| {
                r.paths()
                    .into_iter()
                    .filter(|p| !p.exists())
                    .map(move |p| format!("{}: missing {}", r.id(), p.display()))
            })
            .collect()
    }

    /// Records of one type; any other type is a configuration error.
    pub fn only<T>(&self, kind: &str, pick: impl Fn(&Record) -> Option<&T>) -> Result<Vec<&T>> {
        self.records
            .iter()
            .map(|r| {
                pick(r).ok_or_else(|| {
                    CliError::Config(format!(
                        "record `{}` is {}, this command takes {kind} records",
                        r.id(),
                        r.kind()
                    ))
                })
            })
            .collect()
    }
}

pub fn load_clips(path: &Path) -> Result<Vec<ClipEntry>> {
    let mut clips: Vec<ClipEntry> = read_jsonl(path)?;
    let base = base_dir(path);
    clips.iter_mut().for_each(|c| c.resolve(&base));
    let problems = duplicate_ids(clips.iter().map(|c| c.clip.id.as_str()));
    if !problems.is_empty() {
        return Err(CliError::InvalidManifest {
            path: path.to_path_buf(),
            problems,
        });
    }
    Ok(clips)
}

/// Problems with a clip manifest, including missing frame and trace paths.
pub fn clip_problems(clips: &[ClipEntry]) -> Vec<String> {
    let mut out = Vec::new();
    for c in clips {
        if c.clip.start_frame >= c.clip.end_frame {
            out.push(format!("{}: empty frame range", c.clip.id));
        }
        for p in std::iter::once(&c.frames).chain(c.traces.as_ref()) {
            if !p.exists() {
                out.push(format!("{}: missing {}", c.clip.id, p.display()));
            }
        }
    }
    out
}

/// True when the first non-blank line looks like a clip manifest entry.
pub fn is_clip_manifest(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
    let Some(line) = text.lines().find(|l| !l.trim().is_empty()) else {
        return Ok(false);
    };
    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| CliError::json(path, e))?;
    Ok(v.get("clip").is_some() && v.get("type").is_none())
}
