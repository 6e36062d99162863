use std::path::Path;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::manifest::{clip_problems, is_clip_manifest, load_clips, DatasetManifest};

/// Checks the config and a dataset or clip manifest without writing anything.
pub fn run(cfg: &PipelineConfig, manifest: &Path) -> Result<()> {
    cfg.validate()?;
    let (n, kind, problems) = if is_clip_manifest(manifest)? {
        let clips = load_clips(manifest)?;
        (clips.len(), "clips", clip_problems(&clips))
    } else {
        let ds = DatasetManifest::load(manifest)?;
        (ds.records.len(), "records", ds.missing_paths())
    };
    if !problems.is_empty() {
        return Err(CliError::InvalidManifest {
            path: manifest.to_path_buf(),
            problems,
        });
    }
    println!("validate: {n} {kind} ok, config {}", cfg.hash());
    Ok(())
}
