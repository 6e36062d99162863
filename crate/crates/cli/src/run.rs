//! Output tree, per-record resume sidecars and the worker pool.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.json          config hash, config, one entry per input record
//! report.json            config hash and command summary
//! records/<slug>/...     per-record artifacts
//! records/<slug>/done.json  sidecar listing artifact hashes
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use somtom::som::Raster;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};

const SIDECAR: &str = "done.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Done,
    /// Processed without error but produced no supervision.
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub id: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    /// Artifact name to hex SHA-256.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub files: BTreeMap<String, String>,
    /// Command-specific numbers folded into the run summary.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub stats: serde_json::Value,
    #[serde(skip)]
    pub resumed: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    config_hash: String,
    outcome: RecordOutcome,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Filesystem-safe directory name for a record id.
pub fn record_slug(id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .take(64)
        .collect();
    format!("{clean}-{}", &sha256_hex(id.as_bytes())[..8])
}

pub fn png_bytes(img: &Raster) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|source| CliError::Image {
            path: PathBuf::from("<png>"),
            source,
        })?;
    Ok(buf.into_inner())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| CliError::file(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::file(path, e))
}

pub fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, &it).expect("record serializes");
        out.push(b'\n');
    }
    out
}

pub fn to_pretty_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("value serializes");
    out.push(b'\n');
    out
}

/// Collects one record's artifacts inside its directory.
pub struct RecordWriter {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl RecordWriter {
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.dir.join(name), bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }
}

/// What a record processor returns on success.
pub struct Processed {
    pub status: Status,
    pub detail: Option<String>,
    pub stats: serde_json::Value,
}

impl Processed {
    pub fn done(stats: serde_json::Value) -> Self {
        Self {
            status: Status::Done,
            detail: None,
            stats,
        }
    }

    pub fn skipped(detail: impl Into<String>, stats: serde_json::Value) -> Self {
        Self {
            status: Status::Skipped,
            detail: Some(detail.into()),
            stats,
        }
    }
}

pub struct RunContext {
    pub cfg: PipelineConfig,
    pub config_hash: String,
    pub out: PathBuf,
    pool: rayon::ThreadPool,
}

impl RunContext {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.out.clone();
        fs::create_dir_all(out.join("records")).map_err(|e| CliError::file(&out, e))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
        Ok(Self {
            config_hash: cfg.hash(),
            cfg,
            out,
            pool,
        })
    }

    pub fn record_dir(&self, id: &str) -> PathBuf {
        self.out.join("records").join(record_slug(id))
    }

    /// Returns the stored outcome when the sidecar matches this config and
    /// every listed artifact still hashes to its recorded value.
    fn resume(&self, id: &str) -> Option<RecordOutcome> {
        let dir = self.record_dir(id);
        let side: Sidecar = serde_json::from_slice(&fs::read(dir.join(SIDECAR)).ok()?).ok()?;
        if side.config_hash != self.config_hash || side.outcome.id != id {
            return None;
        }
        for (name, hash) in &side.outcome.files {
            if sha256_hex(&fs::read(dir.join(name)).ok()?) != *hash {
                return None;
            }
        }
        Some(RecordOutcome {
            resumed: true,
            ..side.outcome
        })
    }

    fn process_one<T>(
        &self,
        item: &T,
        id: &str,
        f: &(impl Fn(&T, &mut RecordWriter) -> Result<Processed> + Sync),
    ) -> RecordOutcome {
        if let Some(o) = self.resume(id) {
            log::debug!("{id}: resumed");
            return o;
        }
        let dir = self.record_dir(id);
        let attempt = (|| {
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| CliError::file(&dir, e))?;
            }
            fs::create_dir_all(&dir).map_err(|e| CliError::file(&dir, e))?;
            let mut w = RecordWriter {
                dir: dir.clone(),
                files: BTreeMap::new(),
            };
            let p = f(item, &mut w)?;
            let outcome = RecordOutcome {
                id: id.to_string(),
                status: p.status,
                detail: p.detail,
                files: w.files,
                stats: p.stats,
                resumed: false,
            };
            let side = Sidecar {
                config_hash: self.config_hash.clone(),
                outcome: outcome.clone(),
            };
            write_file(&dir.join(SIDECAR), &to_pretty_json(&side))?;
            Ok::<_, CliError>(outcome)
        })();
        attempt.unwrap_or_else(|e| {
            log::warn!("{id}: skipped after error: {e}");
            let _ = fs::remove_dir_all(&dir);
            RecordOutcome {
                id: id.to_string(),
                status: Status::Failed,
                detail: Some(e.to_string()),
                files: BTreeMap::new(),
                stats: serde_json::Value::Null,
                resumed: false,
            }
        })
    }

    /// Runs `f` over `items` on the worker pool. Outcomes come back in
    /// input order regardless of the worker count.
    pub fn run_records<T: Sync>(
        &self,
        items: &[T],
        id_of: impl Fn(&T) -> String + Sync,
        f: impl Fn(&T, &mut RecordWriter) -> Result<Processed> + Sync,
    ) -> Vec<RecordOutcome> {
        self.pool.install(|| {
            items
                .par_iter()
                .map(|it| self.process_one(it, &id_of(it), &f))
                .collect()
        })
    }

    pub fn install<R: Send>(&self, op: impl FnOnce() -> R + Send) -> R {
        self.pool.install(op)
    }

    /// Reads back an artifact written by a record (fresh or resumed).
    pub fn read_artifact(&self, o: &RecordOutcome, name: &str) -> Result<Option<Vec<u8>>> {
        if !o.files.contains_key(name) {
            return Ok(None);
        }
        let p = self.record_dir(&o.id).join(name);
        fs::read(&p).map(Some).map_err(|e| CliError::file(&p, e))
    }

    pub fn write_output(&self, name: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.out.join(name), bytes)
    }

    /// Writes `manifest.json` and `report.json`, then applies the failure budget.
    pub fn finish(
        &self,
        command: &str,
        records: &[RecordOutcome],
        summary: serde_json::Value,
    ) -> Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            command: &'a str,
            config_hash: &'a str,
            config: &'a PipelineConfig,
            records: &'a [RecordOutcome],
        }
        #[derive(Serialize)]
        struct Report<'a> {
            command: &'a str,
            config_hash: &'a str,
            summary: serde_json::Value,
        }
        let mut cfg = self.cfg.clone();
        cfg.workers = 0;
        cfg.out = PathBuf::new();
        self.write_output(
            "manifest.json",
            &to_pretty_json(&Manifest {
                command,
                config_hash: &self.config_hash,
                config: &cfg,
                records,
            }),
        )?;
        self.write_output(
            "report.json",
            &to_pretty_json(&Report {
                command,
                config_hash: &self.config_hash,
                summary,
            }),
        )?;
        check_budget(records, self.cfg.fail_budget)
    }
}

pub fn count(records: &[RecordOutcome], status: Status) -> usize {
    records.iter().filter(|r| r.status == status).count()
}

pub fn check_budget(records: &[RecordOutcome], budget: f64) -> Result<()> {
    let failed = count(records, Status::Failed);
    let total = records.len();
    if total > 0 && failed as f64 > budget * total as f64 {
        return Err(CliError::BudgetExceeded {
            failed,
            total,
            budget,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(status: Status) -> RecordOutcome {
        RecordOutcome {
            id: String::new(),
            status,
            detail: None,
            files: BTreeMap::new(),
            stats: serde_json::Value::Null,
            resumed: false,
        }
    }

    #[test]
    fn budget_boundary_is_inclusive() {
        let mut rs: Vec<_> = (0..99).map(|_| outcome(Status::Done)).collect();
        rs.push(outcome(Status::Failed));
        assert!(check_budget(&rs, 0.01).is_ok());
        rs[0].status = Status::Failed;
        assert!(check_budget(&rs, 0.01).is_err());
        assert!(check_budget(&[], 0.0).is_ok());
    }

    #[test]
    fn skipped_records_do_not_count_as_failures() {
        let rs = vec![outcome(Status::Skipped), outcome(Status::Done)];
        assert!(check_budget(&rs, 0.0).is_ok());
    }

    #[test]
    fn slugs_are_safe_and_distinct() {
        let a = record_slug("vid/a:0-12");
        let b = record_slug("vid_a_0-12");
        assert!(a.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)));
        assert_ne!(a, b);
    }

    fn ctx(out: &Path) -> RunContext {
        RunContext::new(PipelineConfig {
            out: out.to_path_buf(),
            workers: 2,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn resume_reuses_valid_outputs_and_redoes_tampered_ones() {
        let dir = tempfile::tempdir().unwrap();
        let c = ctx(dir.path());
        let items = vec!["a".to_string(), "b".to_string()];
        let run = || {
            c.run_records(&items, |s| s.clone(), |s, w| {
                w.write("x.txt", s.as_bytes())?;
                Ok(Processed::done(serde_json::Value::Null))
            })
        };
        let first = run();
        assert!(first.iter().all(|o| o.status == Status::Done && !o.resumed));
        fs::write(c.record_dir("b").join("x.txt"), "tampered").unwrap();
        let second = run();
        assert!(second[0].resumed);
        assert!(!second[1].resumed);
        let strip = |v: Vec<RecordOutcome>| {
            v.into_iter()
                .map(|o| RecordOutcome { resumed: false, ..o })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(first), strip(second));
        assert_eq!(fs::read(c.record_dir("b").join("x.txt")).unwrap(), b"b");
    }

    #[test]
    fn failures_are_captured_per_record() {
        let dir = tempfile::tempdir().unwrap();
        let c = ctx(dir.path());
        let items = vec![1, 2, 3];
        let out = c.run_records(&items, |i| i.to_string(), |&i, _| {
            if i == 2 {
                Err(CliError::Config("boom".into()))
            } else {
                Ok(Processed::done(serde_json::Value::Null))
            }
        });
        assert_eq!(out[1].status, Status::Failed);
        assert!(out[1].detail.as_deref().unwrap().contains("boom"));
        assert!(!c.record_dir("2").exists());
        assert_eq!(count(&out, Status::Done), 2);
    }
}
