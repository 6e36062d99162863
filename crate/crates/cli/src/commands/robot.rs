use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use somtom::codec::{encode_robot, fit_stats, ActionStats, RobotAction, TokenRecord, ACTION_DIMS};

use crate::error::{CliError, Result};
use crate::manifest::{DatasetManifest, Record};
use crate::run::{to_jsonl, to_pretty_json, RunContext};

/// Parses one action per line, values separated by commas or whitespace.
/// Blank lines and `#` comments are skipped.
pub fn read_trajectory(path: &Path) -> Result<Vec<RobotAction>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let bad = |m: String| {
            CliError::Core(somtom::Error::Parse {
                line: i + 1,
                message: format!("{}: {m}", path.display()),
            })
        };
        let vals = t
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        let delta: [f64; ACTION_DIMS] = vals
            .as_slice()
            .try_into()
            .map_err(|_| bad(format!("expected {ACTION_DIMS} values, found {}", vals.len())))?;
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
        out.push(RobotAction::new(delta));
    }
    Ok(out)
}

#[derive(Serialize)]
struct KeyedRecord<'a> {
    id: &'a str,
    step: usize,
    #[serde(flatten)]
    record: TokenRecord,
}

pub fn run(ctx: &RunContext, manifest: &DatasetManifest) -> Result<()> {
    let records = manifest.only("robot-trajectory", |r| match r {
        Record::RobotTrajectory(t) => Some(t),
        _ => None,
    })?;
    let trajectories = ctx.install(|| {
        records
            .par_iter()
            .map(|r| read_trajectory(&r.path))
            .collect::<Result<Vec<_>>>()
    })?;

    let (stats, warnings) = match &ctx.cfg.codec.stats {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::file(p, e))?;
            let s: ActionStats = serde_json::from_str(&text).map_err(|e| CliError::json(p, e))?;
            s.validate()?;
            (s, Vec::new())
        }
        None => {
            let all: Vec<RobotAction> = trajectories.iter().flatten().copied().collect();
            fit_stats(&all)?
        }
    };
    ctx.write_output("action_stats.json", &to_pretty_json(&stats))?;

    let vocab = ctx.cfg.codec.vocab;
    let lines = ctx.install(|| {
        records
            .par_iter()
            .zip(&trajectories)
            .map(|(r, actions)| {
                actions
                    .iter()
                    .enumerate()
                    .map(|(step, a)| {
                        Ok(KeyedRecord {
                            id: &r.id,
                            step,
                            record: encode_robot(a, &stats, vocab)?,
                        })
                    })
                    .collect::<somtom::Result<Vec<_>>>()
            })
            .collect::<somtom::Result<Vec<_>>>()
    })?;
    let n_actions: usize = lines.iter().map(Vec::len).sum();
    ctx.write_output("tokens.jsonl", &to_jsonl(lines.iter().flatten()))?;

    let summary = json!({
        "trajectories": records.len(),
        "actions": n_actions,
        "stats_source": if ctx.cfg.codec.stats.is_some() { "provided" } else { "fitted" },
        "warnings": warnings,
    });
    println!("encode-robot: {} trajectories, {n_actions} actions", records.len());
    ctx.finish("encode-robot", &[], summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_parsing_accepts_commas_and_spaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        fs::write(&p, "# header\n1,2,3,4,5,6,7\n\n0 0 0 0 0 0 1\n").unwrap();
        let a = read_trajectory(&p).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].delta[6], 7.0);
        fs::write(&p, "1,2,3,4,5,6\n").unwrap();
        let err = read_trajectory(&p).unwrap_err().to_string();
        assert!(err.contains("expected 7 values, found 6"), "{err}");
        fs::write(&p, "1,2,3,4,5,6,x\n").unwrap();
        assert!(read_trajectory(&p).is_err());
    }
}
