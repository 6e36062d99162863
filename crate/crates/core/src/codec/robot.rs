use serde::{Deserialize, Serialize};

use super::{RecordKind, TokenRecord};
use crate::error::{Error, Result, Warning};

pub const ACTION_DIMS: usize = 7;
/// Size of the reserved tail of the vocabulary.
pub const ACTION_TOKENS: u32 = 256;
/// Half-width applied to a dimension whose percentiles coincide.
pub const DEGENERATE_WIDEN: f64 = 1e-6;

/// `(x, y, z, yaw, pitch, roll, gripper)` displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RobotAction {
    pub delta: [f64; ACTION_DIMS],
}

impl RobotAction {
    pub fn new(delta: [f64; ACTION_DIMS]) -> Self {
        Self { delta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionStats {
    pub low: [f64; ACTION_DIMS],
    pub high: [f64; ACTION_DIMS],
}

impl ActionStats {
    pub fn new(low: [f64; ACTION_DIMS], high: [f64; ACTION_DIMS]) -> Result<Self> {
        let s = Self { low, high };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for d in 0..ACTION_DIMS {
            if !(self.low[d].is_finite() && self.high[d].is_finite() && self.low[d] < self.high[d]) {
                return Err(Error::validation(format!(
                    "dimension {d}: low {} must be < high {}",
                    self.low[d], self.high[d]
                )));
            }
        }
        Ok(())
    }

    fn bin(&self, d: usize, v: f64) -> u32 {
        let (lo, hi) = (self.low[d], self.high[d]);
        let unit = 2.0 * (v.clamp(lo, hi) - lo) / (hi - lo) - 1.0;
        let b = ((unit + 1.0) / 2.0 * ACTION_TOKENS as f64).floor();
        (b.max(0.0) as u32).min(ACTION_TOKENS - 1)
    }

    fn center(&self, d: usize, b: u32) -> f64 {
        let (lo, hi) = (self.low[d], self.high[d]);
        lo + (b as f64 + 0.5) / ACTION_TOKENS as f64 * (hi - lo)
    }
}

fn check_vocab(vocab: u32) -> Result<()> {
    if vocab <= ACTION_TOKENS {
        return Err(Error::validation(format!(
            "vocabulary size {vocab} must exceed {ACTION_TOKENS}"
        )));
    }
    Ok(())
}

/// Maps each dimension to one of the last 256 token ids of a
/// `vocab`-sized vocabulary.
pub fn encode_robot(a: &RobotAction, stats: &ActionStats, vocab: u32) -> Result<TokenRecord> {
    check_vocab(vocab)?;
    stats.validate()?;
    if let Some(d) = a.delta.iter().position(|v| v.is_nan()) {
        return Err(Error::validation(format!("dimension {d} is NaN")));
    }
    let base = vocab - ACTION_TOKENS;
    let ids: Vec<u32> = (0..ACTION_DIMS).map(|d| base + stats.bin(d, a.delta[d])).collect();
    let text = ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
    Ok(TokenRecord {
        text,
        ids: Some(ids),
        kind: RecordKind::Robot,
    })
}

/// Inverse of [`encode_robot`], returning bin centers.
pub fn decode_robot(ids: &[u32], stats: &ActionStats, vocab: u32) -> Result<RobotAction> {
    check_vocab(vocab)?;
    stats.validate()?;
    if ids.len() != ACTION_DIMS {
        return Err(Error::validation(format!(
            "expected {ACTION_DIMS} ids, got {}",
            ids.len()
        )));
    }
    let base = vocab - ACTION_TOKENS;
    let mut delta = [0.0; ACTION_DIMS];
    for (d, &id) in ids.iter().enumerate() {
        if !(base..vocab).contains(&id) {
            return Err(Error::validation(format!(
                "id {id} at position {d} outside [{base}, {}]",
                vocab - 1
            )));
        }
        delta[d] = stats.center(d, id - base);
    }
    Ok(RobotAction { delta })
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// 1st/99th percentile bounds per dimension.
pub fn fit_stats(actions: &[RobotAction]) -> Result<(ActionStats, Vec<Warning>)> {
    if actions.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: actions.len(),
        });
    }
    let mut low = [0.0; ACTION_DIMS];
    let mut high = [0.0; ACTION_DIMS];
    let mut warnings = Vec::new();
    for d in 0..ACTION_DIMS {
        let mut col: Vec<f64> = actions.iter().map(|a| a.delta[d]).collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("dimension {d} has non-finite values")));
        }
        col.sort_by(f64::total_cmp);
        low[d] = percentile(&col, 0.01);
        high[d] = percentile(&col, 0.99);
        if high[d] <= low[d] {
            let mid = low[d];
            low[d] = mid - DEGENERATE_WIDEN;
            high[d] = mid + DEGENERATE_WIDEN;
            warnings.push(Warning::DegenerateDimension { dim: d }.emit());
        }
    }
    Ok((ActionStats::new(low, high)?, warnings))
}
