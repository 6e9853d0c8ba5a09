use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SorebError, TrainConfig};

/// Score classes 0..=5.
pub const CLASSES: usize = 6;

/// Logits of one context: `[dimension][score class]`.
pub type LogitRow = [[f64; CLASSES]; 6];

pub fn log_softmax(logits: &[f64; CLASSES]) -> [f64; CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.map(|z| z - lse)
}

pub fn softmax(logits: &[f64; CLASSES]) -> [f64; CLASSES] {
    log_softmax(logits).map(f64::exp)
}

/// Per-context categorical distributions over the six score slots.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    rows: BTreeMap<String, LogitRow>,
}

impl PolicyModel {
    pub fn new() -> Self {
        PolicyModel::default()
    }

    pub fn contexts(&self) -> impl Iterator<Item = &String> {
        self.rows.keys()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, context: &str) -> Option<&LogitRow> {
        self.rows.get(context)
    }

    /// Unknown contexts behave as all-zero (uniform) rows.
    pub fn row_or_uniform(&self, context: &str) -> LogitRow {
        self.rows.get(context).copied().unwrap_or([[0.0; CLASSES]; 6])
    }

    /// Allocates a uniform row on first use.
    pub fn row_mut(&mut self, context: &str) -> &mut LogitRow {
        self.rows.entry(context.to_string()).or_insert([[0.0; CLASSES]; 6])
    }

    pub fn set_row(&mut self, context: &str, row: LogitRow) {
        self.rows.insert(context.to_string(), row);
    }

    pub fn log_probs(&self, context: &str) -> LogitRow {
        self.row_or_uniform(context).map(|slot| log_softmax(&slot))
    }

    pub fn probs(&self, context: &str) -> LogitRow {
        self.row_or_uniform(context).map(|slot| softmax(&slot))
    }

    /// Sum of the chosen slot log-probabilities.
    pub fn sequence_log_prob(&self, context: &str, scores: &[u8; 6]) -> f64 {
        let lp = self.log_probs(context);
        (0..6).map(|d| lp[d][scores[d] as usize]).sum()
    }

    pub fn argmax_scores(&self, context: &str) -> [u8; 6] {
        let row = self.row_or_uniform(context);
        std::array::from_fn(|d| {
            let mut best = 0;
            for c in 1..CLASSES {
                if row[d][c] > row[d][best] {
                    best = c;
                }
            }
            best as u8
        })
    }

    pub fn is_finite(&self) -> bool {
        self.rows.values().flatten().flatten().all(|v| v.is_finite())
    }

    /// `row -= step * grad` for one context.
    pub fn apply(&mut self, context: &str, grad: &LogitRow, step: f64) {
        let row = self.row_mut(context);
        for d in 0..6 {
            for c in 0..CLASSES {
                row[d][c] -= step * grad[d][c];
            }
        }
    }
}

const CHECKPOINT_FORMAT: &str = "dermjudge-policy";
const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing policy file with the producing config embedded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub stage: String,
    pub steps: usize,
    pub config: TrainConfig,
    pub policy: PolicyModel,
}

impl Checkpoint {
    pub fn new(stage: &str, steps: usize, config: TrainConfig, policy: PolicyModel) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            stage: stage.to_string(),
            steps,
            config,
            policy,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SorebError> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| SorebError::Checkpoint(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(SorebError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        if !c.policy.is_finite() {
            return Err(SorebError::Checkpoint("checkpoint holds non-finite logits".into()));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, SorebError> {
        let text = fs::read_to_string(path).map_err(|e| SorebError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Checkpoint::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), SorebError> {
        fs::write(path, self.to_json()).map_err(|e| SorebError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_normalized_and_stable() {
        for logits in [[0.0; 6], [1000.0, 0.0, -1000.0, 3.0, 2.0, 1.0], [-700.0; 6]] {
            let p = softmax(&logits);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn sequence_log_prob_sums_slots() {
        let mut policy = PolicyModel::new();
        policy.row_mut("x")[2] = [0.0, 0.0, 5.0, 0.0, 0.0, 0.0];
        let s = [1, 2, 3, 4, 5, 0];
        let lp = policy.log_probs("x");
        let want: f64 = (0..6).map(|d| lp[d][s[d] as usize]).sum();
        assert_eq!(policy.sequence_log_prob("x", &s), want);
        assert!((policy.sequence_log_prob("unknown", &s) - 6.0 * (1.0f64 / 6.0).ln()).abs() < 1e-12);
        assert_eq!(policy.argmax_scores("x")[2], 2);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut policy = PolicyModel::new();
        policy.row_mut("ctx")[0][3] = 0.1 + 0.2;
        policy.row_mut("ctx")[5][0] = -1.0 / 3.0;
        let c = Checkpoint::new("stage1", 10, TrainConfig::default(), policy);
        let back = Checkpoint::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let mut bad = c.clone();
        bad.version = 9;
        assert!(Checkpoint::from_json(&bad.to_json()).is_err());
    }
}
