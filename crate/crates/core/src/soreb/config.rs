use serde::{Deserialize, Serialize};

use super::SorebError;

/// Which positions of the sampled sequence the RL term averages over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotMaskPolicy {
    /// Only the six score slots.
    #[default]
    StochasticSlotsOnly,
    /// Every whitespace token of the rendered text; template tokens have
    /// log-probability 0 and only enlarge the denominator.
    AllGeneratedTokens,
}

/// Adapter settings of the full-scale recipe. Recorded in checkpoints; the
/// toy policy ignores them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: u32,
    pub alpha: u32,
    pub dropout: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 64,
            alpha: 16,
            dropout: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    pub lambda_rl: f64,
    pub lambda_text: f64,
    /// Peak step size of plain gradient descent on the logits.
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub epochs_per_stage: usize,
    pub seed: u64,
    pub slot_mask_policy: SlotMaskPolicy,
    pub lora: LoraConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 0.9,
            lambda_rl: 0.5,
            lambda_text: 1.0,
            learning_rate: 2.0,
            warmup_ratio: 0.03,
            epochs_per_stage: 5,
            seed: 0,
            slot_mask_policy: SlotMaskPolicy::default(),
            lora: LoraConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SorebError> {
        let bad = |m: &str| Err(SorebError::InvalidConfig(m.to_string()));
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta must lie in (0, 1)");
        }
        if !(self.lambda_rl >= 0.0 && self.lambda_rl.is_finite()) {
            return bad("lambda_rl must be finite and non-negative");
        }
        if !(self.lambda_text >= 0.0 && self.lambda_text.is_finite()) {
            return bad("lambda_text must be finite and non-negative");
        }
        if self.lambda_rl == 0.0 && self.lambda_text == 0.0 {
            return bad("at least one loss weight must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad("warmup_ratio must lie in [0, 1)");
        }
        if self.epochs_per_stage == 0 {
            return bad("epochs_per_stage must be positive");
        }
        Ok(())
    }
}
