//! Reward, baseline and the two losses with their analytic gradients.

use super::policy::{log_softmax, softmax, LogitRow, PolicyModel, CLASSES};
use super::{SampledEvaluation, SlotMaskPolicy, SorebError, TrainInstance};
use crate::scores::ScoreVector;

/// Largest possible squared error on a 0..=5 scale.
pub const MAX_SQUARED_ERROR: f64 = 25.0;

/// Negative mean squared error over the dimensions present in `parsed`.
/// `None` when nothing was parsed; such samples carry no reward.
pub fn reward(parsed: &ScoreVector, physician: &ScoreVector) -> Result<Option<f64>, SorebError> {
    let target = physician
        .require_complete()
        .map_err(|e| SorebError::Precondition(e.to_string()))?;
    let mut sum = 0.0;
    let mut k = 0usize;
    for (dim, s) in parsed.iter() {
        let diff = (s.milli() as i64 - target[dim.index()].milli() as i64) as f64 / 1000.0;
        sum += diff * diff;
        k += 1;
    }
    if k == 0 {
        return Ok(None);
    }
    Ok(Some(-(sum / k as f64)))
}

/// Scalar exponential moving average of rewards.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BaselineState {
    pub b: f64,
    pub beta: f64,
    pub initialized: bool,
}

impl BaselineState {
    pub fn new(beta: f64) -> Result<Self, SorebError> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(SorebError::InvalidConfig(format!("beta {beta} outside (0, 1)")));
        }
        Ok(BaselineState {
            b: 0.0,
            beta,
            initialized: false,
        })
    }

    /// Updates the baseline, then returns `r - b` against the new value,
    /// which equals `beta * (r - b_before)`. The first reward seeds the
    /// baseline and yields advantage 0.
    pub fn update(&mut self, r: f64) -> Result<f64, SorebError> {
        if !r.is_finite() {
            return Err(SorebError::NonFinite(format!("reward {r}")));
        }
        if !self.initialized {
            self.b = r;
            self.initialized = true;
            return Ok(0.0);
        }
        let prev = self.b;
        self.b = (prev + (1.0 - self.beta) * (r - prev)).clamp(prev.min(r), prev.max(r));
        Ok(r - self.b)
    }
}

/// Cross-entropy of the target scores; gradient is `softmax - onehot` per slot.
pub fn text_loss_row(logits: &LogitRow, target: &[u8; 6]) -> (f64, LogitRow) {
    let mut loss = 0.0;
    let mut grad = [[0.0; CLASSES]; 6];
    for d in 0..6 {
        let lp = log_softmax(&logits[d]);
        let t = target[d] as usize;
        loss -= lp[t];
        grad[d] = lp.map(f64::exp);
        grad[d][t] -= 1.0;
    }
    (loss, grad)
}

/// `-advantage * mean log p` over `generated` positions of which only the
/// six score slots depend on the logits.
pub fn rl_loss_row(logits: &LogitRow, sampled: &[u8; 6], advantage: f64, generated: usize) -> (f64, LogitRow) {
    let mut grad = [[0.0; CLASSES]; 6];
    if generated == 0 {
        return (0.0, grad);
    }
    let scale = advantage / generated as f64;
    let mut sum_lp = 0.0;
    for d in 0..6 {
        let s = sampled[d] as usize;
        sum_lp += log_softmax(&logits[d])[s];
        grad[d] = softmax(&logits[d]).map(|p| scale * p);
        grad[d][s] -= scale;
    }
    (-advantage * sum_lp / generated as f64, grad)
}

pub fn text_loss(policy: &PolicyModel, instance: &TrainInstance) -> Result<(f64, LogitRow), SorebError> {
    let target = instance.target_points()?;
    Ok(text_loss_row(&policy.row_or_uniform(&instance.context), &target))
}

pub fn rl_loss(
    policy: &PolicyModel,
    sample: &SampledEvaluation,
    advantage: f64,
    mask: SlotMaskPolicy,
) -> Result<(f64, LogitRow), SorebError> {
    if !advantage.is_finite() {
        return Err(SorebError::NonFinite(format!("advantage {advantage}")));
    }
    Ok(rl_loss_row(
        &policy.row_or_uniform(&sample.context),
        &sample.scores,
        advantage,
        sample.generated_positions(mask),
    ))
}
