use rand::Rng;

use super::policy::{PolicyModel, CLASSES};
use super::SlotMaskPolicy;
use crate::scores::ScoreVector;
use crate::textproto::render_evaluation;

/// One evaluation drawn from the policy, with no gradient state touched.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledEvaluation {
    pub context: String,
    pub text: String,
    pub scores: [u8; 6],
    pub log_prob: f64,
    /// Whitespace tokens of `text`; the six score slots are among them.
    pub tokens: usize,
}

impl SampledEvaluation {
    /// Size of the position set the RL loss averages over.
    pub fn generated_positions(&self, mask: SlotMaskPolicy) -> usize {
        match mask {
            SlotMaskPolicy::StochasticSlotsOnly => 6,
            SlotMaskPolicy::AllGeneratedTokens => self.tokens,
        }
    }
}

/// Inverse-CDF draw of each slot from its softmax.
pub fn sample_scores<R: Rng + ?Sized>(policy: &PolicyModel, context: &str, rng: &mut R) -> [u8; 6] {
    let probs = policy.probs(context);
    std::array::from_fn(|d| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (c, p) in probs[d].iter().enumerate() {
            acc += p;
            if u < acc {
                return c as u8;
            }
        }
        // Rounding left u above the last partial sum: take the last class
        // with non-zero mass.
        (0..CLASSES).rev().find(|&c| probs[d][c] > 0.0).unwrap_or(CLASSES - 1) as u8
    })
}

pub fn sample_evaluation<R: Rng + ?Sized>(policy: &PolicyModel, context: &str, rng: &mut R) -> SampledEvaluation {
    let scores = sample_scores(policy, context, rng);
    let text = render_evaluation(&ScoreVector::from_points(scores), &[""; 6])
        .expect("sampled scores are complete")
        .to_string();
    SampledEvaluation {
        context: context.to_string(),
        tokens: text.split_whitespace().count(),
        log_prob: policy.sequence_log_prob(context, &scores),
        scores,
        text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproto::parse_scores;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn saturated_policy_is_deterministic() {
        let mut policy = PolicyModel::new();
        let target = [3u8, 0, 5, 1, 2, 4];
        for d in 0..6 {
            let mut row = [-30.0; 6];
            row[target[d] as usize] = 30.0;
            policy.row_mut("c")[d] = row;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_evaluation(&policy, "c", &mut rng);
        assert_eq!(s.scores, target);
        assert_eq!(
            s.text,
            render_evaluation(&ScoreVector::from_points(target), &[""; 6])
                .unwrap()
                .to_string()
        );
        assert_eq!(parse_scores(&s.text).scores, ScoreVector::from_points(target));
        assert!(s.tokens > 6);
    }

    #[test]
    fn fixed_seed_repeats() {
        let policy = PolicyModel::new();
        let a = sample_evaluation(&policy, "c", &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_evaluation(&policy, "c", &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!((a.log_prob - 6.0 * (1.0f64 / 6.0).ln()).abs() < 1e-12);
    }
}
