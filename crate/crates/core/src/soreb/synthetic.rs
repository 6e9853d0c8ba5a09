use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::TrainInstance;
use super::SorebError;

/// Shape of a generated training corpus. Contexts are the cross product of
/// disease categories and quality tiers; each context has one fixed target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub categories: usize,
    pub tiers: usize,
    pub instances_per_context: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            categories: 25,
            tiers: 8,
            instances_per_context: 2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn contexts(&self) -> usize {
        self.categories * self.tiers
    }
}

pub fn context_key(category: usize, tier: usize) -> String {
    format!("cat{category:02}/tier{tier}")
}

/// Targets follow the tier's quality level with a per-context jitter of at
/// most one point. The corpus lists every context once per repetition.
pub fn synthetic_corpus(spec: &SyntheticSpec) -> Result<Vec<TrainInstance>, SorebError> {
    if spec.categories == 0 || spec.tiers == 0 || spec.instances_per_context == 0 {
        return Err(SorebError::InvalidConfig(
            "synthetic corpus dimensions must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut distinct = Vec::with_capacity(spec.contexts());
    for category in 0..spec.categories {
        for tier in 0..spec.tiers {
            let level = if spec.tiers == 1 {
                5.0
            } else {
                5.0 * tier as f64 / (spec.tiers - 1) as f64
            };
            let points: [u8; 6] = std::array::from_fn(|_| {
                let jitter = rng.random_range(-1i32..=1);
                (level.round() as i32 + jitter).clamp(0, 5) as u8
            });
            distinct.push(TrainInstance::new(&context_key(category, tier), points));
        }
    }
    let mut corpus = Vec::with_capacity(distinct.len() * spec.instances_per_context);
    for _ in 0..spec.instances_per_context {
        corpus.extend(distinct.iter().cloned());
    }
    Ok(corpus)
}
