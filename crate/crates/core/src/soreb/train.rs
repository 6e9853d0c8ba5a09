use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{reward, rl_loss, text_loss, BaselineState};
use super::policy::{LogitRow, PolicyModel, CLASSES};
use super::sampling::{sample_evaluation, SampledEvaluation};
use super::schedule::learning_rate;
use super::{SorebError, TrainConfig};
use crate::scores::ScoreVector;
use crate::textproto::{parse_scores, render_evaluation};

/// Fraction of contexts whose initial samples must parse before stage 2.
const MIN_PARSABLE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainInstance {
    pub context: String,
    pub target_scores: ScoreVector,
    pub target_text: String,
}

impl TrainInstance {
    /// Renders the canonical target text for `points`.
    pub fn new(context: &str, points: [u8; 6]) -> Self {
        let target_scores = ScoreVector::from_points(points);
        let target_text = render_evaluation(&target_scores, &[""; 6])
            .expect("complete scores render")
            .to_string();
        TrainInstance {
            context: context.to_string(),
            target_scores,
            target_text,
        }
    }

    pub fn target_points(&self) -> Result<[u8; 6], SorebError> {
        self.target_scores
            .integer_points()
            .ok_or_else(|| SorebError::Precondition(format!("{}: targets must be six integer scores", self.context)))
    }

    pub fn validate(&self, index: usize) -> Result<(), SorebError> {
        let invalid = |reason: String| SorebError::InvalidInstance { index, reason };
        if self.context.is_empty() {
            return Err(invalid("empty context key".into()));
        }
        self.target_points().map_err(|e| invalid(e.to_string()))?;
        let parsed = parse_scores(&self.target_text).scores;
        if parsed != self.target_scores {
            return Err(invalid("target text does not parse back to the target scores".into()));
        }
        Ok(())
    }
}

pub fn load_corpus(path: &Path) -> Result<Vec<TrainInstance>, SorebError> {
    let io = |e: std::io::Error| SorebError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let text = fs::read_to_string(path).map_err(io)?;
    let mut corpus = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let inst: TrainInstance = serde_json::from_str(line).map_err(|e| SorebError::InvalidInstance {
            index: corpus.len(),
            reason: format!("line {}: {e}", n + 1),
        })?;
        inst.validate(corpus.len())?;
        corpus.push(inst);
    }
    if corpus.is_empty() {
        return Err(SorebError::EmptyCorpus);
    }
    Ok(corpus)
}

pub fn write_corpus(path: &Path, corpus: &[TrainInstance]) -> Result<(), SorebError> {
    let mut out = String::new();
    for inst in corpus {
        out.push_str(&serde_json::to_string(inst).expect("instance serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| SorebError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Stage1,
    Stage2,
}

impl StageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Stage1 => "stage1",
            StageKind::Stage2 => "stage2",
        }
    }
}

/// One row of `metrics.csv`. Reward columns are empty in stage 1 and for
/// unparsable stage-2 samples. `mean_reward` and `mean_text_loss` are exact
/// corpus averages under the policy after the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub stage: StageKind,
    pub epoch: usize,
    pub context: String,
    pub reward: Option<f64>,
    pub baseline: Option<f64>,
    pub advantage: Option<f64>,
    pub rl_loss: f64,
    pub text_loss: f64,
    pub combined_loss: f64,
    pub lr: f64,
    pub mean_reward: f64,
    pub mean_text_loss: f64,
}

/// Losses and baseline movement of a single stage-2 update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Step {
    pub reward: Option<f64>,
    pub baseline: Option<f64>,
    pub advantage: Option<f64>,
    pub rl_loss: f64,
    pub text_loss: f64,
    pub combined_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: PolicyModel,
    pub metrics: Vec<StepMetrics>,
    pub baseline: Option<BaselineState>,
    /// Expected |sampled - target| per dimension after the last step.
    pub summary: [f64; 6],
}

impl TrainOutcome {
    pub fn steps(&self) -> usize {
        self.metrics.len()
    }

    /// Population variances of (reward, advantage) over stage-2 steps that
    /// produced a reward.
    pub fn reward_advantage_variance(&self) -> Option<(f64, f64)> {
        let pairs: Vec<(f64, f64)> = self
            .metrics
            .iter()
            .filter_map(|m| Some((m.reward?, m.advantage?)))
            .collect();
        if pairs.len() < 2 {
            return None;
        }
        let var = |xs: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = xs.collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
        };
        Some((var(&mut pairs.iter().map(|p| p.0)), var(&mut pairs.iter().map(|p| p.1))))
    }
}

/// Expected reward of the policy's sampling distribution on one instance.
pub fn expected_reward(policy: &PolicyModel, instance: &TrainInstance) -> Result<f64, SorebError> {
    let target = instance.target_points()?;
    let probs = policy.probs(&instance.context);
    let mut total = 0.0;
    for d in 0..6 {
        for c in 0..CLASSES {
            let diff = c as f64 - target[d] as f64;
            total += probs[d][c] * diff * diff;
        }
    }
    Ok(-total / 6.0)
}

/// Expected |sampled - target| per dimension, averaged over the corpus.
pub fn expected_abs_deviation(policy: &PolicyModel, corpus: &[TrainInstance]) -> Result<[f64; 6], SorebError> {
    if corpus.is_empty() {
        return Err(SorebError::EmptyCorpus);
    }
    let mut sums = [0.0; 6];
    for inst in corpus {
        let target = inst.target_points()?;
        let probs = policy.probs(&inst.context);
        for d in 0..6 {
            for c in 0..CLASSES {
                sums[d] += probs[d][c] * (c as f64 - target[d] as f64).abs();
            }
        }
    }
    Ok(sums.map(|s| s / corpus.len() as f64))
}

/// Cached per-instance expected reward and text loss; a step only touches
/// the rows of one context, so only its instances are refreshed.
struct CorpusTracker {
    by_context: BTreeMap<String, Vec<usize>>,
    reward: Vec<f64>,
    text: Vec<f64>,
}

impl CorpusTracker {
    fn new(policy: &PolicyModel, corpus: &[TrainInstance]) -> Result<Self, SorebError> {
        let mut t = CorpusTracker {
            by_context: BTreeMap::new(),
            reward: vec![0.0; corpus.len()],
            text: vec![0.0; corpus.len()],
        };
        for (i, inst) in corpus.iter().enumerate() {
            t.by_context.entry(inst.context.clone()).or_default().push(i);
        }
        let contexts: Vec<String> = t.by_context.keys().cloned().collect();
        for ctx in contexts {
            t.refresh(policy, corpus, &ctx)?;
        }
        Ok(t)
    }

    fn refresh(&mut self, policy: &PolicyModel, corpus: &[TrainInstance], context: &str) -> Result<(), SorebError> {
        for &i in &self.by_context[context] {
            self.reward[i] = expected_reward(policy, &corpus[i])?;
            self.text[i] = text_loss(policy, &corpus[i])?.0;
        }
        Ok(())
    }

    fn means(&self) -> (f64, f64) {
        let n = self.reward.len() as f64;
        (self.reward.iter().sum::<f64>() / n, self.text.iter().sum::<f64>() / n)
    }
}

fn check_corpus(corpus: &[TrainInstance], config: &TrainConfig) -> Result<(), SorebError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(SorebError::EmptyCorpus);
    }
    for (i, inst) in corpus.iter().enumerate() {
        inst.validate(i)?;
    }
    Ok(())
}

fn scaled(grad: &LogitRow, weight: f64) -> LogitRow {
    grad.map(|slot| slot.map(|g| weight * g))
}

fn diverged(stage: StageKind, step: usize, detail: String) -> SorebError {
    SorebError::Divergence {
        stage: stage.as_str(),
        step,
        detail,
    }
}

fn guard_step(stage: StageKind, step: usize, policy: &PolicyModel, context: &str, loss: f64) -> Result<(), SorebError> {
    if !loss.is_finite() {
        return Err(diverged(stage, step, format!("loss {loss} on {context}")));
    }
    let finite = policy
        .row(context)
        .is_none_or(|row| row.iter().flatten().all(|v| v.is_finite()));
    if !finite {
        return Err(diverged(stage, step, format!("non-finite logits for {context}")));
    }
    Ok(())
}

/// Text-loss descent from `initial`, `lambda_text`-weighted. Stage 1 is this
/// with an empty starting policy.
pub fn train_text_only(
    corpus: &[TrainInstance],
    config: &TrainConfig,
    initial: PolicyModel,
    stage: StageKind,
) -> Result<TrainOutcome, SorebError> {
    check_corpus(corpus, config)?;
    let mut policy = initial;
    let mut tracker = CorpusTracker::new(&policy, corpus)?;
    let total = corpus.len() * config.epochs_per_stage;
    let mut metrics = Vec::with_capacity(total);
    for epoch in 0..config.epochs_per_stage {
        for inst in corpus {
            let step = metrics.len();
            let lr = learning_rate(step, total, config.learning_rate, config.warmup_ratio);
            let (loss, grad) = text_loss(&policy, inst)?;
            let combined = config.lambda_text * loss;
            guard_step(stage, step, &policy, &inst.context, combined)?;
            policy.apply(&inst.context, &scaled(&grad, config.lambda_text), lr);
            guard_step(stage, step, &policy, &inst.context, 0.0)?;
            tracker.refresh(&policy, corpus, &inst.context)?;
            let (mean_reward, mean_text_loss) = tracker.means();
            metrics.push(StepMetrics {
                step,
                stage,
                epoch,
                context: inst.context.clone(),
                reward: None,
                baseline: None,
                advantage: None,
                rl_loss: 0.0,
                text_loss: loss,
                combined_loss: combined,
                lr,
                mean_reward,
                mean_text_loss,
            });
        }
    }
    Ok(TrainOutcome {
        summary: expected_abs_deviation(&policy, corpus)?,
        policy,
        metrics,
        baseline: None,
    })
}

pub fn train_stage1(corpus: &[TrainInstance], config: &TrainConfig) -> Result<TrainOutcome, SorebError> {
    train_text_only(corpus, config, PolicyModel::new(), StageKind::Stage1)
}

/// Applies one combined update for a sample already drawn from `policy`.
/// Samples that parse to no score only receive the text term.
pub fn stage2_update(
    policy: &mut PolicyModel,
    baseline: &mut BaselineState,
    instance: &TrainInstance,
    sample: &SampledEvaluation,
    config: &TrainConfig,
    lr: f64,
) -> Result<Stage2Step, SorebError> {
    let parsed = parse_scores(&sample.text).scores;
    let (text, text_grad) = text_loss(policy, instance)?;
    let mut grad = scaled(&text_grad, config.lambda_text);
    let mut out = Stage2Step {
        reward: None,
        baseline: None,
        advantage: None,
        rl_loss: 0.0,
        text_loss: text,
        combined_loss: config.lambda_text * text,
    };
    if let Some(r) = reward(&parsed, &instance.target_scores)? {
        let adv = baseline.update(r)?;
        let (rl, rl_grad) = rl_loss(policy, sample, adv, config.slot_mask_policy)?;
        for d in 0..6 {
            for c in 0..CLASSES {
                grad[d][c] += config.lambda_rl * rl_grad[d][c];
            }
        }
        out.reward = Some(r);
        out.baseline = Some(baseline.b);
        out.advantage = Some(adv);
        out.rl_loss = rl;
        out.combined_loss += config.lambda_rl * rl;
    }
    policy.apply(&instance.context, &grad, lr);
    Ok(out)
}

/// Fraction of distinct corpus contexts whose sampled text parses to at
/// least one score.
fn parsable_fraction(policy: &PolicyModel, corpus: &[TrainInstance], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeMap::new();
    for inst in corpus {
        seen.entry(inst.context.as_str()).or_insert_with(|| {
            let s = sample_evaluation(policy, &inst.context, &mut rng);
            parse_scores(&s.text).scores.valid_count() > 0
        });
    }
    seen.values().filter(|ok| **ok).count() as f64 / seen.len() as f64
}

pub fn train_stage2(
    corpus: &[TrainInstance],
    config: &TrainConfig,
    initial: PolicyModel,
) -> Result<TrainOutcome, SorebError> {
    check_corpus(corpus, config)?;
    let parsable = parsable_fraction(&initial, corpus, config.seed ^ 0x5eed);
    if parsable < MIN_PARSABLE {
        return Err(SorebError::Precondition(format!(
            "initial policy parses on {:.0}% of contexts, need {:.0}%",
            parsable * 100.0,
            MIN_PARSABLE * 100.0
        )));
    }
    let mut policy = initial;
    let mut baseline = BaselineState::new(config.beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tracker = CorpusTracker::new(&policy, corpus)?;
    let total = corpus.len() * config.epochs_per_stage;
    let mut metrics = Vec::with_capacity(total);
    for epoch in 0..config.epochs_per_stage {
        for inst in corpus {
            let step = metrics.len();
            let lr = learning_rate(step, total, config.learning_rate, config.warmup_ratio);
            let sample = sample_evaluation(&policy, &inst.context, &mut rng);
            let out = stage2_update(&mut policy, &mut baseline, inst, &sample, config, lr)?;
            guard_step(StageKind::Stage2, step, &policy, &inst.context, out.combined_loss)?;
            tracker.refresh(&policy, corpus, &inst.context)?;
            let (mean_reward, mean_text_loss) = tracker.means();
            metrics.push(StepMetrics {
                step,
                stage: StageKind::Stage2,
                epoch,
                context: inst.context.clone(),
                reward: out.reward,
                baseline: out.baseline,
                advantage: out.advantage,
                rl_loss: out.rl_loss,
                text_loss: out.text_loss,
                combined_loss: out.combined_loss,
                lr,
                mean_reward,
                mean_text_loss,
            });
        }
    }
    Ok(TrainOutcome {
        summary: expected_abs_deviation(&policy, corpus)?,
        policy,
        metrics,
        baseline: Some(baseline),
    })
}

pub fn write_metrics_csv(path: &Path, metrics: &[StepMetrics]) -> Result<(), SorebError> {
    let io = |e: &dyn std::fmt::Display| SorebError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(&e))?;
    for m in metrics {
        w.serialize(m).map_err(|e| io(&e))?;
    }
    w.flush().map_err(|e| io(&e))
}
