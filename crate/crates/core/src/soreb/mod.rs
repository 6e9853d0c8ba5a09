//! Two-stage training of a toy evaluation policy: cross-entropy on the
//! canonical evaluation text, then score-oriented REINFORCE with an EMA
//! baseline mixed with the text loss.

mod config;
mod objective;
mod policy;
mod sampling;
mod schedule;
mod synthetic;
mod train;

use thiserror::Error;

pub use config::{LoraConfig, SlotMaskPolicy, TrainConfig};
pub use objective::{reward, rl_loss, rl_loss_row, text_loss, text_loss_row, BaselineState, MAX_SQUARED_ERROR};
pub use policy::{log_softmax, softmax, Checkpoint, LogitRow, PolicyModel, CLASSES};
pub use sampling::{sample_evaluation, sample_scores, SampledEvaluation};
pub use schedule::learning_rate;
pub use synthetic::{context_key, synthetic_corpus, SyntheticSpec};
pub use train::{
    expected_abs_deviation, expected_reward, load_corpus, stage2_update, train_stage1, train_stage2, train_text_only,
    write_corpus, write_metrics_csv, Stage2Step, StageKind, StepMetrics, TrainInstance, TrainOutcome,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SorebError {
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{stage} diverged at step {step}: {detail}")]
    Divergence {
        stage: &'static str,
        step: usize,
        detail: String,
    },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("instance {index}: {reason}")]
    InvalidInstance { index: usize, reason: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}
