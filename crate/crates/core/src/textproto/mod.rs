//! Prompt registry, canonical evaluation format and the score parser.

mod evaluation;
mod parse;
mod prompts;

use thiserror::Error;

pub use evaluation::{render_evaluation, scores_block, EvaluationText, Section, SECTION_SEPARATOR};
pub use parse::{parse_final_diagnosis, parse_scores, ParseResult, ParseStatus};
pub use prompts::{
    export_catalog, parse_catalog, render_prompt, JudgeVariant, PromptRegistry, PromptTemplate, TemplateId,
};

use crate::scores::ScoreError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextError {
    #[error("template {template} needs a value for {{{placeholder}}}")]
    MissingBinding { template: String, placeholder: String },
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("malformed prompt catalog: {0}")]
    Catalog(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
}
