use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendConfig, BackendError, FinishReason, ModelClient, ModelRequest, ModelResponse};

/// One scripted answer. All present matchers must hold; `contains` needles
/// are searched in the concatenated message text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default)]
    pub fingerprint: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub contains: Vec<String>,
    pub text: String,
    #[serde(default)]
    pub finish_reason: FinishReason,
}

impl MockRule {
    fn matches(&self, request: &ModelRequest, fingerprint: &str, prompt: &str) -> bool {
        self.fingerprint.as_deref().is_none_or(|f| f == fingerprint)
            && self.model_id.as_deref().is_none_or(|m| m == request.model_id)
            && self.contains.iter().all(|needle| prompt.contains(needle.as_str()))
    }
}

/// First matching rule wins. Without a match the `default` template is used,
/// with `{model_id}` and `{fingerprint}` substituted; without a default the
/// request fails as a cache miss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default: Option<String>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path).map_err(|e| BackendError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct MockClient {
    script: MockScript,
}

impl MockClient {
    pub fn new(script: MockScript) -> Self {
        MockClient { script }
    }

    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        let script = match &config.script {
            Some(path) => MockScript::load(path)?,
            None => MockScript {
                rules: Vec::new(),
                default: Some("mock response from {model_id} for {fingerprint}".into()),
            },
        };
        Ok(MockClient::new(script))
    }
}

impl ModelClient for MockClient {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let fingerprint = request.fingerprint()?;
        let prompt = request.prompt_text();
        let (text, finish_reason) = match self
            .script
            .rules
            .iter()
            .find(|r| r.matches(request, &fingerprint, &prompt))
        {
            Some(rule) => (rule.text.clone(), rule.finish_reason.clone()),
            None => match &self.script.default {
                Some(t) => (
                    t.replace("{model_id}", &request.model_id)
                        .replace("{fingerprint}", &fingerprint),
                    FinishReason::Stop,
                ),
                None => return Err(BackendError::CacheMiss(fingerprint)),
            },
        };
        Ok(ModelResponse {
            text,
            finish_reason,
            latency_ms: 0,
            request_fingerprint: fingerprint,
            attempts: 1,
        })
    }
}
