//! Run configuration: one TOML file with backends, prompt wording and
//! training hyperparameters. Command-line flags override file values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dermjudge_core::backends::{BackendConfig, BackendSet};
use dermjudge_core::soreb::TrainConfig;
use dermjudge_core::textproto::{JudgeVariant, PromptRegistry};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub prompt_variant: Option<String>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendConfig>,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub train: toml::Table,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub caption_backend: Option<String>,
    pub reasoning_backend: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub models: Option<Vec<String>>,
    pub judge: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedConfig {
    pub path: Option<PathBuf>,
    /// Relative paths in the file resolve against its directory.
    pub base_dir: PathBuf,
    pub file: FileConfig,
}

impl LoadedConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(LoadedConfig {
                base_dir: PathBuf::from("."),
                ..LoadedConfig::default()
            });
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file: FileConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        for (name, backend) in &file.backends {
            backend
                .validate()
                .with_context(|| format!("backend {name:?} in {}", path.display()))?;
        }
        Ok(LoadedConfig {
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            path: Some(path.to_path_buf()),
            file,
        })
    }

    pub fn path_string(&self) -> Option<String> {
        self.path.as_ref().map(|p| p.display().to_string())
    }

    pub fn backends(&self, names: &[&str]) -> Result<BackendSet> {
        for name in names {
            if !self.file.backends.contains_key(*name) {
                bail!("backend {name:?} is not defined in the config");
            }
        }
        Ok(BackendSet::build_selected(&self.file.backends, names, &self.base_dir)?)
    }

    pub fn registry(&self, settings: &mut Settings, flag: Option<String>) -> Result<PromptRegistry> {
        let name = settings.pick(
            "prompt_variant",
            flag,
            self.file.prompt_variant.clone(),
            JudgeVariant::default().as_str().to_string(),
        );
        let variant: JudgeVariant = name.parse()?;
        Ok(PromptRegistry::new(variant))
    }

    /// File `[train]` values over defaults; the sources of individual keys
    /// are recorded in `settings`.
    pub fn train_config(&self, settings: &mut Settings) -> Result<TrainConfig> {
        let mut table = self.file.train.clone();
        if !table.contains_key("seed") {
            if let Some(seed) = self.file.seed {
                table.insert("seed".into(), toml::Value::Integer(seed as i64));
            }
        }
        let config: TrainConfig = table.clone().try_into().context("parsing [train] section")?;
        let as_json = serde_json::to_value(config)?;
        if let serde_json::Value::Object(map) = as_json {
            for (key, value) in map {
                let source = if table.contains_key(&key) {
                    Source::File
                } else {
                    Source::Default
                };
                settings.record(&format!("train.{key}"), value, source);
            }
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Flag,
    File,
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Setting {
    pub value: serde_json::Value,
    pub source: Source,
}

/// Effective settings with where each came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Settings(BTreeMap<String, Setting>);

impl Settings {
    pub fn record(&mut self, key: &str, value: serde_json::Value, source: Source) {
        self.0.insert(key.to_string(), Setting { value, source });
    }

    pub fn pick<T: Serialize>(&mut self, key: &str, flag: Option<T>, file: Option<T>, default: T) -> T {
        let (value, source) = match (flag, file) {
            (Some(v), _) => (v, Source::Flag),
            (None, Some(v)) => (v, Source::File),
            (None, None) => (default, Source::Default),
        };
        self.record(key, serde_json::to_value(&value).expect("setting serializes"), source);
        value
    }

    /// Like `pick` without a default; `None` when neither side sets it.
    pub fn pick_opt<T: Serialize>(&mut self, key: &str, flag: Option<T>, file: Option<T>) -> Option<T> {
        let (value, source) = match (flag, file) {
            (Some(v), _) => (v, Source::Flag),
            (None, Some(v)) => (v, Source::File),
            (None, None) => return None,
        };
        self.record(key, serde_json::to_value(&value).expect("setting serializes"), source);
        Some(value)
    }

    #[cfg(test)]
    pub fn get(&self, key: &str) -> Option<&Setting> {
        self.0.get(key)
    }
}
