use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dermjudge_core::backends::BackendSet;
use dermjudge_core::bench::CaseFailure;
use serde::Serialize;

use crate::config::Settings;

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// One per command run, written next to the command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub corpus_hash: Option<String>,
    pub backend_kinds: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub settings: Settings,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub exit_status: Option<u8>,
    pub backend_calls: Option<usize>,
    pub failures: Vec<CaseFailure>,
    pub outputs: Vec<String>,
    pub details: serde_json::Map<String, serde_json::Value>,
    #[serde(skip)]
    pub dir: Option<PathBuf>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path: None,
            corpus_hash: None,
            backend_kinds: BTreeMap::new(),
            seed: None,
            settings: Settings::default(),
            started_at: now(),
            finished_at: None,
            exit_status: None,
            backend_calls: None,
            failures: Vec::new(),
            outputs: Vec::new(),
            details: serde_json::Map::new(),
            dir: None,
        }
    }

    pub fn backends(&mut self, set: &BackendSet) {
        for (name, b) in set.iter() {
            self.backend_kinds.insert(name.clone(), b.kind().as_str().to_string());
        }
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        self.details
            .insert(key.to_string(), serde_json::to_value(value).expect("detail serializes"));
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&mut self, exit_status: u8) -> Result<Option<PathBuf>> {
        let Some(dir) = self.dir.clone() else {
            return Ok(None);
        };
        self.finished_at = Some(now());
        self.exit_status = Some(exit_status);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(Some(path))
    }
}
