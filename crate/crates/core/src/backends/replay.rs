use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, FinishReason, ModelClient, ModelRequest, ModelResponse};

const FORMAT: &str = "dermjudge-replay/1";

/// On-disk replay record, one JSON file per fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub format: String,
    pub fingerprint: String,
    pub request: serde_json::Value,
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
}

impl ReplayEntry {
    fn response(&self) -> ModelResponse {
        ModelResponse {
            text: self.text.clone(),
            finish_reason: self.finish_reason.clone(),
            latency_ms: self.latency_ms,
            request_fingerprint: self.fingerprint.clone(),
            attempts: 1,
        }
    }
}

/// Directory of replay entries sharded by the first two fingerprint chars.
#[derive(Debug)]
pub struct ReplayStore {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl ReplayStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let root = root.into();
        if root.exists() && !root.is_dir() {
            return Err(BackendError::Config(format!(
                "replay path {} is not a directory",
                root.display()
            )));
        }
        Ok(ReplayStore {
            root,
            write_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, fingerprint: &str) -> PathBuf {
        let shard = fingerprint.get(..2).unwrap_or("xx");
        self.root.join(shard).join(format!("{fingerprint}.json"))
    }

    pub fn lookup(&self, fingerprint: &str) -> Result<Option<ReplayEntry>, BackendError> {
        let path = self.entry_path(fingerprint);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(BackendError::io(&path, e)),
        };
        let entry: ReplayEntry = serde_json::from_str(&text).map_err(|e| BackendError::io(&path, e))?;
        if entry.format != FORMAT || entry.fingerprint != fingerprint {
            return Err(BackendError::io(&path, "replay entry does not match its file name"));
        }
        Ok(Some(entry))
    }

    /// Stores the response; re-recording identical content is a no-op,
    /// differing content is an integrity error.
    pub fn record(&self, request: &ModelRequest, response: &ModelResponse) -> Result<String, BackendError> {
        let fingerprint = request.fingerprint()?;
        let entry = ReplayEntry {
            format: FORMAT.to_string(),
            fingerprint: fingerprint.clone(),
            request: request.canonical()?,
            text: response.text.clone(),
            finish_reason: response.finish_reason.clone(),
            latency_ms: response.latency_ms,
        };
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(existing) = self.lookup(&fingerprint)? {
            if existing.text == entry.text && existing.finish_reason == entry.finish_reason {
                return Ok(fingerprint);
            }
            return Err(BackendError::Integrity(fingerprint));
        }
        let path = self.entry_path(&fingerprint);
        let dir = path.parent().expect("entry path has a parent");
        fs::create_dir_all(dir).map_err(|e| BackendError::io(dir, e))?;
        let mut body = serde_json::to_string_pretty(&entry).expect("entry serializes");
        body.push('\n');
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, body).map_err(|e| BackendError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| BackendError::io(&path, e))?;
        Ok(fingerprint)
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.root)
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|shard| fs::read_dir(shard.path()).ok())
            .flat_map(|entries| entries.flatten())
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Serves responses from a [`ReplayStore`]. With an upstream it records
/// misses; without one a miss is an error.
pub struct ReplayClient {
    store: ReplayStore,
    upstream: Option<Backend>,
}

impl ReplayClient {
    pub fn new(store: ReplayStore, upstream: Option<Backend>) -> Self {
        ReplayClient { store, upstream }
    }
}

impl ModelClient for ReplayClient {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let fingerprint = request.fingerprint()?;
        if let Some(entry) = self.store.lookup(&fingerprint)? {
            return Ok(entry.response());
        }
        let upstream = self
            .upstream
            .as_ref()
            .ok_or_else(|| BackendError::CacheMiss(fingerprint.clone()))?;
        let response = upstream.complete(request)?;
        self.store.record(request, &response)?;
        Ok(ModelResponse {
            request_fingerprint: fingerprint,
            ..response
        })
    }
}
