use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::replay::read_entries;
use super::{
    Backend, BackendDescriptor, DecodingParams, FixtureEntry, GenerateRequest, GenerationResult, HiddenRequest,
    HiddenVector, LmError, ScoreRequest, ScoreResult, ServerInfo,
};

/// Environment variable that overrides the cache file location.
pub const CACHE_DIR_ENV: &str = "CONCEPTPROBE_CACHE_DIR";

struct Store {
    entries: HashMap<String, FixtureEntry>,
    file: Option<File>,
}

/// Append-only response cache in front of another backend.
///
/// The on-disk format is the replay fixture format, so a cache file can be
/// served directly by [`super::ReplayBackend`].
pub struct CachedBackend<B> {
    inner: B,
    store: Mutex<Store>,
    path: Option<PathBuf>,
    calls: AtomicUsize,
    hits: AtomicUsize,
}

impl<B: Backend> CachedBackend<B> {
    pub fn in_memory(inner: B) -> Self {
        Self::with_store(inner, Store { entries: HashMap::new(), file: None }, None)
    }

    /// Open (or create) the JSONL cache at `path`.
    pub fn open(inner: B, path: &Path) -> Result<Self, LmError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let entries = if path.exists() {
            read_entries(&std::fs::read_to_string(path)?, &inner.descriptor().id)?
        } else {
            HashMap::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::with_store(inner, Store { entries, file: Some(file) }, Some(path.to_path_buf())))
    }

    /// Cache file for `backend_id` under `default_dir`, or under the
    /// directory named by [`CACHE_DIR_ENV`] when set.
    pub fn default_path(default_dir: &Path, backend_id: &str) -> PathBuf {
        let dir = std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| default_dir.to_path_buf());
        let safe: String = backend_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect();
        dir.join(format!("{safe}.jsonl"))
    }

    fn with_store(inner: B, store: Store, path: Option<PathBuf>) -> Self {
        Self { inner, store: Mutex::new(store), path, calls: AtomicUsize::new(0), hits: AtomicUsize::new(0) }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Requests forwarded to the wrapped backend.
    pub fn backend_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.store.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn through<Req, T>(&self, endpoint: &str, req: &Req, call: impl FnOnce() -> Result<T, LmError>) -> Result<T, LmError>
    where
        Req: Serialize,
        T: Serialize + DeserializeOwned,
    {
        let entry_key = super::cache_key(&self.inner.descriptor().id, endpoint, &super::canonical_json(req));
        let cached = self.store.lock().expect("cache lock").entries.get(&entry_key).map(|e| e.response.clone());
        if let Some(resp) = cached {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return serde_json::from_value(resp).map_err(|e| LmError::Fixture(format!("cache entry {entry_key}: {e}")));
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let out = call()?;
        let entry = FixtureEntry::new(&self.inner.descriptor().id, endpoint, req, &out);
        let stored = serde_json::from_value(entry.response.clone()).map_err(|e| LmError::Fixture(e.to_string()))?;
        let mut store = self.store.lock().expect("cache lock");
        if !store.entries.contains_key(&entry_key) {
            if let Some(f) = store.file.as_mut() {
                entry.write_line(f)?;
            }
            store.entries.insert(entry_key, entry);
        }
        Ok(stored)
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn info(&self) -> Result<ServerInfo, LmError> {
        self.through("info", &serde_json::json!({}), || self.inner.info())
    }

    fn generate(&self, prompt: &str, params: &DecodingParams) -> Result<GenerationResult, LmError> {
        params.validate()?;
        self.through("generate", &GenerateRequest::new(prompt, params), || self.inner.generate(prompt, params))
    }

    fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<ScoreResult, LmError> {
        let req = ScoreRequest { prompt: prompt.into(), continuation: continuation.into() };
        self.through("score", &req, || self.inner.score_continuation(prompt, continuation))
    }

    fn final_hidden(&self, prompt: &str) -> Result<HiddenVector, LmError> {
        self.through("hidden", &HiddenRequest { prompt: prompt.into() }, || self.inner.final_hidden(prompt))
    }
}
