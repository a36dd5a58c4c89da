use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    cache_key, canonical_json, Backend, BackendDescriptor, BackendKind, DecodingParams, GenerateRequest,
    GenerationResult, HiddenRequest, HiddenVector, LmError, ScoreRequest, ScoreResult, ServerInfo,
};

/// One recorded exchange. `key` may be omitted in hand-written fixtures; it
/// is recomputed on load and must match when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub endpoint: String,
    pub request: Value,
    pub response: Value,
}

impl FixtureEntry {
    pub fn new<Req: Serialize, Resp: Serialize>(backend_id: &str, endpoint: &str, request: &Req, response: &Resp) -> Self {
        let payload = canonical_json(request);
        Self {
            key: Some(cache_key(backend_id, endpoint, &payload)),
            endpoint: endpoint.to_string(),
            request: serde_json::from_slice(&payload).expect("canonical json parses"),
            response: serde_json::to_value(response).expect("response serializes"),
        }
    }

    pub fn write_line(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(self).map_err(std::io::Error::other)?;
        line.push(b'\n');
        out.write_all(&line)
    }
}

/// Parse a JSONL fixture into `key → entry`, checking recorded keys.
pub(crate) fn read_entries(text: &str, backend_id: &str) -> Result<HashMap<String, FixtureEntry>, LmError> {
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: FixtureEntry =
            serde_json::from_str(line).map_err(|e| LmError::Fixture(format!("line {}: {e}", i + 1)))?;
        let key = cache_key(backend_id, &entry.endpoint, &canonical_json(&entry.request));
        if let Some(recorded) = &entry.key {
            if *recorded != key {
                return Err(LmError::Fixture(format!(
                    "line {}: recorded key {recorded} does not match request digest {key}",
                    i + 1
                )));
            }
        }
        entry.key = Some(key.clone());
        map.insert(key, entry);
    }
    Ok(map)
}

/// Serves recorded responses keyed by request digest.
pub struct ReplayBackend {
    descriptor: BackendDescriptor,
    entries: HashMap<String, FixtureEntry>,
}

impl ReplayBackend {
    pub fn open(path: &Path, backend_id: &str) -> Result<Self, LmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LmError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text, backend_id)
    }

    pub fn from_jsonl(text: &str, backend_id: &str) -> Result<Self, LmError> {
        let entries = read_entries(text, backend_id)?;
        let mut backend = Self {
            descriptor: BackendDescriptor {
                id: backend_id.to_string(),
                kind: BackendKind::Replay,
                endpoint: None,
                hidden_size: 1,
                max_context: usize::MAX,
            },
            entries,
        };
        if let Ok(info) = backend.info() {
            backend.descriptor.hidden_size = info.hidden_size;
            backend.descriptor.max_context = info.max_context;
        } else if let Some(len) = backend
            .entries
            .values()
            .find(|e| e.endpoint == "hidden")
            .and_then(|e| e.response.get("vector").and_then(Value::as_array).map(Vec::len))
        {
            backend.descriptor.hidden_size = len;
        }
        Ok(backend)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup<Req: Serialize, T: serde::de::DeserializeOwned>(&self, endpoint: &str, req: &Req) -> Result<T, LmError> {
        let key = cache_key(&self.descriptor.id, endpoint, &canonical_json(req));
        let entry = self
            .entries
            .get(&key)
            .ok_or_else(|| LmError::UnsupportedByBackend(format!("no recorded {endpoint} response for key {key}")))?;
        if let Some(err) = entry.response.get("error").and_then(Value::as_str) {
            return Err(LmError::protocol(500, err));
        }
        serde_json::from_value(entry.response.clone()).map_err(|e| LmError::Fixture(format!("{endpoint} {key}: {e}")))
    }
}

impl Backend for ReplayBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn info(&self) -> Result<ServerInfo, LmError> {
        self.lookup("info", &serde_json::json!({}))
    }

    fn generate(&self, prompt: &str, params: &DecodingParams) -> Result<GenerationResult, LmError> {
        self.lookup("generate", &GenerateRequest::new(prompt, params))
    }

    fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<ScoreResult, LmError> {
        self.lookup("score", &ScoreRequest { prompt: prompt.into(), continuation: continuation.into() })
    }

    fn final_hidden(&self, prompt: &str) -> Result<HiddenVector, LmError> {
        self.lookup("hidden", &HiddenRequest { prompt: prompt.into() })
    }
}
