//! Backend wire protocol and the backends that speak it.
//!
//! Every backend answers four calls: `info`, `generate`, `score` and
//! `hidden`. [`HttpBackend`] talks to a model server, [`ReplayBackend`]
//! serves recorded responses, [`OracleBackend`] is a synthetic stand-in with
//! known behaviour, and [`CachedBackend`] wraps any of them with an
//! append-only response store.
//!
//! Requests are identified by [`cache_key`]: the SHA-256 of the backend id,
//! the endpoint name and the canonical (sorted-key, compact) JSON of the
//! request body.

mod cache;
mod conformance;
mod http;
mod oracle;
mod replay;
pub mod server;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::CachedBackend;
pub use conformance::{verify_backend, ConformanceCheck, ConformanceReport};
pub use http::HttpBackend;
pub use oracle::{OracleBackend, OracleSpec};
pub use replay::{FixtureEntry, ReplayBackend};

pub const BOS_SENTINEL: &str = "<BOS>";

#[derive(Debug, Error)]
pub enum LmError {
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("protocol error (status {status}): {body}")]
    ProtocolError { status: u16, body: String },
    #[error("context overflow: {0}")]
    ContextOverflow(String),
    #[error("unsupported by backend: {0}")]
    UnsupportedByBackend(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LmError {
    pub(crate) fn protocol(status: u16, body: impl Into<String>) -> Self {
        LmError::ProtocolError { status, body: body.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingParams {
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub seed: u64,
    pub stop: Vec<String>,
    pub mode: DecodeMode,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self { max_tokens: 28, temperature: 1.0, top_p: 1.0, repetition_penalty: 1.0, seed: 0, stop: Vec::new(), mode: DecodeMode::Greedy }
    }
}

impl DecodingParams {
    /// Greedy decoding that stops at the first newline.
    pub fn probe() -> Self {
        Self { stop: vec!["\n".into()], ..Self::default() }
    }

    pub fn sampling(seed: u64) -> Self {
        Self { mode: DecodeMode::Sample, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::InvalidRequest(m.to_string()));
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if !(self.temperature >= 0.0) {
            return bad("temperature must be >= 0");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if !(self.repetition_penalty > 0.0) {
            return bad("repetition_penalty must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finish {
    Stop,
    Length,
}

/// Generated text. When a stop sequence fires, the text ends with that
/// sequence and `finish` is `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub tokens: Vec<Token>,
    pub finish: Finish,
}

impl GenerationResult {
    pub fn validate(&self) -> Result<(), String> {
        let joined: String = self.tokens.iter().map(|t| t.text.as_str()).collect();
        if joined != self.text {
            return Err("token texts do not concatenate to text".into());
        }
        if let Some(t) = self.tokens.iter().find(|t| !(t.logprob <= 0.0)) {
            return Err(format!("token {:?} has logprob {} > 0", t.text, t.logprob));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub total: f64,
    pub per_token: Vec<f64>,
}

impl ScoreResult {
    pub fn validate(&self) -> Result<(), String> {
        let sum: f64 = self.per_token.iter().sum();
        if !self.total.is_finite() || (sum - self.total).abs() > 1e-6 {
            return Err(format!("total {} differs from per-token sum {}", self.total, sum));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenVector {
    #[serde(rename = "vector")]
    pub values: Vec<f64>,
    #[serde(default = "default_layer")]
    pub layer: String,
    #[serde(default = "default_position")]
    pub position: String,
}

fn default_layer() -> String {
    "final".into()
}

fn default_position() -> String {
    "last".into()
}

impl HiddenVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, layer: default_layer(), position: default_position() }
    }

    pub fn validate(&self, hidden_size: usize) -> Result<(), String> {
        if self.values.len() != hidden_size {
            return Err(format!("vector has length {}, declared hidden size is {hidden_size}", self.values.len()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err("vector has non-finite components".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerInfo {
    pub model_id: String,
    pub hidden_size: usize,
    pub max_context: usize,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Replay,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub id: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub hidden_size: usize,
    pub max_context: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub seed: u64,
    pub stop: Vec<String>,
    pub mode: DecodeMode,
}

impl GenerateRequest {
    /// Greedy requests carry neutral sampling fields so that equivalent
    /// requests share one cache key.
    pub fn new(prompt: &str, params: &DecodingParams) -> Self {
        let greedy = params.mode == DecodeMode::Greedy;
        Self {
            prompt: prompt.to_string(),
            max_tokens: params.max_tokens,
            temperature: if greedy { 1.0 } else { params.temperature },
            top_p: if greedy { 1.0 } else { params.top_p },
            repetition_penalty: params.repetition_penalty,
            seed: if greedy { 0 } else { params.seed },
            stop: params.stop.clone(),
            mode: params.mode,
        }
    }

    pub fn params(&self) -> DecodingParams {
        DecodingParams {
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            top_p: self.top_p,
            repetition_penalty: self.repetition_penalty,
            seed: self.seed,
            stop: self.stop.clone(),
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub continuation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenRequest {
    pub prompt: String,
}

/// A model behind the wire protocol. Implementations must be usable from
/// many threads at once.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;
    fn info(&self) -> Result<ServerInfo, LmError>;
    fn generate(&self, prompt: &str, params: &DecodingParams) -> Result<GenerationResult, LmError>;
    fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<ScoreResult, LmError>;
    fn final_hidden(&self, prompt: &str) -> Result<HiddenVector, LmError>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn info(&self) -> Result<ServerInfo, LmError> {
        (**self).info()
    }
    fn generate(&self, prompt: &str, params: &DecodingParams) -> Result<GenerationResult, LmError> {
        (**self).generate(prompt, params)
    }
    fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<ScoreResult, LmError> {
        (**self).score_continuation(prompt, continuation)
    }
    fn final_hidden(&self, prompt: &str) -> Result<HiddenVector, LmError> {
        (**self).final_hidden(prompt)
    }
}

/// Sorted-key compact JSON.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("serializable request");
    serde_json::to_vec(&v).expect("json value serializes")
}

pub fn cache_key(backend_id: &str, endpoint: &str, payload: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(backend_id.as_bytes());
    h.update([0u8]);
    h.update(endpoint.as_bytes());
    h.update([0u8]);
    h.update(payload);
    hex::encode(h.finalize())
}

/// Cut `text` just after the earliest occurrence of any stop sequence.
pub fn apply_stop(text: &str, stop: &[String]) -> Option<usize> {
    stop.iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()).map(|i| i + s.len()))
        .min()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let p = DecodingParams::default();
        assert_eq!((p.max_tokens, p.temperature, p.top_p, p.repetition_penalty), (28, 1.0, 1.0, 1.0));
        assert_eq!(p.mode, DecodeMode::Greedy);
        assert!(p.validate().is_ok());
        assert!(DecodingParams { top_p: 0.0, ..p.clone() }.validate().is_err());
        assert!(DecodingParams { max_tokens: 0, ..p }.validate().is_err());
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let r = ScoreRequest { prompt: "p".into(), continuation: "c".into() };
        assert_eq!(canonical_json(&r), br#"{"continuation":"c","prompt":"p"}"#);
    }

    #[test]
    fn cache_keys() {
        let a = GenerateRequest::new("x ⇒", &DecodingParams::sampling(1));
        let b = GenerateRequest::new("x ⇒", &DecodingParams::sampling(2));
        let ka = cache_key("m", "generate", &canonical_json(&a));
        assert_eq!(ka, cache_key("m", "generate", &canonical_json(&a)));
        assert_ne!(ka, cache_key("m", "generate", &canonical_json(&b)));
        assert_ne!(ka, cache_key("n", "generate", &canonical_json(&a)));
        let g1 = GenerateRequest::new("x", &DecodingParams { seed: 1, ..DecodingParams::probe() });
        let g2 = GenerateRequest::new("x", &DecodingParams { seed: 2, ..DecodingParams::probe() });
        assert_eq!(g1, g2);
    }

    #[test]
    fn golden_cache_key() {
        let req = GenerateRequest::new("a small very thin pancake ⇒", &DecodingParams::probe());
        assert_eq!(
            String::from_utf8(canonical_json(&req)).unwrap(),
            r#"{"max_tokens":28,"mode":"greedy","prompt":"a small very thin pancake ⇒","repetition_penalty":1.0,"seed":0,"stop":["\n"],"temperature":1.0,"top_p":1.0}"#
        );
        assert_eq!(cache_key("fixture-model", "generate", &canonical_json(&req)), GOLDEN_KEY);
    }

    const GOLDEN_KEY: &str = "e7492744666851549b2b35f2b304dee78781b8e73f023fedae53964fa65db8aa";

    #[test]
    fn stop_cuts_after_sequence() {
        assert_eq!(apply_stop("crepe\nnext", &["\n".into()]), Some(6));
        assert_eq!(apply_stop("crepe", &["\n".into()]), None);
        assert_eq!(apply_stop("ab.cd\n", &["\n".into(), ".".into()]), Some(3));
    }

    #[test]
    fn generation_validation() {
        let ok = GenerationResult {
            text: "crepe\n".into(),
            tokens: vec![Token { text: "crepe".into(), logprob: -0.5 }, Token { text: "\n".into(), logprob: 0.0 }],
            finish: Finish::Stop,
        };
        assert!(ok.validate().is_ok());
        let mut bad = ok.clone();
        bad.tokens[0].logprob = 0.1;
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.text.push('x');
        assert!(bad.validate().is_err());
    }
}
