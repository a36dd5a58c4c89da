use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    Backend, BackendDescriptor, BackendKind, DecodingParams, GenerateRequest, GenerationResult, HiddenRequest,
    HiddenVector, LmError, ScoreRequest, ScoreResult, ServerInfo,
};

/// Client for a model server speaking the JSON protocol.
pub struct HttpBackend {
    agent: ureq::Agent,
    base: String,
    descriptor: BackendDescriptor,
}

impl HttpBackend {
    /// Connect and read `/v1/info` to learn the hidden size and context
    /// length.
    pub fn connect(url: &str, timeout: Duration) -> Result<Self, LmError> {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build();
        let agent = ureq::Agent::new_with_config(config);
        let base = url.trim_end_matches('/').to_string();
        let mut backend = Self {
            agent,
            base: base.clone(),
            descriptor: BackendDescriptor {
                id: String::new(),
                kind: BackendKind::Http,
                endpoint: Some(base),
                hidden_size: 0,
                max_context: 0,
            },
        };
        let info = backend.info()?;
        backend.descriptor.id = info.model_id;
        backend.descriptor.hidden_size = info.hidden_size;
        backend.descriptor.max_context = info.max_context;
        Ok(backend)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn finish<T: DeserializeOwned>(&self, result: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<T, LmError> {
        let mut resp = result.map_err(|e| match e {
            ureq::Error::Io(_)
            | ureq::Error::Timeout(_)
            | ureq::Error::HostNotFound
            | ureq::Error::ConnectionFailed => LmError::BackendUnreachable(format!("{}: {e}", self.base)),
            other => LmError::protocol(0, other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LmError::BackendUnreachable(format!("reading response: {e}")))?;
        if !(200..300).contains(&status) {
            let message = serde_json::from_str::<serde_json::Value>(&body)
                .ok()
                .and_then(|v| v.get("error").and_then(|e| e.as_str()).map(str::to_string))
                .unwrap_or(body);
            return Err(if status == 422 { LmError::ContextOverflow(message) } else { LmError::protocol(status, message) });
        }
        serde_json::from_str(&body).map_err(|e| LmError::protocol(status, format!("response does not match schema: {e}")))
    }

    fn post<Req: Serialize, T: DeserializeOwned>(&self, path: &str, req: &Req) -> Result<T, LmError> {
        self.finish(self.agent.post(&self.url(path)).send_json(req))
    }
}

impl Backend for HttpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn info(&self) -> Result<ServerInfo, LmError> {
        let info: ServerInfo = self.finish(self.agent.get(&self.url("/v1/info")).call())?;
        if info.hidden_size == 0 || info.max_context == 0 {
            return Err(LmError::protocol(200, "info reports a zero hidden_size or max_context"));
        }
        Ok(info)
    }

    fn generate(&self, prompt: &str, params: &DecodingParams) -> Result<GenerationResult, LmError> {
        params.validate()?;
        let out: GenerationResult = self.post("/v1/generate", &GenerateRequest::new(prompt, params))?;
        out.validate().map_err(|e| LmError::protocol(200, e))?;
        Ok(out)
    }

    fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<ScoreResult, LmError> {
        if continuation.is_empty() {
            return Err(LmError::InvalidRequest("continuation must be nonempty".into()));
        }
        let req = ScoreRequest { prompt: prompt.into(), continuation: continuation.into() };
        let out: ScoreResult = self.post("/v1/score", &req)?;
        out.validate().map_err(|e| LmError::protocol(200, e))?;
        Ok(out)
    }

    fn final_hidden(&self, prompt: &str) -> Result<HiddenVector, LmError> {
        if prompt.is_empty() {
            return Err(LmError::InvalidRequest("prompt must be nonempty".into()));
        }
        let out: HiddenVector = self.post("/v1/hidden", &HiddenRequest { prompt: prompt.into() })?;
        out.validate(self.descriptor.hidden_size).map_err(|e| LmError::protocol(200, e))?;
        Ok(out)
    }
}
