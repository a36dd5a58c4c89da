use serde::Serialize;

use super::{Backend, DecodingParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub backend_id: String,
    pub checks: Vec<ConformanceCheck>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Largest allowed gap between a generated token path's summed logprobs and
/// the score of the same text.
pub const SCORE_TOLERANCE: f64 = 1e-4;

/// Exercise every endpoint of `backend` with `prompt` and report schema,
/// determinism, scoring consistency and hidden-size checks.
pub fn verify_backend(backend: &dyn Backend, prompt: &str) -> ConformanceReport {
    let mut checks = Vec::new();
    let mut push = |name, result: Result<String, String>| {
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        checks.push(ConformanceCheck { name, passed, detail });
    };

    let info = backend.info();
    let hidden_size = info.as_ref().map(|i| i.hidden_size).unwrap_or(0);
    push(
        "info",
        info.as_ref()
            .map(|i| format!("model {} hidden_size {} max_context {}", i.model_id, i.hidden_size, i.max_context))
            .map_err(|e| e.to_string()),
    );

    let params = DecodingParams { max_tokens: 8, ..DecodingParams::default() };
    let first = backend.generate(prompt, &params);
    push(
        "generate_schema",
        match &first {
            Ok(g) => g.validate().map(|_| format!("{} tokens, finish {:?}", g.tokens.len(), g.finish)),
            Err(e) => Err(e.to_string()),
        },
    );

    let second = backend.generate(prompt, &params);
    push(
        "greedy_determinism",
        match (&first, &second) {
            (Ok(a), Ok(b)) if a == b => Ok("two greedy calls agree".into()),
            (Ok(a), Ok(b)) => Err(format!("{:?} vs {:?}", a.text, b.text)),
            (_, Err(e)) | (Err(e), _) => Err(e.to_string()),
        },
    );

    let score = backend.score_continuation(prompt, " conformance");
    push(
        "score_schema",
        match &score {
            Ok(s) => s.validate().map(|_| format!("total {}", s.total)),
            Err(e) => Err(e.to_string()),
        },
    );

    push(
        "score_generate_consistency",
        match &first {
            Ok(g) if g.text.is_empty() => Ok("empty generation; nothing to compare".into()),
            Ok(g) => backend.score_continuation(prompt, &g.text).map_err(|e| e.to_string()).and_then(|s| {
                let generated: f64 = g.tokens.iter().map(|t| t.logprob).sum();
                let gap = (generated - s.total).abs();
                if gap <= SCORE_TOLERANCE {
                    Ok(format!("gap {gap:.2e}"))
                } else {
                    Err(format!("generated path sums to {generated}, score says {} (gap {gap:.2e})", s.total))
                }
            }),
            Err(e) => Err(e.to_string()),
        },
    );

    push(
        "hidden_size",
        backend
            .final_hidden(prompt)
            .map_err(|e| e.to_string())
            .and_then(|h| h.validate(hidden_size).map(|_| format!("length {}", h.values.len()))),
    );

    ConformanceReport { backend_id: backend.descriptor().id.clone(), checks }
}
