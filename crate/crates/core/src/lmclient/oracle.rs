use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    apply_stop, Backend, BackendDescriptor, BackendKind, DecodeMode, DecodingParams, Finish, GenerationResult,
    HiddenVector, LmError, ScoreResult, ServerInfo, Token, BOS_SENTINEL,
};
use crate::corpus::ConceptSet;
use crate::promptgen::PromptStyle;
use crate::rng::SeededRng;

/// Behaviour of the synthetic backend.
///
/// The query of a prompt is its last line with the leading `<BOS>`
/// sentinel, the trailing delimiter marker or the natural-language suffix
/// removed. `queries` maps that text to a query id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSpec {
    pub model_id: String,
    pub queries: BTreeMap<String, String>,
    pub answer_map: BTreeMap<String, String>,
    pub correct_prob: f64,
    pub categories: BTreeMap<String, String>,
    pub centroids: BTreeMap<String, Vec<f64>>,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Log-probability assigned to every whitespace token.
    pub token_logprob: f64,
    /// Words emitted when the oracle answers wrongly.
    pub distractors: Vec<String>,
    /// Weighted answers drawn in sample mode, when nonempty.
    pub canned: Vec<(String, f64)>,
    pub style: PromptStyle,
    pub max_context: usize,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            model_id: "oracle".into(),
            queries: BTreeMap::new(),
            answer_map: BTreeMap::new(),
            correct_prob: 1.0,
            categories: BTreeMap::new(),
            centroids: BTreeMap::new(),
            noise_sigma: 0.0,
            seed: 0,
            token_logprob: -1.0,
            distractors: Vec::new(),
            canned: Vec::new(),
            style: PromptStyle::default(),
            max_context: 4096,
        }
    }
}

impl OracleSpec {
    /// An oracle that knows every concept of `set` by description and by
    /// lemma, answers with the lemma, and uses the other lemmas as
    /// distractors.
    pub fn from_concepts(set: &ConceptSet, correct_prob: f64, seed: u64) -> Self {
        let mut spec = Self { correct_prob, seed, ..Self::default() };
        for c in set.iter() {
            spec.queries.insert(c.lemma.clone(), c.id.clone());
            spec.queries.insert(c.description.clone(), c.id.clone());
            spec.answer_map.insert(c.id.clone(), c.lemma.clone());
            if let Some(cat) = &c.category {
                spec.categories.insert(c.id.clone(), cat.clone());
            }
        }
        let mut words: Vec<String> = set.iter().map(|c| c.lemma.clone()).collect();
        words.sort();
        words.dedup();
        spec.distractors = words;
        spec
    }

    pub fn hidden_size(&self) -> usize {
        self.centroids.values().next().map_or(1, Vec::len)
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: String| Err(LmError::InvalidRequest(m));
        if !(0.0..=1.0).contains(&self.correct_prob) {
            return bad(format!("correct_prob {} outside [0, 1]", self.correct_prob));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0".into());
        }
        if !(self.token_logprob <= 0.0) {
            return bad("token_logprob must be <= 0".into());
        }
        let dim = self.hidden_size();
        if self.centroids.values().any(|c| c.len() != dim || c.iter().any(|v| !v.is_finite())) {
            return bad("centroids must share one dimension and be finite".into());
        }
        if self.canned.iter().any(|(_, w)| !(*w >= 0.0)) || (!self.canned.is_empty() && self.canned.iter().all(|(_, w)| *w == 0.0)) {
            return bad("canned answer weights must be non-negative with a positive sum".into());
        }
        Ok(())
    }
}

/// Deterministic synthetic language model.
pub struct OracleBackend {
    spec: OracleSpec,
    descriptor: BackendDescriptor,
}

fn whitespace_tokens(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut pending = String::new();
    for (i, part) in text.split(' ').enumerate() {
        if i > 0 {
            pending.push(' ');
        }
        if part.is_empty() {
            continue;
        }
        out.push(format!("{pending}{part}"));
        pending.clear();
    }
    if !pending.is_empty() {
        match out.last_mut() {
            Some(last) => last.push_str(&pending),
            None => out.push(pending),
        }
    }
    out
}

/// Space-attached word pieces, with every newline as its own token.
fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for segment in text.split_inclusive('\n') {
        let (body, newline) = match segment.strip_suffix('\n') {
            Some(b) => (b, true),
            None => (segment, false),
        };
        out.extend(whitespace_tokens(body));
        if newline {
            out.push("\n".to_string());
        }
    }
    out
}

impl OracleBackend {
    pub fn new(spec: OracleSpec) -> Result<Self, LmError> {
        spec.validate()?;
        let descriptor = BackendDescriptor {
            id: spec.model_id.clone(),
            kind: BackendKind::Oracle,
            endpoint: None,
            hidden_size: spec.hidden_size(),
            max_context: spec.max_context,
        };
        Ok(Self { spec, descriptor })
    }

    pub fn spec(&self) -> &OracleSpec {
        &self.spec
    }

    /// Query id addressed by `prompt`, if the oracle knows it.
    pub fn query_id(&self, prompt: &str) -> Option<&str> {
        let line = prompt.rsplit('\n').next().unwrap_or(prompt);
        let line = line.strip_prefix(BOS_SENTINEL).unwrap_or(line);
        let marker = self.spec.style.query_marker();
        let nl = format!(" {}", self.spec.style.nl_suffix);
        let cue = line.strip_suffix(marker.as_str()).or_else(|| line.strip_suffix(nl.as_str())).unwrap_or(line).trim();
        self.spec
            .queries
            .get(cue)
            .or_else(|| self.spec.queries.get(&cue.to_lowercase()))
            .map(String::as_str)
            .or_else(|| self.spec.answer_map.get_key_value(cue).map(|(k, _)| k.as_str()))
    }

    fn check_context(&self, prompt: &str, extra: usize) -> Result<(), LmError> {
        let n = prompt.split_whitespace().count() + extra;
        if n > self.spec.max_context {
            return Err(LmError::ContextOverflow(format!("{n} tokens exceed max_context {}", self.spec.max_context)));
        }
        Ok(())
    }

    fn answer_word(&self, prompt: &str, params: &DecodingParams) -> String {
        let sample = params.mode == DecodeMode::Sample;
        let label = |what: &str| {
            if sample {
                format!("{what}\0{}\0{prompt}", params.seed)
            } else {
                format!("{what}\0{prompt}")
            }
        };
        if sample && !self.spec.canned.is_empty() {
            let total: f64 = self.spec.canned.iter().map(|(_, w)| w).sum();
            let mut u = SeededRng::derived(self.spec.seed, &label("sample")).next_f64() * total;
            for (answer, w) in &self.spec.canned {
                if u < *w {
                    return answer.clone();
                }
                u -= w;
            }
            return self.spec.canned.iter().rev().find(|(_, w)| *w > 0.0).expect("positive weight").0.clone();
        }
        let target = self.query_id(prompt).and_then(|id| self.spec.answer_map.get(id));
        if let Some(t) = target {
            if SeededRng::derived(self.spec.seed, &label("correct")).next_f64() < self.spec.correct_prob {
                return t.clone();
            }
        }
        let pool: Vec<&String> = self.spec.distractors.iter().filter(|d| Some(*d) != target).collect();
        if pool.is_empty() {
            return "something".into();
        }
        pool[SeededRng::derived(self.spec.seed, &label("distractor")).index(pool.len())].clone()
    }
}

impl Backend for OracleBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn info(&self) -> Result<ServerInfo, LmError> {
        let mut extra = serde_json::Map::new();
        extra.insert("kind".into(), "oracle".into());
        Ok(ServerInfo {
            model_id: self.spec.model_id.clone(),
            hidden_size: self.descriptor.hidden_size,
            max_context: self.spec.max_context,
            extra,
        })
    }

    /// Emits `"{word}\n"`, one token per whitespace-separated piece plus
    /// the newline.
    fn generate(&self, prompt: &str, params: &DecodingParams) -> Result<GenerationResult, LmError> {
        params.validate()?;
        self.check_context(prompt, params.max_tokens as usize)?;
        let word = self.answer_word(prompt, params);
        let lp = self.spec.token_logprob;
        let mut tokens: Vec<Token> =
            oracle_tokens(&format!("{word}\n")).into_iter().map(|t| Token { text: t, logprob: lp }).collect();
        let mut finish = Finish::Stop;
        if tokens.len() > params.max_tokens as usize {
            tokens.truncate(params.max_tokens as usize);
            finish = Finish::Length;
        }
        let mut text: String = tokens.iter().map(|t| t.text.as_str()).collect();
        if let Some(cut) = apply_stop(&text, &params.stop) {
            let mut kept = Vec::new();
            let mut len = 0;
            for mut t in tokens {
                if len >= cut {
                    break;
                }
                if len + t.text.len() > cut {
                    t.text.truncate(cut - len);
                }
                len += t.text.len();
                kept.push(t);
            }
            tokens = kept;
            text.truncate(cut);
            finish = Finish::Stop;
        }
        Ok(GenerationResult { text, tokens, finish })
    }

    fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<ScoreResult, LmError> {
        if continuation.is_empty() {
            return Err(LmError::InvalidRequest("continuation must be nonempty".into()));
        }
        let n = oracle_tokens(continuation).len().max(1);
        self.check_context(prompt, n)?;
        let per_token = vec![self.spec.token_logprob; n];
        Ok(ScoreResult { total: per_token.iter().sum(), per_token })
    }

    fn final_hidden(&self, prompt: &str) -> Result<HiddenVector, LmError> {
        if prompt.is_empty() {
            return Err(LmError::InvalidRequest("prompt must be nonempty".into()));
        }
        self.check_context(prompt, 0)?;
        let id = self
            .query_id(prompt)
            .ok_or_else(|| LmError::UnsupportedByBackend("prompt does not address a known query".into()))?;
        let centroid = self
            .spec
            .categories
            .get(id)
            .and_then(|c| self.spec.centroids.get(c))
            .ok_or_else(|| LmError::UnsupportedByBackend(format!("no centroid for query {id}")))?;
        let mut rng = SeededRng::derived(self.spec.seed, &format!("hidden\0{prompt}"));
        let values = centroid.iter().map(|c| c + self.spec.noise_sigma * rng.normal()).collect();
        Ok(HiddenVector::new(values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Concept;

    fn set() -> ConceptSet {
        let mut c1 = Concept::new("crepe", "crepe", "a small very thin pancake");
        c1.category = Some("food".into());
        let mut c2 = Concept::new("dog", "dog", "A domesticated descendant of the wolf.");
        c2.category = Some("animal".into());
        let c3 = Concept::new("ice_cream", "ice cream", "frozen dessert");
        ConceptSet::new("t", vec![c1, c2, c3]).unwrap()
    }

    fn oracle(p: f64) -> OracleBackend {
        let mut spec = OracleSpec::from_concepts(&set(), p, 4);
        spec.centroids.insert("food".into(), vec![1.0, 0.0, 0.0]);
        spec.centroids.insert("animal".into(), vec![0.0, 2.0, 0.0]);
        OracleBackend::new(spec).unwrap()
    }

    #[test]
    fn correct_answers_have_word_newline_shape() {
        let o = oracle(1.0);
        let g = o.generate("x ⇒ y\na small very thin pancake ⇒", &DecodingParams::default()).unwrap();
        assert_eq!(g.text, "crepe\n");
        assert_eq!(g.finish, Finish::Stop);
        g.validate().unwrap();
        let g = o.generate("frozen dessert can be called as", &DecodingParams::probe()).unwrap();
        assert_eq!(g.text, "ice cream\n");
        assert_eq!(g.tokens.len(), 3);
    }

    #[test]
    fn wrong_answers_are_seeded_distractors() {
        let o = oracle(0.0);
        let p = "a small very thin pancake ⇒";
        let g = o.generate(p, &DecodingParams::default()).unwrap();
        assert_ne!(g.text, "crepe\n");
        assert_eq!(g, o.generate(p, &DecodingParams::default()).unwrap());
        assert_eq!(g.text, GOLDEN_DISTRACTOR);
    }

    const GOLDEN_DISTRACTOR: &str = "dog\n";

    #[test]
    fn max_tokens_truncates() {
        let o = oracle(1.0);
        let g = o.generate("frozen dessert ⇒", &DecodingParams { max_tokens: 1, ..DecodingParams::default() }).unwrap();
        assert_eq!((g.text.as_str(), g.finish), ("ice", Finish::Length));
    }

    #[test]
    fn uniform_scoring() {
        let o = oracle(1.0);
        let s = o.score_continuation("p", "one two three").unwrap();
        assert_eq!(s.total, -3.0);
        assert_eq!(s.per_token, vec![-1.0; 3]);
        assert!(o.score_continuation("p", "one").unwrap().total > s.total);
        assert!(o.score_continuation("p", "").is_err());
    }

    #[test]
    fn hidden_is_centroid_plus_noise() {
        let o = oracle(1.0);
        assert_eq!(o.final_hidden("a small very thin pancake ⇒").unwrap().values, vec![1.0, 0.0, 0.0]);
        let mut spec = o.spec().clone();
        spec.noise_sigma = 0.5;
        let noisy = OracleBackend::new(spec).unwrap();
        let prompt = "A domesticated descendant of the wolf. ⇒";
        let v = noisy.final_hidden(prompt).unwrap().values;
        let mut rng = SeededRng::derived(4, &format!("hidden\0{prompt}"));
        let expect: Vec<f64> = [0.0, 2.0, 0.0].iter().map(|c| c + 0.5 * rng.normal()).collect();
        assert_eq!(v, expect);
        assert!(matches!(o.final_hidden("frozen dessert ⇒"), Err(LmError::UnsupportedByBackend(_))));
    }

    #[test]
    fn context_overflow() {
        let mut spec = OracleSpec::from_concepts(&set(), 1.0, 0);
        spec.max_context = 30;
        let o = OracleBackend::new(spec).unwrap();
        assert!(matches!(o.generate("a b c", &DecodingParams::default()), Err(LmError::ContextOverflow(_))));
    }

    #[test]
    fn bos_sentinel_is_stripped() {
        let o = oracle(1.0);
        assert_eq!(o.query_id("<BOS>dog"), Some("dog"));
    }
}
