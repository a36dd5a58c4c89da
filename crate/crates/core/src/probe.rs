//! Behavioural experiments: reverse-dictionary runs, accuracy reports with
//! bootstrap intervals, query-property correlations, multiple-choice and
//! minimal-pair scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Concept, ConceptSet, FrequencyTable, WordNetIndex};
use crate::lmclient::{Backend, DecodingParams, LmError, BOS_SENTINEL};
use crate::promptgen::{
    corrupt_mis, permute_dataset, permute_words, render_prompt_styled, sample_demo_concepts, word_pairs, Condition,
    DemoPair, PromptError, PromptStyle,
};
use crate::rng::{derive_seed, SeededRng};
use crate::stats::{percentile_interval, spearman};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("backend failed in run {run} on concept {concept}: {source}")]
    Backend {
        run: usize,
        concept: String,
        #[source]
        source: LmError,
        /// Records completed before the failure.
        partial: Vec<TrialRecord>,
    },
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("no records for group {0}")]
    EmptyGroup(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid item: {0}")]
    InvalidItem(String),
    #[error("malformed record on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One probe outcome for one concept in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub model_id: String,
    pub condition: Condition,
    pub n_demos: usize,
    pub run_seed: u64,
    pub concept_id: String,
    pub prompt_digest: String,
    pub raw_completion: String,
    pub answer: String,
    pub matched: bool,
    pub expected: BTreeSet<String>,
    #[serde(default)]
    pub permute_ratio: f64,
}

/// Text before the first newline, trimmed.
pub fn extract_answer(raw: &str) -> String {
    raw.split('\n').next().unwrap_or("").trim().to_string()
}

const EDGE_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '"', '\''];

/// Lowercase, strip surrounding whitespace and punctuation, collapse
/// internal whitespace. No stemming.
pub fn normalize(s: &str) -> String {
    let lowered = s.to_lowercase();
    let trimmed = lowered.trim_matches(|c: char| c.is_whitespace() || EDGE_PUNCT.contains(&c));
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Exact match after normalization; an empty answer never matches.
pub fn is_match(answer: &str, expected: &BTreeSet<String>) -> bool {
    let a = normalize(answer);
    !a.is_empty() && expected.iter().any(|e| normalize(e) == a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub condition: Condition,
    pub n_demos: usize,
    pub runs: usize,
    pub base_seed: u64,
    pub permute_ratio: f64,
    /// Maximum concurrent backend requests.
    pub in_flight: usize,
    pub style: PromptStyle,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            condition: Condition::Demo,
            n_demos: 24,
            runs: 5,
            base_seed: 0,
            permute_ratio: 0.0,
            in_flight: 4,
            style: PromptStyle::default(),
        }
    }
}

impl ProbeConfig {
    pub fn new(condition: Condition, n_demos: usize) -> Self {
        let n_demos = if condition.takes_demonstrations() { n_demos } else { 0 };
        Self { condition, n_demos, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.condition.takes_demonstrations() != (self.n_demos > 0) {
            return Err(PromptError::ConditionMismatch { condition: self.condition, n: self.n_demos }.into());
        }
        if self.runs == 0 {
            return Err(ProbeError::Config("runs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.permute_ratio) {
            return Err(ProbeError::Config(format!("permute_ratio {} outside [0, 1]", self.permute_ratio)));
        }
        if self.in_flight == 0 {
            return Err(ProbeError::Config("in_flight must be positive".into()));
        }
        Ok(())
    }
}

/// Per-run state shared by every query of that run.
struct RunPlan<'a> {
    seed: u64,
    pool: &'a ConceptSet,
    demos: Vec<DemoPair>,
    demo_ids: BTreeSet<String>,
    rand_targets: Option<BTreeMap<String, String>>,
    vocab: &'a BTreeSet<String>,
}

impl RunPlan<'_> {
    /// Demonstrations for `query`, redrawn without it when the shared set
    /// happens to contain the query itself.
    fn demos_for(&self, query: &Concept, condition: Condition, n: usize) -> Result<Vec<DemoPair>, PromptError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let base = if self.demo_ids.contains(&query.id) {
            self.build(sample_ids(self.pool, n, self.seed, Some(&query.id))?, condition)?
        } else {
            self.demos.clone()
        };
        Ok(base)
    }

    fn build(&self, ids: Vec<String>, condition: Condition) -> Result<Vec<DemoPair>, PromptError> {
        let pairs: Vec<DemoPair> = ids
            .iter()
            .map(|id| {
                let c = self.pool.get(id).expect("sampled id is in pool");
                let target = match &self.rand_targets {
                    Some(t) => t[id].clone(),
                    None => c.lemma.clone(),
                };
                DemoPair { cue: c.description.clone(), target }
            })
            .collect();
        match condition {
            Condition::Mis => corrupt_mis(&pairs, self.vocab, self.seed),
            Condition::W2W => Ok(word_pairs(&pairs)),
            _ => Ok(pairs),
        }
    }
}

fn sample_ids(pool: &ConceptSet, n: usize, seed: u64, exclude: Option<&str>) -> Result<Vec<String>, PromptError> {
    Ok(sample_demo_concepts(pool, n, seed, exclude)?.into_iter().map(|c| c.id.clone()).collect())
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Seed used to permute the query description of `concept_id` in a run.
pub fn query_permutation_seed(run_seed: u64, concept_id: &str) -> u64 {
    derive_seed(run_seed, &format!("query\0{concept_id}"))
}

/// A rendered query prompt and the answers that count as correct for it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTrial {
    pub concept_id: String,
    pub prompt: String,
    pub expected: BTreeSet<String>,
}

/// Render every query prompt of one run with seed `seed`.
///
/// One demonstration set is drawn per run and shared by all queries; a
/// query that falls inside it gets a set redrawn without itself. Under Rand
/// the demonstrations and the expected answer use the run's permuted
/// targets.
pub fn plan_prompts(
    queries: &ConceptSet,
    pool: &ConceptSet,
    config: &ProbeConfig,
    seed: u64,
) -> Result<Vec<PlannedTrial>, ProbeError> {
    let condition = config.condition;
    let vocab: BTreeSet<String> = pool.iter().map(|c| c.lemma.clone()).collect();
    let rand_targets = match condition {
        Condition::Rand => Some(permute_dataset(pool, seed)?.targets),
        _ => None,
    };
    let mut plan = RunPlan { seed, pool, demos: Vec::new(), demo_ids: BTreeSet::new(), rand_targets, vocab: &vocab };
    if config.n_demos > 0 {
        let ids = sample_ids(pool, config.n_demos, seed, None)?;
        plan.demos = plan.build(ids.clone(), condition)?;
        plan.demo_ids = ids.into_iter().collect();
    }
    queries
        .iter()
        .map(|q| {
            let mut query = q.clone();
            if config.permute_ratio > 0.0 {
                query.description =
                    permute_words(&q.description, config.permute_ratio, query_permutation_seed(seed, &q.id));
            }
            let demos = plan.demos_for(q, condition, config.n_demos)?;
            let prompt = render_prompt_styled(&demos, &query, condition, &config.style)?;
            let expected = match &plan.rand_targets {
                Some(t) => BTreeSet::from([t.get(&q.id).cloned().ok_or_else(|| {
                    ProbeError::Config(format!("Rand needs every query in the demonstration pool; {} is not", q.id))
                })?]),
                None => q.expected_answers(),
            };
            Ok(PlannedTrial { concept_id: q.id.clone(), prompt: prompt.text, expected })
        })
        .collect()
}

/// Run the probe with demonstrations drawn from the query set itself.
pub fn run_probe(backend: &dyn Backend, set: &ConceptSet, config: &ProbeConfig) -> Result<Vec<TrialRecord>, ProbeError> {
    run_probe_with_pool(backend, set, set, config)
}

/// Run the probe over `queries`, drawing demonstrations from `pool`.
///
/// Run `r` uses seed `base_seed + r` for its demonstration set, its Mis
/// corruption and its Rand permutation. Records come back ordered by run,
/// then concept id, whatever order the backend answers in.
pub fn run_probe_with_pool(
    backend: &dyn Backend,
    queries: &ConceptSet,
    pool: &ConceptSet,
    config: &ProbeConfig,
) -> Result<Vec<TrialRecord>, ProbeError> {
    config.validate()?;
    let condition = config.condition;
    if condition == Condition::Rand {
        if let Some(c) = queries.iter().find(|c| pool.get(&c.id).is_none()) {
            return Err(ProbeError::Config(format!("Rand needs every query in the demonstration pool; {} is not", c.id)));
        }
    }
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(config.in_flight)
        .build()
        .map_err(|e| ProbeError::Config(e.to_string()))?;
    let model_id = backend.descriptor().id.clone();
    let params = DecodingParams::probe();
    let mut records = Vec::with_capacity(queries.len() * config.runs);

    for run in 0..config.runs {
        let seed = config.base_seed + run as u64;
        let prompts: Vec<(String, BTreeSet<String>)> =
            plan_prompts(queries, pool, config, seed)?.into_iter().map(|t| (t.prompt, t.expected)).collect();

        let outcomes: Vec<Result<TrialRecord, LmError>> = threads.install(|| {
            queries
                .concepts()
                .par_iter()
                .zip(prompts.par_iter())
                .map(|(q, (prompt, expected))| {
                    let out = backend.generate(prompt, &params)?;
                    let answer = extract_answer(&out.text);
                    Ok(TrialRecord {
                        model_id: model_id.clone(),
                        condition,
                        n_demos: config.n_demos,
                        run_seed: seed,
                        concept_id: q.id.clone(),
                        prompt_digest: sha256_hex(prompt),
                        matched: is_match(&answer, expected),
                        raw_completion: out.text,
                        answer,
                        expected: expected.clone(),
                        permute_ratio: config.permute_ratio,
                    })
                })
                .collect()
        });
        for (q, outcome) in queries.iter().zip(outcomes) {
            match outcome {
                Ok(r) => records.push(r),
                Err(source) => {
                    return Err(ProbeError::Backend { run, concept: q.id.clone(), source, partial: records });
                }
            }
        }
    }
    Ok(records)
}

/// Grouping key for accuracy reports.
#[derive(Debug, Clone, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct GroupKey {
    pub model_id: String,
    pub condition: Condition,
    pub n_demos: usize,
    pub permute_ratio: f64,
}

impl GroupKey {
    pub fn of(r: &TrialRecord) -> Self {
        Self { model_id: r.model_id.clone(), condition: r.condition, n_demos: r.n_demos, permute_ratio: r.permute_ratio }
    }

    fn sort_key(&self) -> (String, Condition, usize, u64) {
        (self.model_id.clone(), self.condition, self.n_demos, self.permute_ratio.to_bits())
    }
}

impl std::fmt::Display for GroupKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/N={}", self.model_id, self.condition, self.n_demos)?;
        if self.permute_ratio > 0.0 {
            write!(f, "/perm={}", self.permute_ratio)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub key: GroupKey,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { resamples: 1000, level: 0.95, seed: 0 }
    }
}

/// Mean match rate of `records` with a percentile bootstrap interval that
/// resamples concepts; each replicate pools all runs of the drawn concepts.
pub fn accuracy_of(records: &[&TrialRecord], boot: &BootstrapConfig) -> Option<(f64, f64, f64)> {
    if records.is_empty() {
        return None;
    }
    let mut per_concept: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = per_concept.entry(r.concept_id.as_str()).or_default();
        e.0 += r.matched as usize;
        e.1 += 1;
    }
    let counts: Vec<(usize, usize)> = per_concept.into_values().collect();
    let matched: usize = counts.iter().map(|c| c.0).sum();
    let mean = matched as f64 / records.len() as f64;
    if boot.resamples == 0 {
        return Some((mean, mean, mean));
    }
    let mut rng = SeededRng::derived(boot.seed, "bootstrap");
    let mut replicates: Vec<f64> = (0..boot.resamples)
        .map(|_| {
            let (mut m, mut n) = (0usize, 0usize);
            for _ in 0..counts.len() {
                let c = counts[rng.index(counts.len())];
                m += c.0;
                n += c.1;
            }
            m as f64 / n as f64
        })
        .collect();
    let (lo, hi) = percentile_interval(&mut replicates, boot.level);
    Some((mean, lo.min(mean), hi.max(mean)))
}

/// One report per (model, condition, n_demos, permute_ratio) group, in key
/// order.
pub fn accuracy_report(records: &[TrialRecord], boot: &BootstrapConfig) -> Result<Vec<AccuracyReport>, ProbeError> {
    let mut groups: BTreeMap<(String, Condition, usize, u64), (GroupKey, Vec<&TrialRecord>)> = BTreeMap::new();
    for r in records {
        let key = GroupKey::of(r);
        groups.entry(key.sort_key()).or_insert_with(|| (key, Vec::new())).1.push(r);
    }
    if groups.is_empty() {
        return Err(ProbeError::EmptyGroup("no records".into()));
    }
    groups
        .into_values()
        .map(|(key, rs)| {
            let (mean, ci_lo, ci_hi) = accuracy_of(&rs, boot).ok_or_else(|| ProbeError::EmptyGroup(key.to_string()))?;
            Ok(AccuracyReport { key, mean, ci_lo, ci_hi, n_trials: rs.len() })
        })
        .collect()
}

pub fn write_records_jsonl(records: &[TrialRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records_jsonl(input: impl BufRead) -> Result<Vec<TrialRecord>, ProbeError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line)
            .map_err(|e| ProbeError::MalformedRecord { line: i + 1, message: e.to_string() })?;
        out.push(r);
    }
    Ok(out)
}

pub const REPORT_CSV_HEADER: [&str; 8] = ["model", "condition", "n_demos", "mean", "ci_lo", "ci_hi", "n", "permute_ratio"];

pub fn write_report_csv(reports: &[AccuracyReport], out: impl Write) -> Result<(), ProbeError> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| ProbeError::Io(std::io::Error::other(e));
    w.write_record(REPORT_CSV_HEADER).map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.key.model_id.clone(),
            r.key.condition.as_str().to_string(),
            r.key.n_demos.to_string(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.ci_lo),
            format!("{:.6}", r.ci_hi),
            r.n_trials.to_string(),
            r.key.permute_ratio.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-concept accuracy over all records for that concept.
pub fn concept_accuracy(records: &[TrialRecord]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.concept_id.clone()).or_default();
        e.0 += r.matched as usize;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (m, n))| (k, m as f64 / n as f64)).collect()
}

/// Spearman correlation between per-concept accuracy and one query property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorCorrelation {
    /// Absent when the correlation is undefined.
    pub rho: Option<f64>,
    /// Concepts that entered the correlation.
    pub n: usize,
    /// Concepts skipped because the property is unknown for them.
    pub missing: usize,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCorrelations {
    pub word_freq: FactorCorrelation,
    pub num_senses: FactorCorrelation,
    pub desc_length: FactorCorrelation,
}

impl PropertyCorrelations {
    pub fn get(&self, factor: &str) -> Option<&FactorCorrelation> {
        match factor {
            "word_freq" => Some(&self.word_freq),
            "num_senses" => Some(&self.num_senses),
            "desc_length" => Some(&self.desc_length),
            _ => None,
        }
    }

    /// The coefficient for `factor`, or `InsufficientData` when undefined.
    pub fn rho(&self, factor: &str) -> Result<f64, ProbeError> {
        let f = self.get(factor).ok_or_else(|| ProbeError::Config(format!("unknown factor {factor}")))?;
        f.rho.ok_or_else(|| {
            ProbeError::InsufficientData(format!("{factor}: {}", f.reason.as_deref().unwrap_or("undefined")))
        })
    }
}

fn correlate(pairs: Vec<(f64, f64)>, missing: usize) -> FactorCorrelation {
    let n = pairs.len();
    let (acc, prop): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    match spearman(&acc, &prop) {
        Ok(rho) => FactorCorrelation { rho: Some(rho), n, missing, reason: None },
        Err(e) => FactorCorrelation { rho: None, n, missing, reason: Some(e.to_string()) },
    }
}

/// Correlate per-concept accuracy with log word frequency, WordNet sense
/// count and description length in whitespace tokens.
pub fn property_correlations(
    records: &[TrialRecord],
    freq: &FrequencyTable,
    wn: &WordNetIndex,
    set: &ConceptSet,
) -> Result<PropertyCorrelations, ProbeError> {
    let acc = concept_accuracy(records);
    let concepts: Vec<(&Concept, f64)> =
        acc.iter().filter_map(|(id, &a)| set.get(id).map(|c| (c, a))).collect();
    if concepts.len() < 2 {
        return Err(ProbeError::InsufficientData(format!(
            "records cover {} known concepts, need at least 2",
            concepts.len()
        )));
    }
    let mut with_freq = Vec::new();
    let mut missing_freq = 0;
    for (c, a) in &concepts {
        match freq.get(&c.lemma) {
            Some(f) => with_freq.push((*a, f)),
            None => missing_freq += 1,
        }
    }
    let senses = concepts.iter().map(|(c, a)| (*a, wn.sense_count(&c.lemma) as f64)).collect();
    let lengths = concepts.iter().map(|(c, a)| (*a, c.description.split_whitespace().count() as f64)).collect();
    Ok(PropertyCorrelations {
        word_freq: correlate(with_freq, missing_freq),
        num_senses: correlate(senses, 0),
        desc_length: correlate(lengths, 0),
    })
}

/// Zero-shot prompt templates for multiple-choice scoring. `{answer}` marks
/// where each candidate is appended.
pub const QA_TEMPLATE: &str = "Question: {question}\nAnswer: {answer}";
pub const GOAL_TEMPLATE: &str = "Goal: {question}\nAnswer: {answer}";
pub const CONTEXT_QA_TEMPLATE: &str = "{context}\nQuestion: {question}\nAnswer: {answer}";

/// Template for a benchmark name (case-insensitive).
pub fn template_for(task: &str) -> Option<&'static str> {
    match task.to_ascii_lowercase().as_str() {
        "csqa" | "commonsenseqa" | "arc" | "arc-e" | "arc-c" | "arc_easy" | "arc_challenge" | "hellaswag" | "obqa"
        | "openbookqa" => Some(QA_TEMPLATE),
        "piqa" => Some(GOAL_TEMPLATE),
        "siqa" | "socialiqa" | "boolq" => Some(CONTEXT_QA_TEMPLATE),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCItem {
    pub template_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub question: String,
    pub candidates: Vec<String>,
    pub gold: usize,
}

impl MCItem {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.candidates.len() < 2 {
            return Err(ProbeError::InvalidItem(format!("{} candidates; need at least 2", self.candidates.len())));
        }
        if self.gold >= self.candidates.len() {
            return Err(ProbeError::InvalidItem(format!("gold index {} out of range", self.gold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCOutcome {
    pub chosen: usize,
    pub scores: Vec<f64>,
}

impl MCOutcome {
    pub fn correct(&self, item: &MCItem) -> bool {
        self.chosen == item.gold
    }
}

/// Split a filled template into the scoring prefix and the text that goes
/// before every candidate. A space right before `{answer}` belongs to the
/// continuation so that candidates are scored as whole words.
pub fn render_mc_prefix(item: &MCItem, template: &str) -> Result<(String, String), ProbeError> {
    let filled = template
        .replace("{context}", item.context.as_deref().unwrap_or(""))
        .replace("{question}", &item.question);
    let Some((before, after)) = filled.split_once("{answer}") else {
        return Err(ProbeError::InvalidItem("template has no {answer} slot".into()));
    };
    if !after.is_empty() {
        return Err(ProbeError::InvalidItem("template must end with the {answer} slot".into()));
    }
    Ok(match before.strip_suffix(' ') {
        Some(p) => (p.to_string(), " ".to_string()),
        None => (before.to_string(), String::new()),
    })
}

/// Score every candidate by summed log-probability after the rendered
/// prefix and pick the argmax; ties go to the lowest index.
pub fn score_mc(backend: &dyn Backend, item: &MCItem, template: &str) -> Result<MCOutcome, ProbeError> {
    item.validate()?;
    let (prefix, lead) = render_mc_prefix(item, template)?;
    let mut scores = Vec::with_capacity(item.candidates.len());
    for c in &item.candidates {
        scores.push(backend.score_continuation(&prefix, &format!("{lead}{c}"))?.total);
    }
    let mut chosen = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[chosen] {
            chosen = i;
        }
    }
    Ok(MCOutcome { chosen, scores })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimalPair {
    pub good: String,
    pub bad: String,
}

/// True iff the well-formed sentence gets strictly higher total
/// log-probability, each scored from the beginning-of-sequence marker.
pub fn score_minimal_pair(backend: &dyn Backend, pair: &MinimalPair) -> Result<bool, ProbeError> {
    let good = backend.score_continuation(BOS_SENTINEL, &pair.good)?.total;
    let bad = backend.score_continuation(BOS_SENTINEL, &pair.bad)?.total;
    Ok(good > bad)
}
