//! ProtoQA generalization experiment: question templates, answer sampling
//! and ranking, cluster matching, and the Max Answers@k / Max Incorrect@k
//! metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{synsets_of, Cluster, Pos, ProtoQAItem, SynsetId, WordNetIndex};
use crate::lmclient::{Backend, DecodeMode, DecodingParams, LmError};
use crate::probe::{extract_answer, normalize};
use crate::corpus::Concept;
use crate::promptgen::{render_prompt_styled, Condition, DemoPair, PromptError, PromptStyle};
use crate::stats::{max_weight_assignment, RewardMatrix};

#[derive(Debug, Error)]
pub enum ProtoQAError {
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ranked list length used for scoring.
pub const MAX_RANKED: usize = 10;

/// Answer budgets reported for Max Answers@k.
pub const MAX_ANSWERS_KS: [usize; 4] = [1, 3, 5, 10];
/// Miss budgets reported for Max Incorrect@k.
pub const MAX_INCORRECT_KS: [usize; 3] = [1, 3, 5];

const STOPWORDS_DATA: &str = include_str!("../data/stopwords.txt");

/// Function words ignored by WordNet matching.
pub fn stopwords() -> &'static BTreeSet<String> {
    static WORDS: OnceLock<BTreeSet<String>> = OnceLock::new();
    WORDS.get_or_init(|| STOPWORDS_DATA.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

/// Rewrite a ProtoQA question as a sentence prefix the model can complete.
///
/// "Name something X." becomes "One thing X is", "Name a X" becomes
/// "One X is", "How can you tell X?" becomes "One way to tell X is".
/// Questions that fit no pattern get " The answer is" appended.
pub fn nl_translate(question: &str) -> String {
    let q = question.trim();
    let body = q.trim_end_matches(['.', '?', '!']).trim_end();
    const PATTERNS: [(&str, &str); 7] = [
        ("name something ", "One thing "),
        ("tell me something ", "One thing "),
        ("how can you tell ", "One way to tell "),
        ("name an ", "One "),
        ("name a ", "One "),
        ("give me an ", "One "),
        ("give me a ", "One "),
    ];
    for (prefix, replacement) in PATTERNS {
        if let Some(rest) = strip_prefix_ci(body, prefix) {
            return format!("{replacement}{} is", rest.trim());
        }
    }
    format!("{q} The answer is")
}

/// Prompt for one question: the NL rewrite without demonstrations, or the
/// question as a reverse-dictionary query after the demonstrations.
pub fn question_prompt(question: &str, demos: &[DemoPair], style: &PromptStyle) -> Result<String, PromptError> {
    if demos.is_empty() {
        return Ok(nl_translate(question));
    }
    let query = Concept::new("question", "", question.trim());
    Ok(render_prompt_styled(demos, &query, Condition::Demo, style)?.text)
}

/// Draw `n` samples with seeds `params.seed .. params.seed + n − 1`, each cut
/// at its first newline and normalized. Order follows the seed.
pub fn collect_answers(
    backend: &dyn Backend,
    prompt: &str,
    n: usize,
    params: &DecodingParams,
) -> Result<Vec<String>, ProtoQAError> {
    if params.mode != DecodeMode::Sample {
        return Err(ProtoQAError::Config("answer collection needs sampling decoding".into()));
    }
    if n == 0 {
        return Err(ProtoQAError::Config("need at least one sample".into()));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let p = DecodingParams { seed: params.seed + i, ..params.clone() };
            let out = backend.generate(prompt, &p)?;
            Ok(normalize(&extract_answer(&out.text)))
        })
        .collect()
}

/// Up to ten distinct answers by descending count, ties lexicographic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedAnswers {
    pub answers: Vec<String>,
    pub counts: Vec<usize>,
}

impl RankedAnswers {
    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

pub fn rank_answers(samples: &[String]) -> RankedAnswers {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in samples {
        let n = normalize(s);
        if !n.is_empty() {
            *counts.entry(n).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(MAX_RANKED);
    let (answers, counts) = ranked.into_iter().unzip();
    RankedAnswers { answers, counts }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Exact,
    #[serde(rename = "wordnet")]
    WordNet,
}

impl MatchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchMode::Exact => "exact",
            MatchMode::WordNet => "wordnet",
        }
    }
}

impl std::str::FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(MatchMode::Exact),
            "wordnet" => Ok(MatchMode::WordNet),
            other => Err(format!("unknown match mode `{other}` (expected exact or wordnet)")),
        }
    }
}

fn content_tokens(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split_whitespace().map(normalize).filter(|t| !t.is_empty() && !stopwords().contains(t))
}

fn noun_verb_synsets(wn: &WordNetIndex, token: &str) -> BTreeSet<SynsetId> {
    let mut out = synsets_of(wn, token, Some(Pos::Noun));
    out.extend(synsets_of(wn, token, Some(Pos::Verb)));
    out
}

/// Whether `answer` hits `cluster`.
///
/// Exact mode compares normalized strings. WordNet mode also accepts any
/// content token of the answer sharing a noun or verb synset with any
/// content token of any cluster string.
pub fn matches(answer: &str, cluster: &Cluster, mode: MatchMode, wn: &WordNetIndex) -> bool {
    let a = normalize(answer);
    if a.is_empty() {
        return false;
    }
    if cluster.answers.iter().any(|c| normalize(c) == a) {
        return true;
    }
    if mode == MatchMode::Exact {
        return false;
    }
    let answer_synsets: BTreeSet<SynsetId> = content_tokens(&a).flat_map(|t| noun_verb_synsets(wn, &t)).collect();
    if answer_synsets.is_empty() {
        return false;
    }
    cluster
        .answers
        .iter()
        .flat_map(|c| content_tokens(c).collect::<Vec<_>>())
        .any(|t| noun_verb_synsets(wn, &t).iter().any(|s| answer_synsets.contains(s)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MaxAnswers,
    MaxIncorrect,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::MaxAnswers => "max_answers",
            Metric::MaxIncorrect => "max_incorrect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metric: Metric,
    pub k: usize,
    pub mode: MatchMode,
    pub score: f64,
    pub earned: f64,
    pub attainable: f64,
    /// (answer index, cluster index) pairs that earned reward.
    pub matched_pairs: BTreeSet<(usize, usize)>,
}

fn ratio(earned: f64, attainable: f64) -> f64 {
    if attainable > 0.0 {
        earned / attainable
    } else {
        0.0
    }
}

/// Best one-to-one matching of the first `k` answers to clusters, each
/// matched cluster paying its count, normalized by the `min(k, clusters)`
/// largest counts.
pub fn score_max_answers(
    ranked: &RankedAnswers,
    clusters: &[Cluster],
    k: usize,
    mode: MatchMode,
    wn: &WordNetIndex,
) -> ScoreReport {
    let k = k.max(1);
    let answers = &ranked.answers[..ranked.len().min(k)];
    let mut reward = RewardMatrix::zeros(answers.len(), clusters.len());
    for (i, a) in answers.iter().enumerate() {
        for (j, c) in clusters.iter().enumerate() {
            if matches(a, c, mode, wn) {
                reward.set(i, j, c.count as f64);
            }
        }
    }
    let assignment = max_weight_assignment(&reward);
    let mut counts: Vec<f64> = clusters.iter().map(|c| c.count as f64).collect();
    counts.sort_by(|a, b| b.total_cmp(a));
    let attainable: f64 = counts.iter().take(k.min(clusters.len())).sum();
    ScoreReport {
        metric: Metric::MaxAnswers,
        k,
        mode,
        score: ratio(assignment.total, attainable),
        earned: assignment.total,
        attainable,
        matched_pairs: assignment.pairs.into_iter().collect(),
    }
}

/// Walk the ranked answers, letting each consume the largest still-open
/// cluster it matches (earlier cluster on ties). An answer that opens
/// nothing is a miss; scoring stops at the `k`-th miss. Normalized by the
/// total count of all clusters.
pub fn score_max_incorrect(
    ranked: &RankedAnswers,
    clusters: &[Cluster],
    k: usize,
    mode: MatchMode,
    wn: &WordNetIndex,
) -> ScoreReport {
    let k = k.max(1);
    let mut open = vec![true; clusters.len()];
    let mut misses = 0;
    let mut earned = 0.0;
    let mut matched_pairs = BTreeSet::new();
    for (i, a) in ranked.answers.iter().enumerate() {
        if misses >= k {
            break;
        }
        let best = clusters
            .iter()
            .enumerate()
            .filter(|(j, c)| open[*j] && matches(a, c, mode, wn))
            .fold(None::<(usize, u32)>, |best, (j, c)| match best {
                Some((_, count)) if count >= c.count => best,
                _ => Some((j, c.count)),
            });
        match best {
            Some((j, count)) => {
                open[j] = false;
                earned += count as f64;
                matched_pairs.insert((i, j));
            }
            None => misses += 1,
        }
    }
    let attainable: f64 = clusters.iter().map(|c| c.count as f64).sum();
    ScoreReport { metric: Metric::MaxIncorrect, k, mode, score: ratio(earned, attainable), earned, attainable, matched_pairs }
}

/// Every configured metric for one question.
pub fn score_question(
    ranked: &RankedAnswers,
    clusters: &[Cluster],
    modes: &[MatchMode],
    max_answers_ks: &[usize],
    max_incorrect_ks: &[usize],
    wn: &WordNetIndex,
) -> Vec<ScoreReport> {
    let mut out = Vec::new();
    for &mode in modes {
        for &k in max_answers_ks {
            out.push(score_max_answers(ranked, clusters, k, mode, wn));
        }
        for &k in max_incorrect_ks {
            out.push(score_max_incorrect(ranked, clusters, k, mode, wn));
        }
    }
    out
}

/// Ranked answers and scores for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question_id: String,
    pub prompt: String,
    pub ranked: RankedAnswers,
    pub scores: Vec<ScoreReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtoQAConfig {
    pub samples: usize,
    pub base_seed: u64,
    pub modes: Vec<MatchMode>,
    pub max_answers_ks: Vec<usize>,
    pub max_incorrect_ks: Vec<usize>,
}

impl Default for ProtoQAConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            base_seed: 0,
            modes: vec![MatchMode::Exact, MatchMode::WordNet],
            max_answers_ks: MAX_ANSWERS_KS.to_vec(),
            max_incorrect_ks: MAX_INCORRECT_KS.to_vec(),
        }
    }
}

/// Sample, rank and score every question in order.
pub fn run_protoqa(
    backend: &dyn Backend,
    items: &[ProtoQAItem],
    demos: &[DemoPair],
    style: &PromptStyle,
    config: &ProtoQAConfig,
    wn: &WordNetIndex,
) -> Result<Vec<QuestionResult>, ProtoQAError> {
    let params = DecodingParams::sampling(config.base_seed);
    items
        .iter()
        .map(|item| {
            let prompt = question_prompt(&item.question, demos, style)?;
            let samples = collect_answers(backend, &prompt, config.samples, &params)?;
            let ranked = rank_answers(&samples);
            let scores =
                score_question(&ranked, &item.clusters, &config.modes, &config.max_answers_ks, &config.max_incorrect_ks, wn);
            Ok(QuestionResult { question_id: item.id.clone(), prompt, ranked, scores })
        })
        .collect()
}

/// Mean score over questions per (metric, k, mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: Metric,
    pub k: usize,
    pub mode: MatchMode,
    pub mean_score: f64,
    pub n_questions: usize,
}

pub fn aggregate(results: &[QuestionResult]) -> Vec<AggregateRow> {
    let mut acc: BTreeMap<(MatchMode, Metric, usize), (f64, usize)> = BTreeMap::new();
    for r in results {
        for s in &r.scores {
            let e = acc.entry((s.mode, s.metric, s.k)).or_default();
            e.0 += s.score;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|((mode, metric, k), (sum, n))| AggregateRow { metric, k, mode, mean_score: sum / n as f64, n_questions: n })
        .collect()
}

pub fn write_results_jsonl(results: &[QuestionResult], mut out: impl Write) -> std::io::Result<()> {
    for r in results {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_aggregate_csv(rows: &[AggregateRow], out: impl Write) -> Result<(), ProtoQAError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| ProtoQAError::Io(std::io::Error::other(e));
    w.write_record(["mode", "metric", "k", "score", "n_questions"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.mode.as_str().to_string(),
            r.metric.as_str().to_string(),
            r.k.to_string(),
            format!("{:.6}", r.mean_score),
            r.n_questions.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_wordnet;
    use crate::lmclient::{OracleBackend, OracleSpec, ReplayBackend};
    use crate::rng::SeededRng;
    use proptest::prelude::*;
    use std::path::Path;

    fn cluster(answers: &[&str], count: u32) -> Cluster {
        Cluster { answers: answers.iter().map(|s| s.to_string()).collect(), count }
    }

    fn ranked(answers: &[&str]) -> RankedAnswers {
        RankedAnswers { answers: answers.iter().map(|s| s.to_string()).collect(), counts: vec![1; answers.len()] }
    }

    fn fixture_wordnet() -> WordNetIndex {
        load_wordnet(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wordnet")).unwrap()
    }

    fn empty_wn() -> WordNetIndex {
        WordNetIndex::default()
    }

    #[test]
    fn stopword_list_has_fifty_entries() {
        assert_eq!(stopwords().len(), 50);
        assert!(stopwords().contains("the"));
    }

    #[test]
    fn translation_templates() {
        assert_eq!(
            nl_translate("Name something that you might forget in a hotel room."),
            "One thing that you might forget in a hotel room is"
        );
        assert_eq!(nl_translate("How can you tell X?"), "One way to tell X is");
        assert_eq!(nl_translate("List stuff."), "List stuff. The answer is");
        assert_eq!(
            nl_translate("Name a sport that requires a lot of equipment."),
            "One sport that requires a lot of equipment is"
        );
        assert_eq!(nl_translate("Give me an animal with stripes"), "One animal with stripes is");
        assert_eq!(nl_translate("Tell me something people lose."), "One thing people lose is");
        assert_eq!(nl_translate("name an item you pack"), "One item you pack is");
    }

    #[test]
    fn demo_prompts_end_at_the_delimiter() {
        let demos = vec![DemoPair { cue: "a small very thin pancake".into(), target: "crepe".into() }];
        let p = question_prompt("Name a fruit.", &demos, &PromptStyle::default()).unwrap();
        assert_eq!(p, "a small very thin pancake ⇒ crepe\nName a fruit. ⇒");
        assert_eq!(question_prompt("Name a fruit.", &[], &PromptStyle::default()).unwrap(), "One fruit is");
    }

    #[test]
    fn ranking_rules() {
        let s: Vec<String> = ["keys", "phone", "keys", "charger", "phone", "keys"].map(String::from).into();
        let r = rank_answers(&s);
        assert_eq!(r.answers, ["keys", "phone", "charger"]);
        assert_eq!(r.counts, [3, 2, 1]);
        let r = rank_answers(&["b", "a", "b", "a", ""].map(String::from));
        assert_eq!(r.answers, ["a", "b"]);
        let singles: Vec<String> = (0..12).map(|i| format!("w{:02}", 11 - i)).collect();
        let r = rank_answers(&singles);
        assert_eq!(r.answers, (0..10).map(|i| format!("w{i:02}")).collect::<Vec<_>>());
        assert_eq!(rank_answers(&["Keys.", "keys"].map(String::from)).counts, [2]);
    }

    #[test]
    fn wordnet_matching_uses_shared_synsets() {
        let wn = fixture_wordnet();
        let c = cluster(&["couch"], 5);
        assert!(matches("sofa", &c, MatchMode::WordNet, &wn));
        assert!(!matches("sofa", &c, MatchMode::Exact, &wn));
        assert!(matches("a comfy sofa", &c, MatchMode::WordNet, &wn));
        assert!(!matches("", &c, MatchMode::WordNet, &wn));
        assert!(!matches("", &c, MatchMode::Exact, &wn));
        assert!(matches("Couch.", &c, MatchMode::Exact, &wn));
    }

    #[test]
    fn max_answers_edge_cases() {
        let wn = empty_wn();
        let clusters = vec![cluster(&["keys"], 10), cluster(&["phone"], 6), cluster(&["charger"], 3)];
        let all = score_max_answers(&ranked(&["charger", "keys", "phone"]), &clusters, 3, MatchMode::Exact, &wn);
        assert_eq!(all.score, 1.0);
        assert_eq!(all.matched_pairs, BTreeSet::from([(0, 2), (1, 0), (2, 1)]));
        let none = score_max_answers(&ranked(&["x", "y"]), &clusters, 3, MatchMode::Exact, &wn);
        assert_eq!(none.score, 0.0);
        let wide = score_max_answers(&ranked(&["phone"]), &clusters, 10, MatchMode::Exact, &wn);
        assert_eq!(wide.attainable, 19.0);
        assert!((wide.score - 6.0 / 19.0).abs() < 1e-15);
    }

    fn brute_force(reward: &[Vec<f64>]) -> f64 {
        fn go(reward: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == reward.len() {
                return 0.0;
            }
            let mut best = go(reward, row + 1, used);
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.max(reward[row][c] + go(reward, row + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        let cols = reward.first().map_or(0, Vec::len);
        go(reward, 0, &mut vec![false; cols])
    }

    /// Random answers and clusters over a small vocabulary so that match
    /// sets overlap.
    fn random_case(seed: u64, max_answers: usize, max_clusters: usize) -> (RankedAnswers, Vec<Cluster>) {
        let mut rng = SeededRng::new(seed);
        let vocab = ["a", "b", "c", "d", "e", "f", "g"];
        let n_answers = 1 + rng.index(max_answers);
        let n_clusters = 1 + rng.index(max_clusters);
        let mut answers: Vec<String> = vocab.iter().map(|s| s.to_string()).collect();
        rng.shuffle(&mut answers);
        answers.truncate(n_answers);
        let clusters = (0..n_clusters)
            .map(|_| {
                let members: BTreeSet<String> =
                    (0..1 + rng.index(3)).map(|_| vocab[rng.index(vocab.len())].to_string()).collect();
                Cluster { answers: members, count: 1 + rng.index(40) as u32 }
            })
            .collect();
        let counts = vec![1; answers.len()];
        (RankedAnswers { answers, counts }, clusters)
    }

    #[test]
    fn max_answers_equals_exhaustive_assignment() {
        let wn = empty_wn();
        for seed in 0..300 {
            let (r, clusters) = random_case(seed, 6, 6);
            for k in 1..=6 {
                let report = score_max_answers(&r, &clusters, k, MatchMode::Exact, &wn);
                let rows: Vec<Vec<f64>> = r.answers[..r.len().min(k)]
                    .iter()
                    .map(|a| {
                        clusters
                            .iter()
                            .map(|c| if c.answers.contains(a) { c.count as f64 } else { 0.0 })
                            .collect()
                    })
                    .collect();
                assert_eq!(report.earned, brute_force(&rows), "seed {seed} k {k}");
            }
        }
    }

    #[test]
    fn max_answers_is_not_monotone_in_k() {
        let wn = empty_wn();
        let clusters = vec![cluster(&["keys"], 10), cluster(&["phone"], 1)];
        let r = ranked(&["keys", "wallet"]);
        let at1 = score_max_answers(&r, &clusters, 1, MatchMode::Exact, &wn).score;
        let at2 = score_max_answers(&r, &clusters, 2, MatchMode::Exact, &wn).score;
        assert_eq!(at1, 1.0);
        assert!((at2 - 10.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn max_incorrect_hand_trace() {
        let wn = empty_wn();
        let clusters =
            vec![cluster(&["keys", "key"], 10), cluster(&["phone", "cell phone", "mobile"], 6), cluster(&["charger"], 3)];
        let r = ranked(&["phone", "wallet", "keys", "mobile", "charger"]);
        // phone → cluster 1 (+6); wallet misses (1); keys → cluster 0 (+10);
        // mobile only matches the consumed cluster 1 and misses (2).
        let k2 = score_max_incorrect(&r, &clusters, 2, MatchMode::Exact, &wn);
        assert_eq!((k2.earned, k2.attainable), (16.0, 19.0));
        assert_eq!(k2.matched_pairs, BTreeSet::from([(0, 1), (2, 0)]));
        // With a third miss allowed, charger → cluster 2 (+3).
        let k3 = score_max_incorrect(&r, &clusters, 3, MatchMode::Exact, &wn);
        assert_eq!(k3.score, 1.0);
        let first_miss = score_max_incorrect(&ranked(&["wallet", "keys"]), &clusters, 1, MatchMode::Exact, &wn);
        assert_eq!(first_miss.score, 0.0);
    }

    #[test]
    fn max_incorrect_prefers_larger_cluster() {
        let wn = empty_wn();
        let clusters = vec![cluster(&["x"], 2), cluster(&["x"], 7), cluster(&["x"], 7)];
        let r = score_max_incorrect(&ranked(&["x"]), &clusters, 1, MatchMode::Exact, &wn);
        assert_eq!(r.matched_pairs, BTreeSet::from([(0, 1)]));
    }

    fn canned_oracle() -> OracleBackend {
        let spec = OracleSpec {
            canned: vec![("keys".into(), 0.5), ("phone".into(), 0.3), ("charger".into(), 0.2)],
            ..OracleSpec::default()
        };
        OracleBackend::new(spec).unwrap()
    }

    #[test]
    fn sampled_counts_follow_weights() {
        let samples = collect_answers(&canned_oracle(), "One thing is", 100, &DecodingParams::sampling(0)).unwrap();
        assert_eq!(samples.len(), 100);
        for (answer, p) in [("keys", 0.5f64), ("phone", 0.3), ("charger", 0.2)] {
            let n = samples.iter().filter(|s| *s == answer).count() as f64;
            let sigma = (100.0 * p * (1.0 - p)).sqrt();
            assert!((n - 100.0 * p).abs() <= 3.0 * sigma, "{answer}: {n}");
        }
        let again = collect_answers(&canned_oracle(), "One thing is", 100, &DecodingParams::sampling(0)).unwrap();
        assert_eq!(samples, again);
    }

    #[test]
    fn greedy_oracle_repeats_itself_and_greedy_params_are_rejected() {
        let b = OracleBackend::new(OracleSpec::default()).unwrap();
        let mut params = DecodingParams::sampling(3);
        let s = collect_answers(&b, "x", 5, &params).unwrap();
        assert!(s.iter().all(|a| a == &s[0]));
        params.mode = DecodeMode::Greedy;
        assert!(matches!(collect_answers(&b, "x", 5, &params), Err(ProtoQAError::Config(_))));
    }

    #[test]
    fn replayed_samples_come_back_verbatim() {
        let b = canned_oracle();
        let mut lines = String::new();
        let prompt = "One thing you might forget in a hotel room is";
        for i in 0..5 {
            let p = DecodingParams::sampling(i);
            let out = b.generate(prompt, &p).unwrap();
            let entry = crate::lmclient::FixtureEntry::new(
                "oracle",
                "generate",
                &crate::lmclient::GenerateRequest::new(prompt, &p),
                &out,
            );
            lines.push_str(&serde_json::to_string(&entry).unwrap());
            lines.push('\n');
        }
        let replay = ReplayBackend::from_jsonl(&lines, "oracle").unwrap();
        assert_eq!(
            collect_answers(&replay, prompt, 5, &DecodingParams::sampling(0)).unwrap(),
            collect_answers(&b, prompt, 5, &DecodingParams::sampling(0)).unwrap()
        );
    }

    #[test]
    fn end_to_end_run_and_aggregate() {
        let b = canned_oracle();
        let items = vec![ProtoQAItem {
            id: "q1".into(),
            question: "Name something you might forget in a hotel room.".into(),
            clusters: vec![cluster(&["keys"], 10), cluster(&["phone"], 6), cluster(&["charger"], 3)],
        }];
        let config = ProtoQAConfig { samples: 50, ..ProtoQAConfig::default() };
        let results = run_protoqa(&b, &items, &[], &PromptStyle::default(), &config, &empty_wn()).unwrap();
        assert_eq!(results[0].prompt, "One thing you might forget in a hotel room is");
        assert_eq!(results[0].scores.len(), 14);
        let max10 = results[0].scores.iter().find(|s| s.metric == Metric::MaxAnswers && s.k == 10).unwrap();
        assert_eq!(max10.score, 1.0);
        let rows = aggregate(&results);
        assert_eq!(rows.len(), 14);
        let mut csv = Vec::new();
        write_aggregate_csv(&rows, &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("mode,metric,k,score,n_questions\n"));
    }

    proptest! {
        #[test]
        fn wordnet_mode_is_a_superset(answer in "[a-z]{1,6}( [a-z]{1,6})?", members in proptest::collection::btree_set("[a-z]{1,6}", 1..4)) {
            let wn = fixture_wordnet();
            let c = Cluster { answers: members, count: 1 };
            if matches(&answer, &c, MatchMode::Exact, &wn) {
                prop_assert!(matches(&answer, &c, MatchMode::WordNet, &wn));
            }
        }

        #[test]
        fn scores_are_bounded_and_saturate(seed in any::<u64>(), k in 1usize..12) {
            let wn = empty_wn();
            let (r, clusters) = random_case(seed, 7, 6);
            for mode in [MatchMode::Exact, MatchMode::WordNet] {
                let a = score_max_answers(&r, &clusters, k, mode, &wn);
                let i = score_max_incorrect(&r, &clusters, k, mode, &wn);
                prop_assert!((0.0..=1.0).contains(&a.score) && (0.0..=1.0).contains(&i.score));
            }
            if k >= r.len() {
                let at_len = score_max_answers(&r, &clusters, r.len(), MatchMode::Exact, &wn);
                let at_k = score_max_answers(&r, &clusters, k, MatchMode::Exact, &wn);
                prop_assert_eq!(at_k.earned, at_len.earned);
            }
        }
    }
}
