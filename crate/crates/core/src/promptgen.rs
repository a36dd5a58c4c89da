//! Seeded prompt construction for every experimental condition.
//!
//! All randomness flows from [`SeededRng`] streams derived from the caller's
//! seed and a fixed label per operation, so outputs are reproducible across
//! processes and reimplementations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Concept, ConceptSet};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("asked for {requested} demonstrations but only {available} concepts are eligible")]
    NotEnoughConcepts { requested: usize, available: usize },
    #[error("vocabulary has {available} words outside the demonstrations, need {needed}")]
    VocabTooSmall { needed: usize, available: usize },
    #[error("condition {condition} does not accept {n} demonstrations")]
    ConditionMismatch { condition: Condition, n: usize },
    #[error("dataset permutation needs at least two concepts")]
    TooFewConcepts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "demo")]
    Demo,
    #[serde(rename = "nl")]
    NL,
    #[serde(rename = "mis")]
    Mis,
    #[serde(rename = "rand")]
    Rand,
    #[serde(rename = "w2w")]
    W2W,
    #[serde(rename = "word")]
    WordOnly,
    #[serde(rename = "description")]
    DescriptionOnly,
}

impl Condition {
    pub const ALL: [Condition; 7] = [
        Condition::Demo,
        Condition::NL,
        Condition::Mis,
        Condition::Rand,
        Condition::W2W,
        Condition::WordOnly,
        Condition::DescriptionOnly,
    ];

    pub fn takes_demonstrations(self) -> bool {
        matches!(self, Condition::Demo | Condition::Mis | Condition::Rand | Condition::W2W)
    }

    /// Whether the rendered text ends at the query delimiter.
    pub fn ends_with_delimiter(self) -> bool {
        self.takes_demonstrations()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Demo => "demo",
            Condition::NL => "nl",
            Condition::Mis => "mis",
            Condition::Rand => "rand",
            Condition::W2W => "w2w",
            Condition::WordOnly => "word",
            Condition::DescriptionOnly => "description",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Condition::Demo => "Demo",
            Condition::NL => "NL",
            Condition::Mis => "Mis",
            Condition::Rand => "Rand",
            Condition::W2W => "W2W",
            Condition::WordOnly => "Word",
            Condition::DescriptionOnly => "Descr",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_lowercase();
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == lower || c.label().to_lowercase() == lower)
            .ok_or_else(|| format!("unknown condition `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoPair {
    pub cue: String,
    pub target: String,
}

/// Delimiter and natural-language template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptStyle {
    pub delimiter: String,
    pub nl_suffix: String,
}

pub const DEFAULT_DELIMITER: &str = "⇒";

impl Default for PromptStyle {
    fn default() -> Self {
        Self { delimiter: DEFAULT_DELIMITER.into(), nl_suffix: "can be called as".into() }
    }
}

impl PromptStyle {
    pub fn ascii() -> Self {
        Self { delimiter: "=>".into(), ..Self::default() }
    }

    /// The query-position marker: one space then the delimiter.
    pub fn query_marker(&self) -> String {
        format!(" {}", self.delimiter)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub query_id: String,
    pub condition: Condition,
    pub seed: u64,
    pub n_demos: usize,
    /// Byte index of the final delimiter marker, when the text ends with one.
    pub marker_offset: Option<usize>,
}

impl RenderedPrompt {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Draw `n` distinct concepts without replacement, never `exclude_id`.
pub fn sample_demo_concepts<'a>(
    set: &'a ConceptSet,
    n: usize,
    seed: u64,
    exclude_id: Option<&str>,
) -> Result<Vec<&'a Concept>, PromptError> {
    let pool: Vec<&Concept> = set.iter().filter(|c| Some(c.id.as_str()) != exclude_id).collect();
    if n > pool.len() {
        return Err(PromptError::NotEnoughConcepts { requested: n, available: pool.len() });
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    SeededRng::derived(seed, "demonstrations").shuffle(&mut order);
    Ok(order[..n].iter().map(|&i| pool[i]).collect())
}

/// Draw `n` distinct concepts as description ⇒ word pairs.
pub fn sample_demonstrations(
    set: &ConceptSet,
    n: usize,
    seed: u64,
    exclude_id: Option<&str>,
) -> Result<Vec<DemoPair>, PromptError> {
    Ok(sample_demo_concepts(set, n, seed, exclude_id)?
        .into_iter()
        .map(|c| DemoPair { cue: c.description.clone(), target: c.lemma.clone() })
        .collect())
}

/// Identity pairs "word ⇒ word" built from the targets of `pairs`.
pub fn word_pairs(pairs: &[DemoPair]) -> Vec<DemoPair> {
    pairs.iter().map(|p| DemoPair { cue: p.target.clone(), target: p.target.clone() }).collect()
}

/// Replace every target with a distinct word that is not one of the
/// original targets.
pub fn corrupt_mis(pairs: &[DemoPair], vocab: &BTreeSet<String>, seed: u64) -> Result<Vec<DemoPair>, PromptError> {
    let originals: BTreeSet<&str> = pairs.iter().map(|p| p.target.as_str()).collect();
    let mut pool: Vec<&String> = vocab.iter().filter(|w| !originals.contains(w.as_str())).collect();
    if pool.len() < pairs.len() {
        return Err(PromptError::VocabTooSmall { needed: pairs.len(), available: pool.len() });
    }
    SeededRng::derived(seed, "mis").shuffle(&mut pool);
    Ok(pairs.iter().zip(pool).map(|(p, w)| DemoPair { cue: p.cue.clone(), target: w.clone() }).collect())
}

/// A seeded reassignment of lemmas to concept ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPermutation {
    pub targets: BTreeMap<String, String>,
    /// `source[i]` is the index (in id order) whose lemma concept `i` receives.
    pub source: Vec<usize>,
    pub fixed_points: usize,
}

impl DatasetPermutation {
    pub fn target(&self, id: &str) -> Option<&str> {
        self.targets.get(id).map(String::as_str)
    }
}

pub fn permute_dataset(set: &ConceptSet, seed: u64) -> Result<DatasetPermutation, PromptError> {
    if set.len() < 2 {
        return Err(PromptError::TooFewConcepts);
    }
    let mut source: Vec<usize> = (0..set.len()).collect();
    SeededRng::derived(seed, "rand").shuffle(&mut source);
    let concepts = set.concepts();
    let targets = concepts.iter().zip(&source).map(|(c, &s)| (c.id.clone(), concepts[s].lemma.clone())).collect();
    let fixed_points = source.iter().enumerate().filter(|(i, s)| i == *s).count();
    Ok(DatasetPermutation { targets, source, fixed_points })
}

fn one_line(s: &str) -> std::borrow::Cow<'_, str> {
    if s.contains(['\n', '\r']) {
        s.split(['\n', '\r']).filter(|p| !p.is_empty()).collect::<Vec<_>>().join(" ").into()
    } else {
        s.into()
    }
}

pub fn render_prompt(pairs: &[DemoPair], query: &Concept, condition: Condition) -> Result<RenderedPrompt, PromptError> {
    render_prompt_styled(pairs, query, condition, &PromptStyle::default())
}

/// Render a prompt.
///
/// Demonstration lines are `"{cue} ⇒ {target}"` joined by newlines; the
/// query line follows on its own line and ends at `" ⇒"` with no trailing
/// space. Embedded newlines in cues and targets are folded to spaces so the
/// line count always equals the demonstration count.
pub fn render_prompt_styled(
    pairs: &[DemoPair],
    query: &Concept,
    condition: Condition,
    style: &PromptStyle,
) -> Result<RenderedPrompt, PromptError> {
    if pairs.is_empty() == condition.takes_demonstrations() {
        return Err(PromptError::ConditionMismatch { condition, n: pairs.len() });
    }
    let marker = style.query_marker();
    let mut text = String::new();
    for p in pairs {
        text.push_str(&one_line(&p.cue));
        text.push_str(&marker);
        text.push(' ');
        text.push_str(&one_line(&p.target));
        text.push('\n');
    }
    let description = one_line(&query.description);
    let lemma = one_line(&query.lemma);
    let mut marker_offset = None;
    match condition {
        Condition::Demo | Condition::Mis | Condition::Rand | Condition::W2W => {
            text.push_str(if condition == Condition::W2W { &lemma } else { &description });
            marker_offset = Some(text.len());
            text.push_str(&marker);
        }
        Condition::NL => {
            text.push_str(&description);
            text.push(' ');
            text.push_str(&style.nl_suffix);
        }
        Condition::WordOnly => text.push_str(&lemma),
        Condition::DescriptionOnly => text.push_str(&description),
    }
    Ok(RenderedPrompt {
        text,
        query_id: query.id.clone(),
        condition,
        seed: 0,
        n_demos: pairs.len(),
        marker_offset,
    })
}

/// Shuffle a fraction of the words of `description` among their own
/// positions.
///
/// `⌈ratio·W⌉` of the `W` whitespace-separated tokens are chosen with the
/// seeded generator and permuted among the chosen slots; all other tokens
/// and all whitespace stay where they are.
pub fn permute_words(description: &str, ratio: f64, seed: u64) -> String {
    let spans: Vec<(usize, usize)> = {
        let base = description.as_ptr() as usize;
        description.split_whitespace().map(|w| (w.as_ptr() as usize - base, w.len())).collect()
    };
    let w = spans.len();
    let take = ((ratio.clamp(0.0, 1.0) * w as f64) - 1e-9).ceil().max(0.0) as usize;
    if take < 2 {
        return description.to_string();
    }
    let mut rng = SeededRng::derived(seed, "permute_words");
    let mut positions: Vec<usize> = (0..w).collect();
    rng.shuffle(&mut positions);
    let mut chosen = positions[..take.min(w)].to_vec();
    chosen.sort_unstable();
    let mut words: Vec<&str> = chosen.iter().map(|&i| &description[spans[i].0..spans[i].0 + spans[i].1]).collect();
    rng.shuffle(&mut words);
    let mut replacement: Vec<Option<&str>> = vec![None; w];
    for (&slot, word) in chosen.iter().zip(words) {
        replacement[slot] = Some(word);
    }
    let mut out = String::with_capacity(description.len());
    let mut cursor = 0;
    for (i, &(start, len)) in spans.iter().enumerate() {
        out.push_str(&description[cursor..start]);
        out.push_str(replacement[i].unwrap_or(&description[start..start + len]));
        cursor = start + len;
    }
    out.push_str(&description[cursor..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture(n: usize) -> ConceptSet {
        let concepts = (0..n).map(|i| Concept::new(&format!("c{i:03}"), &format!("word{i}"), &format!("description number {i}"))).collect();
        ConceptSet::new("fixture", concepts).unwrap()
    }

    fn crepe() -> Concept {
        Concept::new("crepe", "crepe", "a small very thin pancake")
    }

    fn tokens(s: &str) -> Vec<&str> {
        let mut t: Vec<&str> = s.split_whitespace().collect();
        t.sort_unstable();
        t
    }

    #[test]
    fn zero_demonstrations() {
        assert!(sample_demonstrations(&fixture(5), 0, 1, None).unwrap().is_empty());
    }

    #[test]
    fn sampling_is_deterministic_and_excludes() {
        let set = fixture(30);
        let a = sample_demonstrations(&set, 24, 7, None).unwrap();
        assert_eq!(a, sample_demonstrations(&set, 24, 7, None).unwrap());
        let distinct: BTreeSet<_> = a.iter().map(|p| &p.target).collect();
        assert_eq!(distinct.len(), 24);
        for seed in 0..50 {
            let b = sample_demonstrations(&set, 29, seed, Some("c004")).unwrap();
            assert!(b.iter().all(|p| p.target != "word4"));
        }
        assert_eq!(
            sample_demonstrations(&set, 30, 0, Some("c000")),
            Err(PromptError::NotEnoughConcepts { requested: 30, available: 29 })
        );
    }

    #[test]
    fn sampling_golden_triple() {
        let got: Vec<String> = sample_demonstrations(&fixture(100), 3, 42, None).unwrap().into_iter().map(|p| p.target).collect();
        assert_eq!(got, GOLDEN_DEMOS);
    }

    const GOLDEN_DEMOS: [&str; 3] = ["word87", "word46", "word59"];

    #[test]
    fn mis_single_legal_choice() {
        let pairs = vec![DemoPair { cue: "d1".into(), target: "dog".into() }];
        let vocab = BTreeSet::from(["dog".to_string(), "cat".into()]);
        assert_eq!(corrupt_mis(&pairs, &vocab, 9).unwrap()[0].target, "cat");
        assert!(corrupt_mis(&[], &vocab, 9).unwrap().is_empty());
        let vocab = BTreeSet::from(["dog".to_string()]);
        assert_eq!(corrupt_mis(&pairs, &vocab, 9), Err(PromptError::VocabTooSmall { needed: 1, available: 0 }));
    }

    #[test]
    fn mis_golden_replacements() {
        let set = fixture(100);
        let pairs = sample_demonstrations(&set, 24, 1, None).unwrap();
        let vocab: BTreeSet<String> = set.iter().map(|c| c.lemma.clone()).collect();
        let got: Vec<String> = corrupt_mis(&pairs, &vocab, 1).unwrap().into_iter().map(|p| p.target).collect();
        assert_eq!(got, GOLDEN_MIS);
    }

    const GOLDEN_MIS: [&str; 24] = [
        "word33", "word5", "word10", "word71", "word85", "word18", "word69", "word95", "word77", "word45", "word35", "word98", "word64", "word93", "word55", "word12", "word11", "word43", "word90", "word31", "word54", "word62", "word80", "word52",
    ];

    #[test]
    fn two_concept_permutation() {
        let set = fixture(2);
        let p = permute_dataset(&set, 5).unwrap();
        assert_eq!(p, permute_dataset(&set, 5).unwrap());
        assert!(p.fixed_points == 0 || p.fixed_points == 2);
        assert!(matches!(permute_dataset(&fixture(1), 0), Err(PromptError::TooFewConcepts)));
    }

    #[test]
    fn permutation_composes_with_inverse() {
        let p = permute_dataset(&fixture(40), 8).unwrap();
        let mut inverse = vec![0; p.source.len()];
        for (i, &s) in p.source.iter().enumerate() {
            inverse[s] = i;
        }
        for i in 0..p.source.len() {
            assert_eq!(p.source[inverse[i]], i);
        }
    }

    #[test]
    fn permutation_golden() {
        let p = permute_dataset(&fixture(10), 3).unwrap();
        assert_eq!(p.source, GOLDEN_PERM);
    }

    const GOLDEN_PERM: [usize; 10] = [0, 3, 6, 7, 4, 5, 8, 2, 1, 9];

    #[test]
    fn render_demo_prompt() {
        let pairs = vec![DemoPair { cue: "A domesticated descendant of the wolf.".into(), target: "dog".into() }];
        let p = render_prompt(&pairs, &crepe(), Condition::Demo).unwrap();
        assert_eq!(p.text, "A domesticated descendant of the wolf. ⇒ dog\na small very thin pancake ⇒");
        assert_eq!(p.marker_offset, Some(p.text.len() - " ⇒".len()));
        assert_eq!(&p.text[p.marker_offset.unwrap()..], " ⇒");
        assert_eq!(p.n_demos, 1);
    }

    #[test]
    fn render_baselines() {
        assert_eq!(render_prompt(&[], &crepe(), Condition::NL).unwrap().text, "a small very thin pancake can be called as");
        assert_eq!(render_prompt(&[], &crepe(), Condition::WordOnly).unwrap().text, "crepe");
        assert_eq!(render_prompt(&[], &crepe(), Condition::DescriptionOnly).unwrap().text, "a small very thin pancake");
        let w = word_pairs(&[DemoPair { cue: "x".into(), target: "dog".into() }]);
        assert_eq!(render_prompt(&w, &crepe(), Condition::W2W).unwrap().text, "dog ⇒ dog\ncrepe ⇒");
        assert_eq!(
            render_prompt(&[], &crepe(), Condition::Demo),
            Err(PromptError::ConditionMismatch { condition: Condition::Demo, n: 0 })
        );
        assert!(render_prompt(&w, &crepe(), Condition::NL).is_err());
    }

    #[test]
    fn ascii_style() {
        let pairs = vec![DemoPair { cue: "c".into(), target: "t".into() }];
        let p = render_prompt_styled(&pairs, &crepe(), Condition::Demo, &PromptStyle::ascii()).unwrap();
        assert_eq!(p.text, "c => t\na small very thin pancake =>");
    }

    #[test]
    fn permute_words_edge_cases() {
        assert_eq!(permute_words("a  small\tthin pancake", 0.0, 3), "a  small\tthin pancake");
        let swapped = (0..64).map(|s| permute_words("a b", 1.0, s)).collect::<BTreeSet<_>>();
        assert_eq!(swapped, BTreeSet::from(["a b".to_string(), "b a".to_string()]));
        assert_eq!(permute_words("a b", 1.0, SWAP_SEED), "b a");
    }

    const SWAP_SEED: u64 = 3;

    #[test]
    fn permute_words_golden() {
        let s = "one two three four five six seven eight nine ten";
        let out = permute_words(s, 0.6, 5);
        assert_eq!(tokens(&out), tokens(s));
        let moved = out.split(' ').zip(s.split(' ')).filter(|(a, b)| a != b).count();
        assert!(moved <= 6);
        assert_eq!(out, GOLDEN_PERMUTED);
    }

    const GOLDEN_PERMUTED: &str = "one two four three five six seven eight nine ten";

    proptest! {
        #[test]
        fn permute_words_preserves_multiset(s in "[a-z ]{0,60}", ratio in 0.0f64..=1.0, seed in any::<u64>()) {
            let out = permute_words(&s, ratio, seed);
            prop_assert_eq!(tokens(&out), tokens(&s));
            prop_assert_eq!(permute_words(&s, 0.0, seed), s);
        }

        #[test]
        fn mis_never_reuses_demo_targets(n in 0usize..20, seed in any::<u64>()) {
            let set = fixture(60);
            let pairs = sample_demonstrations(&set, n, seed, None).unwrap();
            let vocab: BTreeSet<String> = set.iter().map(|c| c.lemma.clone()).collect();
            let out = corrupt_mis(&pairs, &vocab, seed).unwrap();
            let original: BTreeSet<&String> = pairs.iter().map(|p| &p.target).collect();
            let replaced: BTreeSet<&String> = out.iter().map(|p| &p.target).collect();
            prop_assert!(original.is_disjoint(&replaced));
            prop_assert_eq!(replaced.len(), n);
        }

        #[test]
        fn newline_count_equals_demo_count(n in 1usize..30, seed in any::<u64>()) {
            let set = fixture(40);
            let pairs = sample_demonstrations(&set, n, seed, Some("c000")).unwrap();
            let p = render_prompt(&pairs, set.get("c000").unwrap(), Condition::Demo).unwrap();
            prop_assert_eq!(p.text.matches('\n').count(), n);
            prop_assert!(p.text.ends_with(" ⇒"));
            prop_assert_eq!(&p, &render_prompt(&pairs, set.get("c000").unwrap(), Condition::Demo).unwrap());
        }
    }
}
