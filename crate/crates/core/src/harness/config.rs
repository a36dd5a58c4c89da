use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::corpus::ConceptFormat;
use crate::lmclient::OracleSpec;
use crate::promptgen::{Condition, PromptStyle};
use crate::protoqa::{MatchMode, MAX_ANSWERS_KS, MAX_INCORRECT_KS};

/// Range of demonstration counts accepted without `allow_unstudied_n_demos`.
pub const STUDIED_N_DEMOS: std::ops::RangeInclusive<usize> = 1..=48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Http {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    Replay {
        path: PathBuf,
        model_id: String,
    },
    /// Synthetic backend. With `concepts`, the oracle spec is extended so the
    /// oracle knows every concept of that dataset.
    Oracle {
        #[serde(default)]
        spec: OracleSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        concepts: Option<String>,
    },
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Concepts { path: PathBuf, format: ConceptFormat },
    Features {
        path: PathBuf,
        #[serde(default = "default_min_concepts")]
        min_concepts: usize,
    },
    Memberships { path: PathBuf },
    Subcategories { path: PathBuf },
    Mc { path: PathBuf },
    MinimalPairs { path: PathBuf },
    Protoqa { path: PathBuf },
    Wordnet { path: PathBuf },
}

fn default_min_concepts() -> usize {
    1
}

impl DatasetConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetConfig::Concepts { .. } => "concepts",
            DatasetConfig::Features { .. } => "features",
            DatasetConfig::Memberships { .. } => "memberships",
            DatasetConfig::Subcategories { .. } => "subcategories",
            DatasetConfig::Mc { .. } => "mc",
            DatasetConfig::MinimalPairs { .. } => "minimal_pairs",
            DatasetConfig::Protoqa { .. } => "protoqa",
            DatasetConfig::Wordnet { .. } => "wordnet",
        }
    }

    pub fn path(&self) -> &Path {
        match self {
            DatasetConfig::Concepts { path, .. }
            | DatasetConfig::Features { path, .. }
            | DatasetConfig::Memberships { path }
            | DatasetConfig::Subcategories { path }
            | DatasetConfig::Mc { path }
            | DatasetConfig::MinimalPairs { path }
            | DatasetConfig::Protoqa { path }
            | DatasetConfig::Wordnet { path } => path,
        }
    }
}

fn default_runs() -> usize {
    5
}

fn default_k() -> usize {
    10
}

fn default_l2() -> f64 {
    1.0
}

fn default_samples() -> usize {
    100
}

fn default_modes() -> Vec<MatchMode> {
    vec![MatchMode::Exact, MatchMode::WordNet]
}

fn default_max_answers_ks() -> Vec<usize> {
    MAX_ANSWERS_KS.to_vec()
}

fn default_max_incorrect_ks() -> Vec<usize> {
    MAX_INCORRECT_KS.to_vec()
}

fn default_dims() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentConfig {
    Probe {
        name: String,
        concepts: String,
        /// Demonstration pool; the query set when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pool: Option<String>,
        condition: Condition,
        #[serde(default)]
        n_demos: usize,
        #[serde(default = "default_runs")]
        runs: usize,
        #[serde(default)]
        base_seed: u64,
        #[serde(default)]
        permute_ratio: f64,
    },
    Reprs {
        name: String,
        concepts: String,
        condition: Condition,
        #[serde(default)]
        n_demos: usize,
        #[serde(default)]
        seed: u64,
    },
    Categorize {
        name: String,
        reprs: String,
        /// concept,category pairs; the concepts' own categories when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        memberships: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subcategories: Option<String>,
    },
    Decode {
        name: String,
        reprs: String,
        features: String,
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_l2")]
        l2: f64,
        #[serde(default)]
        shuffled_control: bool,
    },
    Project {
        name: String,
        reprs: String,
        #[serde(default = "default_dims")]
        dims: usize,
    },
    Mc {
        name: String,
        items: String,
        task: String,
    },
    MinimalPairs {
        name: String,
        pairs: String,
    },
    Protoqa {
        name: String,
        items: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        wordnet: Option<String>,
        /// Concept dataset to draw reverse-dictionary demonstrations from;
        /// natural-language prompts when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        demos: Option<String>,
        #[serde(default)]
        n_demos: usize,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default)]
        base_seed: u64,
        #[serde(default = "default_modes")]
        modes: Vec<MatchMode>,
        #[serde(default = "default_max_answers_ks")]
        max_answers_ks: Vec<usize>,
        #[serde(default = "default_max_incorrect_ks")]
        max_incorrect_ks: Vec<usize>,
    },
}

impl ExperimentConfig {
    pub fn name(&self) -> &str {
        match self {
            ExperimentConfig::Probe { name, .. }
            | ExperimentConfig::Reprs { name, .. }
            | ExperimentConfig::Categorize { name, .. }
            | ExperimentConfig::Decode { name, .. }
            | ExperimentConfig::Project { name, .. }
            | ExperimentConfig::Mc { name, .. }
            | ExperimentConfig::MinimalPairs { name, .. }
            | ExperimentConfig::Protoqa { name, .. } => name,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::Probe { .. } => "probe",
            ExperimentConfig::Reprs { .. } => "reprs",
            ExperimentConfig::Categorize { .. } => "categorize",
            ExperimentConfig::Decode { .. } => "decode",
            ExperimentConfig::Project { .. } => "project",
            ExperimentConfig::Mc { .. } => "mc",
            ExperimentConfig::MinimalPairs { .. } => "minimal_pairs",
            ExperimentConfig::Protoqa { .. } => "protoqa",
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_true() -> bool {
    true
}

fn default_in_flight() -> usize {
    4
}

fn default_resamples() -> usize {
    1000
}

/// Declarative description of a whole run.
///
/// Relative paths are resolved against [`RunConfig::root`], which
/// [`RunConfig::from_file`] sets to the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendConfig,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetConfig>,
    pub experiments: Vec<ExperimentConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub cache: bool,
    #[serde(default = "default_in_flight")]
    pub in_flight: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub style: PromptStyle,
    /// Accept demonstration counts outside 1..=48.
    #[serde(default)]
    pub allow_unstudied_n_demos: bool,
    #[serde(skip)]
    pub root: PathBuf,
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> HarnessError {
    HarnessError::ConfigInvalid { field: field.into(), reason: reason.into() }
}

impl RunConfig {
    pub fn from_json(text: &str, root: &Path) -> Result<Self, HarnessError> {
        let mut config: RunConfig = serde_json::from_str(text).map_err(|e| invalid("<config>", e.to_string()))?;
        config.root = root.to_path_buf();
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("<config>", format!("{}: {e}", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &root)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    /// Canonical serialization; the run digest is taken over these bytes.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("config serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json()))
    }

    pub fn dataset(&self, field: &str, name: &str, kind: &str) -> Result<&DatasetConfig, HarnessError> {
        let ds = self.datasets.get(name).ok_or_else(|| invalid(field, format!("unknown dataset `{name}`")))?;
        if ds.kind() != kind {
            return Err(invalid(field, format!("dataset `{name}` is {}, expected {kind}", ds.kind())));
        }
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.experiments.is_empty() {
            return Err(invalid("experiments", "no experiments declared"));
        }
        if self.in_flight == 0 {
            return Err(invalid("in_flight", "must be positive"));
        }
        if self.bootstrap_resamples == 0 {
            return Err(invalid("bootstrap_resamples", "must be positive"));
        }
        match &self.backend {
            BackendConfig::Oracle { concepts: Some(name), .. } => {
                self.dataset("backend.concepts", name, "concepts")?;
            }
            BackendConfig::Http { url, .. } if url.is_empty() => return Err(invalid("backend.url", "empty")),
            _ => {}
        }
        for (name, ds) in &self.datasets {
            let path = self.resolve(ds.path());
            if !path.exists() {
                return Err(invalid(format!("datasets.{name}.path"), format!("{} does not exist", path.display())));
            }
        }
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut reprs: BTreeSet<&str> = BTreeSet::new();
        for (i, exp) in self.experiments.iter().enumerate() {
            let at = |f: &str| format!("experiments[{i}].{f}");
            let name = exp.name();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(invalid(at("name"), format!("`{name}` must be nonempty [A-Za-z0-9_-]")));
            }
            if !seen.insert(name) {
                return Err(invalid(at("name"), format!("duplicate experiment `{name}`")));
            }
            let need_reprs = |r: &str| {
                if reprs.contains(r) {
                    Ok(())
                } else {
                    Err(invalid(at("reprs"), format!("`{r}` is not an earlier reprs experiment")))
                }
            };
            match exp {
                ExperimentConfig::Probe { concepts, pool, condition, n_demos, runs, permute_ratio, .. } => {
                    self.dataset(&at("concepts"), concepts, "concepts")?;
                    if let Some(p) = pool {
                        self.dataset(&at("pool"), p, "concepts")?;
                    }
                    self.check_demos(&at("n_demos"), *condition, *n_demos)?;
                    if *runs == 0 {
                        return Err(invalid(at("runs"), "must be positive"));
                    }
                    if !(0.0..=1.0).contains(permute_ratio) {
                        return Err(invalid(at("permute_ratio"), "must lie in [0, 1]"));
                    }
                }
                ExperimentConfig::Reprs { concepts, condition, n_demos, .. } => {
                    self.dataset(&at("concepts"), concepts, "concepts")?;
                    if *condition == Condition::Rand {
                        return Err(invalid(at("condition"), "rand has no summary representation"));
                    }
                    self.check_demos(&at("n_demos"), *condition, *n_demos)?;
                    reprs.insert(name);
                }
                ExperimentConfig::Categorize { reprs: r, memberships, subcategories, .. } => {
                    need_reprs(r)?;
                    if let Some(m) = memberships {
                        self.dataset(&at("memberships"), m, "memberships")?;
                    }
                    if let Some(s) = subcategories {
                        self.dataset(&at("subcategories"), s, "subcategories")?;
                    }
                }
                ExperimentConfig::Decode { reprs: r, features, k, l2, .. } => {
                    need_reprs(r)?;
                    self.dataset(&at("features"), features, "features")?;
                    if *k < 2 {
                        return Err(invalid(at("k"), "need at least 2 folds"));
                    }
                    if !(l2.is_finite() && *l2 >= 0.0) {
                        return Err(invalid(at("l2"), "must be finite and non-negative"));
                    }
                }
                ExperimentConfig::Project { reprs: r, dims, .. } => {
                    need_reprs(r)?;
                    if *dims == 0 {
                        return Err(invalid(at("dims"), "must be positive"));
                    }
                }
                ExperimentConfig::Mc { items, task, .. } => {
                    self.dataset(&at("items"), items, "mc")?;
                    if crate::probe::template_for(task).is_none() {
                        return Err(invalid(at("task"), format!("no template for task `{task}`")));
                    }
                }
                ExperimentConfig::MinimalPairs { pairs, .. } => {
                    self.dataset(&at("pairs"), pairs, "minimal_pairs")?;
                }
                ExperimentConfig::Protoqa { items, wordnet, demos, n_demos, samples, modes, max_answers_ks, max_incorrect_ks, .. } => {
                    self.dataset(&at("items"), items, "protoqa")?;
                    if let Some(w) = wordnet {
                        self.dataset(&at("wordnet"), w, "wordnet")?;
                    } else if modes.contains(&MatchMode::WordNet) {
                        return Err(invalid(at("wordnet"), "wordnet matching needs a wordnet dataset"));
                    }
                    match demos {
                        Some(d) => {
                            self.dataset(&at("demos"), d, "concepts")?;
                            self.check_demos(&at("n_demos"), Condition::Demo, *n_demos)?;
                        }
                        None if *n_demos != 0 => return Err(invalid(at("n_demos"), "demonstrations need a demos dataset")),
                        None => {}
                    }
                    if *samples == 0 {
                        return Err(invalid(at("samples"), "must be positive"));
                    }
                    if modes.is_empty() {
                        return Err(invalid(at("modes"), "no match modes"));
                    }
                    if max_answers_ks.iter().chain(max_incorrect_ks).any(|k| *k == 0) {
                        return Err(invalid(at("k"), "k values must be positive"));
                    }
                }
            }
        }
        Ok(())
    }

    fn check_demos(&self, field: &str, condition: Condition, n: usize) -> Result<(), HarnessError> {
        if !condition.takes_demonstrations() {
            return if n == 0 { Ok(()) } else { Err(invalid(field, format!("{condition} takes no demonstrations"))) };
        }
        if n == 0 {
            return Err(invalid(field, format!("{condition} needs demonstrations")));
        }
        if !STUDIED_N_DEMOS.contains(&n) && !self.allow_unstudied_n_demos {
            return Err(invalid(field, format!("{n} is outside 1..=48; set allow_unstudied_n_demos to accept it")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) {
        std::fs::write(dir.join(name), text).unwrap();
    }

    fn base(dir: &Path) -> String {
        write(dir, "c.jsonl", "");
        r#"{
            "backend": {"kind": "oracle", "concepts": "c"},
            "datasets": {"c": {"kind": "concepts", "path": "c.jsonl", "format": "jsonl"}},
            "experiments": [EXP]
        }"#
        .to_string()
    }

    fn parse(dir: &Path, exp: &str) -> Result<RunConfig, HarnessError> {
        let c = RunConfig::from_json(&base(dir).replace("EXP", exp), dir)?;
        c.validate()?;
        Ok(c)
    }

    fn field_of(r: Result<RunConfig, HarnessError>) -> String {
        match r {
            Err(HarnessError::ConfigInvalid { field, .. }) => field,
            other => panic!("expected ConfigInvalid, got {other:?}"),
        }
    }

    #[test]
    fn defaults_fill_in() {
        let dir = tempfile::tempdir().unwrap();
        let c = parse(dir.path(), r#"{"kind": "probe", "name": "p", "concepts": "c", "condition": "demo", "n_demos": 24}"#).unwrap();
        assert!(c.cache);
        assert_eq!(c.in_flight, 4);
        assert_eq!(c.output_dir, PathBuf::from("runs"));
        match &c.experiments[0] {
            ExperimentConfig::Probe { runs, .. } => assert_eq!(*runs, 5),
            _ => unreachable!(),
        }
    }

    #[test]
    fn invalid_fields_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        assert_eq!(
            field_of(parse(d, r#"{"kind": "probe", "name": "p", "concepts": "x", "condition": "nl"}"#)),
            "experiments[0].concepts"
        );
        assert_eq!(
            field_of(parse(d, r#"{"kind": "probe", "name": "p", "concepts": "c", "condition": "demo", "n_demos": 64}"#)),
            "experiments[0].n_demos"
        );
        assert_eq!(
            field_of(parse(d, r#"{"kind": "probe", "name": "p", "concepts": "c", "condition": "nl", "n_demos": 3}"#)),
            "experiments[0].n_demos"
        );
        assert_eq!(
            field_of(parse(d, r#"{"kind": "categorize", "name": "k", "reprs": "r"}"#)),
            "experiments[0].reprs"
        );
        assert_eq!(field_of(parse(d, r#"{"kind": "mc", "name": "m", "items": "c", "task": "csqa"}"#)), "experiments[0].items");
        assert_eq!(field_of(parse(d, r#"{"kind": "unknown", "name": "m"}"#)), "<config>");
    }

    #[test]
    fn unstudied_demo_counts_need_the_flag() {
        let dir = tempfile::tempdir().unwrap();
        let text = base(dir.path())
            .replace("EXP", r#"{"kind": "probe", "name": "p", "concepts": "c", "condition": "demo", "n_demos": 64}"#)
            .replace("\"experiments\"", "\"allow_unstudied_n_demos\": true, \"experiments\"");
        RunConfig::from_json(&text, dir.path()).unwrap().validate().unwrap();
    }

    #[test]
    fn digest_tracks_serialized_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = parse(dir.path(), r#"{"kind": "probe", "name": "p", "concepts": "c", "condition": "nl"}"#).unwrap();
        let spaced = parse(dir.path(), r#"{ "kind":"probe","name":"p","concepts":"c","condition":"nl" }"#).unwrap();
        assert_eq!(a.digest(), spaced.digest());
        assert_eq!(a.digest(), hex::encode(Sha256::digest(a.to_canonical_json())));
        let b = parse(dir.path(), r#"{"kind": "probe", "name": "p", "concepts": "c", "condition": "nl", "base_seed": 1}"#).unwrap();
        assert_ne!(a.digest(), b.digest());
    }
}
