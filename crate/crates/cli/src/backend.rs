use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use conceptprobe::corpus::ConceptFormat;
use conceptprobe::harness::{open_backend, BackendConfig, DatasetConfig, ExperimentConfig, RunConfig};
use conceptprobe::lmclient::{Backend, CachedBackend, OracleSpec};
use conceptprobe::promptgen::Condition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Http,
    Replay,
    Oracle,
}

/// Where completions, scores and hidden states come from.
#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "oracle")]
    pub backend: BackendKind,
    /// Model server base URL (http backend).
    #[arg(long)]
    pub url: Option<String>,
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
    /// Recorded fixture (replay backend).
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Backend id the fixture was recorded under (replay backend).
    #[arg(long)]
    pub model_id: Option<String>,
    /// JSON oracle spec (oracle backend).
    #[arg(long)]
    pub oracle_spec: Option<PathBuf>,
    /// Probability that the oracle answers a known query correctly.
    #[arg(long)]
    pub oracle_correct_prob: Option<f64>,
    #[arg(long)]
    pub oracle_seed: Option<u64>,
    /// JSONL response cache wrapped around the backend.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

pub fn read_oracle_spec(path: &Path) -> Result<OracleSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing oracle spec {}", path.display()))
}

impl BackendArgs {
    fn config(&self, concepts: Option<(&Path, ConceptFormat)>) -> Result<BackendConfig> {
        Ok(match self.backend {
            BackendKind::Http => BackendConfig::Http {
                url: self.url.clone().context("--url is required for the http backend")?,
                timeout_secs: self.timeout_secs,
            },
            BackendKind::Replay => BackendConfig::Replay {
                path: self.replay.clone().context("--replay is required for the replay backend")?,
                model_id: self.model_id.clone().context("--model-id is required for the replay backend")?,
            },
            BackendKind::Oracle => {
                let mut spec = match &self.oracle_spec {
                    Some(p) => read_oracle_spec(p)?,
                    None => OracleSpec::default(),
                };
                if let Some(p) = self.oracle_correct_prob {
                    spec.correct_prob = p;
                }
                if let Some(s) = self.oracle_seed {
                    spec.seed = s;
                }
                if let Some(id) = &self.model_id {
                    spec.model_id = id.clone();
                }
                BackendConfig::Oracle { spec, concepts: concepts.map(|_| "concepts".to_string()) }
            }
        })
    }

    /// Open the backend. An oracle without an explicit spec learns the
    /// concepts in `concepts`, when given.
    pub fn open(&self, concepts: Option<(&Path, ConceptFormat)>) -> Result<Arc<dyn Backend>> {
        let knows = if self.oracle_spec.is_some() { None } else { concepts };
        let mut datasets = BTreeMap::new();
        if let Some((path, format)) = knows {
            datasets.insert("concepts".to_string(), DatasetConfig::Concepts { path: path.to_path_buf(), format });
        }
        let config = RunConfig {
            backend: self.config(knows)?,
            datasets,
            experiments: vec![ExperimentConfig::Probe {
                name: "unused".into(),
                concepts: String::new(),
                pool: None,
                condition: Condition::NL,
                n_demos: 0,
                runs: 1,
                base_seed: 0,
                permute_ratio: 0.0,
            }],
            output_dir: PathBuf::new(),
            cache: false,
            in_flight: 1,
            bootstrap_resamples: 1,
            style: Default::default(),
            allow_unstudied_n_demos: false,
            root: PathBuf::new(),
        };
        if let Some(p) = self.oracle_correct_prob {
            if !(0.0..=1.0).contains(&p) {
                bail!(conceptprobe::harness::HarnessError::ConfigInvalid {
                    field: "oracle_correct_prob".into(),
                    reason: format!("{p} outside [0, 1]"),
                });
            }
        }
        let backend = open_backend(&config)?;
        Ok(match &self.cache {
            Some(path) => Arc::new(CachedBackend::open(backend, path)?),
            None => backend,
        })
    }
}
