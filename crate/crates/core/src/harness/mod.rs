//! Config-driven orchestration: run manifests, the on-disk layout of a run,
//! cross-model correlation and report export.

mod config;
mod report;
mod run;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::lmclient::LmError;
use crate::probe::ProbeError;
use crate::protoqa::ProtoQAError;
use crate::represent::ReprError;

pub use config::{BackendConfig, DatasetConfig, ExperimentConfig, RunConfig, STUDIED_N_DEMOS};
pub use report::{
    correlate_models, correlate_with, export_report, load_model_scores, load_task_scores, write_correlation_csv,
    Correlation, CorrelationReport, ReportFormat,
};
pub use run::{
    load_manifest, open_backend, read_jsonl, run, CacheStats, ExperimentEntry, ExperimentStatus, RunManifest, RunOutcome,
    MANIFEST_FILE, RECORDS_FILE,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config field {field}: {reason}")]
    ConfigInvalid { field: String, reason: String },
    #[error(transparent)]
    Backend(#[from] LmError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    ProtoQA(#[from] ProtoQAError),
    #[error("need at least 3 models in common, found {found}")]
    TooFewModels { found: usize },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Whether the failure came from the model backend rather than from
    /// configuration or data.
    pub fn is_backend(&self) -> bool {
        fn probe(e: &ProbeError) -> bool {
            matches!(e, ProbeError::Backend { .. } | ProbeError::Lm(_))
        }
        match self {
            HarnessError::Backend(_) => true,
            HarnessError::Probe(e) => probe(e),
            HarnessError::Repr(ReprError::Lm(_)) => true,
            HarnessError::Repr(ReprError::Probe(e)) => probe(e),
            HarnessError::ProtoQA(ProtoQAError::Lm(_)) => true,
            _ => false,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::ConfigInvalid { .. })
    }
}
