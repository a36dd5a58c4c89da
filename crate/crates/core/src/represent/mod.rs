//! Summary representations: extraction from a backend, storage, and the
//! analyses run on them (categorization, feature decoding, projection).

mod categorize;
mod logistic;
mod pca;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ConceptSet, CorpusError, EmbeddingTable};
use crate::lmclient::{Backend, LmError};
use crate::probe::{plan_prompts, ProbeConfig, ProbeError};
use crate::promptgen::Condition;

pub use categorize::{
    filter_categories, filter_categories_with, load_memberships, load_subcategory_pairs, nearest_centroid_loocv,
    write_categorization_csv, CategorizationResult, CategoryAssignment, MIN_CATEGORY_SIZE,
};
pub use logistic::{
    decode_feature, decode_features, fold_assignment, logistic_objective, shuffle_labels, train_logistic,
    write_decode_csv, DecodeOptions, DecodeResult, FoldScore, LogisticModel, LogisticOptions,
};
pub use pca::{pca_project, Projection};

#[derive(Debug, Error)]
pub enum ReprError {
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("condition {0} has no summary representation")]
    UnsupportedCondition(Condition),
    #[error("no representation for concept {0}")]
    MissingRow(String),
    #[error("representation for {0} is the zero vector")]
    ZeroVector(String),
    #[error("category {0} has fewer than two members")]
    DegenerateCategory(String),
    #[error("training labels contain a single class")]
    OneClassOnly,
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("feature {feature}: {positives} positives and {negatives} negatives, need {k} of each")]
    TooFewExamples { feature: String, positives: usize, negatives: usize, k: usize },
    #[error("need more than {dims} rows to project, have {rows}")]
    TooFewRows { rows: usize, dims: usize },
    #[error("malformed dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Final-position hidden vectors for a concept set under one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprDataset {
    pub table: EmbeddingTable,
    pub condition: Condition,
    pub n_demos: usize,
    pub model_id: String,
    pub run_seed: u64,
}

/// Collect the hidden vector at the last prompt position for every concept.
///
/// Prompts are rendered exactly as in a probe run with seed `seed`, so
/// Demo/Mis/W2W prompts end at the query delimiter and DescriptionOnly
/// prompts end at the last character of the description.
pub fn extract_reprs(
    backend: &dyn Backend,
    set: &ConceptSet,
    condition: Condition,
    n_demos: usize,
    seed: u64,
) -> Result<ReprDataset, ReprError> {
    if condition == Condition::Rand {
        return Err(ReprError::UnsupportedCondition(condition));
    }
    let config = ProbeConfig { runs: 1, base_seed: seed, ..ProbeConfig::new(condition, n_demos) };
    config.validate()?;
    let trials = plan_prompts(set, set, &config, seed)?;
    let mut table = EmbeddingTable::new(backend.descriptor().hidden_size);
    for (row, t) in trials.iter().enumerate() {
        let prompt = if condition == Condition::DescriptionOnly { t.prompt.trim_end() } else { t.prompt.as_str() };
        let h = backend.final_hidden(prompt)?;
        if table.is_empty() && table.dim() != h.values.len() {
            table = EmbeddingTable::new(h.values.len());
        }
        if h.values.iter().all(|v| *v == 0.0) {
            return Err(ReprError::ZeroVector(t.concept_id.clone()));
        }
        table.insert(&t.concept_id, h.values, row)?;
    }
    Ok(ReprDataset { table, condition, n_demos: config.n_demos, model_id: backend.descriptor().id.clone(), run_seed: seed })
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    ids: Vec<String>,
    dim: usize,
    condition: Condition,
    n_demos: usize,
    model_id: String,
    run_seed: u64,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

fn sidecar_paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("f32"), base.with_extension("json"))
}

/// Write `base.f32` (little-endian f32, row-major, rows in id order) and
/// `base.json` (ids, dim, provenance). Returns the two paths.
pub fn write_repr_dataset(ds: &ReprDataset, base: &Path) -> Result<(PathBuf, PathBuf), ReprError> {
    let (bin, json) = sidecar_paths(base);
    if let Some(dir) = base.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(&bin)?);
    for row in ds.table.rows().values() {
        for v in row {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    let sidecar = Sidecar {
        ids: ds.table.rows().keys().cloned().collect(),
        dim: ds.table.dim(),
        condition: ds.condition,
        n_demos: ds.n_demos,
        model_id: ds.model_id.clone(),
        run_seed: ds.run_seed,
        meta: ds.table.meta.clone(),
    };
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| ReprError::Format(e.to_string()))?;
    std::fs::write(&json, text + "\n")?;
    Ok((bin, json))
}

pub fn read_repr_dataset(base: &Path) -> Result<ReprDataset, ReprError> {
    let (bin, json) = sidecar_paths(base);
    let sidecar: Sidecar =
        serde_json::from_str(&std::fs::read_to_string(&json)?).map_err(|e| ReprError::Format(format!("{json:?}: {e}")))?;
    let mut bytes = Vec::new();
    BufReader::new(File::open(&bin)?).read_to_end(&mut bytes)?;
    let expected = sidecar.ids.len() * sidecar.dim * 4;
    if bytes.len() != expected {
        return Err(ReprError::Format(format!("{bin:?} has {} bytes, sidecar implies {expected}", bytes.len())));
    }
    let mut table = EmbeddingTable::new(sidecar.dim);
    table.meta = sidecar.meta;
    let floats: Vec<f64> =
        bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    for (row, id) in sidecar.ids.iter().enumerate() {
        let start = row * sidecar.dim;
        table.insert(id, floats[start..start + sidecar.dim].to_vec(), row)?;
    }
    Ok(ReprDataset {
        table,
        condition: sidecar.condition,
        n_demos: sidecar.n_demos,
        model_id: sidecar.model_id,
        run_seed: sidecar.run_seed,
    })
}

/// Build a dataset directly from an embedding table (e.g. static word
/// vectors used as a baseline).
pub fn dataset_from_table(table: EmbeddingTable, model_id: &str) -> ReprDataset {
    ReprDataset { table, condition: Condition::WordOnly, n_demos: 0, model_id: model_id.to_string(), run_seed: 0 }
}
