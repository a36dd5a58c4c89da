//! Ingestion of every external dataset into canonical in-memory forms.
//!
//! Everything downstream works on [`ConceptSet`], [`WordNetIndex`],
//! [`FeatureNorm`], [`ProtoQAItem`] and the two table types; the upstream
//! file quirks stop here.

mod concepts;
mod features;
mod protoqa;
mod tables;
pub mod wordnet;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use concepts::{categories_of, load_concepts, write_concepts_jsonl, Concept, ConceptFormat, ConceptSet, ConceptSource};
pub use features::{load_feature_norms, restrict_features, FeatureNorm, FeatureNormSet, FeatureType};
pub use protoqa::{load_protoqa, Cluster, ProtoQAItem};
pub use tables::{load_embedding_table, load_frequency_table, load_table, EmbeddingTable, FrequencyTable, Table, TableKind};
pub use wordnet::{load_wordnet, synsets_of, Pos, SynsetId, WordNetIndex};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("duplicate concept id: {0}")]
    DuplicateId(String),
    #[error("{file}: parse error at byte {offset}: {reason}")]
    ParseError { file: String, offset: u64, reason: String },
    #[error("wordnet index is inconsistent: {0}")]
    Inconsistent(String),
    #[error("malformed feature matrix: {0}")]
    MalformedMatrix(String),
    #[error("unknown feature type: {0}")]
    UnknownFeatureType(String),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("non-positive cluster count at line {line}")]
    NonPositiveCount { line: usize },
    #[error("row {row} has {found} values, expected {expected}")]
    InconsistentDim { row: usize, expected: usize, found: usize },
    #[error("non-finite value at row {row}")]
    NonFiniteValue { row: usize },
    #[error("table is empty")]
    EmptyTable,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn read_text(path: &Path) -> Result<String, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    Ok(std::fs::read_to_string(path)?)
}
