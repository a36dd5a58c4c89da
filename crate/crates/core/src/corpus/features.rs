use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{read_text, CorpusError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureType {
    Taxonomic,
    Encyclopedic,
    Functional,
    Visual,
    OtherPerceptual,
}

impl FromStr for FeatureType {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace([' ', '-'], "_").as_str() {
            "taxonomic" => Ok(FeatureType::Taxonomic),
            "encyclopedic" | "encyclopaedic" => Ok(FeatureType::Encyclopedic),
            "functional" => Ok(FeatureType::Functional),
            "visual" | "visual_perceptual" => Ok(FeatureType::Visual),
            "other_perceptual" => Ok(FeatureType::OtherPerceptual),
            _ => Err(CorpusError::UnknownFeatureType(s.to_string())),
        }
    }
}

/// A binary property over concepts, e.g. "lives under water".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub feature_id: String,
    pub label: String,
    pub feature_type: FeatureType,
    pub values: BTreeMap<String, bool>,
}

impl FeatureNorm {
    pub fn positives(&self) -> usize {
        self.values.values().filter(|v| **v).count()
    }
}

/// Loaded features plus the bookkeeping needed to compare against
/// published dataset totals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNormSet {
    pub features: Vec<FeatureNorm>,
    /// Row ids of the concept × feature matrix.
    pub concept_ids: BTreeSet<String>,
    pub dropped: usize,
}

impl FeatureNormSet {
    /// Concepts that have at least one positive among the retained features.
    pub fn concepts_with_positive(&self) -> BTreeSet<String> {
        self.features
            .iter()
            .flat_map(|f| f.values.iter().filter(|(_, v)| **v).map(|(k, _)| k.clone()))
            .collect()
    }

    fn filtered(features: Vec<FeatureNorm>, concept_ids: BTreeSet<String>, min_concepts: usize) -> Self {
        let total = features.len();
        let features: Vec<_> = features.into_iter().filter(|f| f.positives() >= min_concepts).collect();
        let dropped = total - features.len();
        Self { features, concept_ids, dropped }
    }
}

/// Read a concept × feature matrix.
///
/// The file is CSV. The header is `concept` followed by one cell per
/// feature written `<type>:<label>`; each row is a concept id followed by
/// `0`/`1` (or `false`/`true`) cells. Features with fewer than
/// `min_concepts` positive concepts are dropped.
pub fn load_feature_norms(path: &Path, min_concepts: usize) -> Result<FeatureNormSet, CorpusError> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| CorpusError::MalformedMatrix(e.to_string()))?.clone();
    if header.get(0).map(|h| h.trim().to_lowercase()) != Some("concept".into()) {
        return Err(CorpusError::MalformedMatrix("first header cell must be `concept`".into()));
    }
    let mut features = Vec::with_capacity(header.len().saturating_sub(1));
    let mut seen = BTreeSet::new();
    for cell in header.iter().skip(1) {
        let (ty, label) = cell
            .split_once(':')
            .ok_or_else(|| CorpusError::MalformedMatrix(format!("feature header `{cell}` lacks a type prefix")))?;
        let feature_type: FeatureType = ty.parse()?;
        let label = label.trim().to_string();
        let feature_id = label.to_lowercase().split_whitespace().collect::<Vec<_>>().join("_");
        if !seen.insert(feature_id.clone()) {
            return Err(CorpusError::MalformedMatrix(format!("duplicate feature `{label}`")));
        }
        features.push(FeatureNorm { feature_id, label, feature_type, values: BTreeMap::new() });
    }
    let mut concept_ids = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CorpusError::MalformedMatrix(e.to_string()))?;
        let id = rec.get(0).unwrap_or("").trim().to_string();
        if id.is_empty() || !concept_ids.insert(id.clone()) {
            return Err(CorpusError::MalformedMatrix(format!("row {}: empty or repeated concept id", i + 2)));
        }
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v = match cell.trim() {
                "1" | "true" | "TRUE" | "True" => true,
                "0" | "false" | "FALSE" | "False" | "" => false,
                other => {
                    return Err(CorpusError::MalformedMatrix(format!("row {}: non-boolean cell `{other}`", i + 2)))
                }
            };
            features[j].values.insert(id.clone(), v);
        }
    }
    Ok(FeatureNormSet::filtered(features, concept_ids, min_concepts))
}

/// Restrict a loaded set to the given concepts (e.g. the overlap with a
/// concept list) and re-apply the sparsity threshold.
pub fn restrict_features(set: &FeatureNormSet, ids: &BTreeSet<String>, min_concepts: usize) -> FeatureNormSet {
    let concept_ids: BTreeSet<String> = set.concept_ids.intersection(ids).cloned().collect();
    let features = set
        .features
        .iter()
        .map(|f| FeatureNorm {
            values: f.values.iter().filter(|(k, _)| concept_ids.contains(*k)).map(|(k, v)| (k.clone(), *v)).collect(),
            ..f.clone()
        })
        .collect();
    FeatureNormSet::filtered(features, concept_ids, min_concepts)
}
