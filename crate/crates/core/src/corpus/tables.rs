use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, CorpusError};

/// Word → log10 occurrences per billion words.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub entries: BTreeMap<String, f64>,
}

impl FrequencyTable {
    pub fn get(&self, word: &str) -> Option<f64> {
        self.entries.get(word).or_else(|| self.entries.get(&word.to_lowercase())).copied()
    }
}

/// Fixed-width real vectors keyed by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    rows: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: BTreeMap::new(), meta: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.rows
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.rows.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Insert a row; `row` is only used to label errors.
    pub fn insert(&mut self, id: &str, values: Vec<f64>, row: usize) -> Result<(), CorpusError> {
        if values.len() != self.dim {
            return Err(CorpusError::InconsistentDim { row, expected: self.dim, found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::NonFiniteValue { row });
        }
        self.rows.insert(id.to_string(), values);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Frequency,
    Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Table {
    Frequency(FrequencyTable),
    Embedding(EmbeddingTable),
}

pub fn load_table(path: &Path, kind: TableKind) -> Result<Table, CorpusError> {
    match kind {
        TableKind::Frequency => load_frequency_table(path).map(Table::Frequency),
        TableKind::Embedding => load_embedding_table(path).map(Table::Embedding),
    }
}

/// Rows are tab separated when the line contains a tab, otherwise split on
/// whitespace.
fn fields(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn number(s: &str, row: usize) -> Result<f64, CorpusError> {
    let v: f64 = s
        .parse()
        .map_err(|_| CorpusError::MalformedRow { line: row, reason: format!("`{s}` is not a number") })?;
    if !v.is_finite() {
        return Err(CorpusError::NonFiniteValue { row });
    }
    Ok(v)
}

pub fn load_frequency_table(path: &Path) -> Result<FrequencyTable, CorpusError> {
    let text = read_text(path)?;
    let mut entries = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let f = fields(line);
        if f.is_empty() || f[0].is_empty() {
            continue;
        }
        if f.len() < 2 {
            return Err(CorpusError::MalformedRow { line: i + 1, reason: "expected `word value`".into() });
        }
        let word = f[..f.len() - 1].join(" ");
        entries.insert(word, number(f[f.len() - 1], i + 1)?);
    }
    Ok(FrequencyTable { entries })
}

/// Dimension is taken from the first row and enforced on the rest.
pub fn load_embedding_table(path: &Path) -> Result<EmbeddingTable, CorpusError> {
    let text = read_text(path)?;
    let mut table: Option<EmbeddingTable> = None;
    for (i, line) in text.lines().enumerate() {
        let f = fields(line);
        if f.is_empty() || f[0].is_empty() {
            continue;
        }
        let row = i + 1;
        let values = f[1..].iter().map(|s| number(s, row)).collect::<Result<Vec<_>, _>>()?;
        let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len()));
        if t.dim == 0 {
            return Err(CorpusError::InconsistentDim { row, expected: 1, found: 0 });
        }
        t.insert(f[0], values, row)?;
    }
    table.ok_or(CorpusError::EmptyTable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp(s: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(s.as_bytes()).unwrap();
        f
    }

    #[test]
    fn embedding_dim_is_inferred() {
        let f = tmp("a 1 2 3 4\nb 0 0 0 1\nc 1 1 1 1\n");
        let t = load_embedding_table(f.path()).unwrap();
        assert_eq!((t.dim(), t.len()), (4, 3));
    }

    #[test]
    fn inconsistent_dim_is_an_error() {
        let f = tmp("a 1 2 3 4\nb 0 0 0 1 5\n");
        assert!(matches!(
            load_embedding_table(f.path()),
            Err(CorpusError::InconsistentDim { row: 2, expected: 4, found: 5 })
        ));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let f = tmp("a 1 NaN\n");
        assert!(matches!(load_embedding_table(f.path()), Err(CorpusError::NonFiniteValue { row: 1 })));
    }

    #[test]
    fn frequency_row() {
        let f = tmp("the 9.05\nice cream\t4.5\n");
        let t = load_frequency_table(f.path()).unwrap();
        assert_eq!(t.get("the"), Some(9.05));
        assert_eq!(t.get("ice cream"), Some(4.5));
    }
}
