use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, CorpusError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptSource {
    Things,
    Wordnet,
    Hill200,
    Custom,
}

/// One nameable object: the unit a probe trial is scored on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub lemma: String,
    #[serde(default)]
    pub synonyms: BTreeSet<String>,
    pub description: String,
    #[serde(default)]
    pub category: Option<String>,
    pub source: ConceptSource,
}

impl Concept {
    pub fn new(id: &str, lemma: &str, description: &str) -> Self {
        Self {
            id: id.to_string(),
            lemma: lemma.to_string(),
            synonyms: BTreeSet::new(),
            description: description.to_string(),
            category: None,
            source: ConceptSource::Custom,
        }
    }

    /// Lemma plus synonyms: the strings an answer may match.
    pub fn expected_answers(&self) -> BTreeSet<String> {
        let mut out = self.synonyms.clone();
        out.insert(self.lemma.clone());
        out
    }
}

/// Concepts ordered by id, ids unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptSet {
    name: String,
    concepts: Vec<Concept>,
}

impl ConceptSet {
    pub fn new(name: &str, concepts: Vec<Concept>) -> Result<Self, CorpusError> {
        let mut concepts = concepts;
        concepts.sort_by(|a, b| a.id.cmp(&b.id));
        for w in concepts.windows(2) {
            if w[0].id == w[1].id {
                return Err(CorpusError::DuplicateId(w[0].id.clone()));
            }
        }
        for (i, c) in concepts.iter().enumerate() {
            if c.lemma.trim().is_empty() || c.description.trim().is_empty() {
                return Err(CorpusError::MalformedRow {
                    line: i + 1,
                    reason: format!("concept {} has an empty lemma or description", c.id),
                });
            }
        }
        let concepts = concepts
            .into_iter()
            .map(|mut c| {
                let lemma = c.lemma.clone();
                c.synonyms.remove(&lemma);
                c
            })
            .collect();
        Ok(Self { name: name.to_string(), concepts })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Concept> {
        self.concepts
            .binary_search_by(|c| c.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.concepts[i])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Concept> {
        self.concepts.iter()
    }

    /// Subset keeping only the given ids (unknown ids are ignored).
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> ConceptSet {
        let keep: BTreeSet<&str> = ids.into_iter().collect();
        ConceptSet {
            name: self.name.clone(),
            concepts: self.concepts.iter().filter(|c| keep.contains(c.id.as_str())).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptFormat {
    /// THINGS concept table; see [`load_concepts`] for the column map.
    ThingsTsv,
    /// Canonical JSONL, one [`Concept`] per line.
    Jsonl,
    /// Two columns `word` and `description`.
    Hill200Tsv,
}

/// Load a concept list.
///
/// Column maps for the TSV importers (header names are matched
/// case-insensitively, column order is free):
///
/// | format       | id          | lemma  | synonyms (", "-separated) | description          | category |
/// |--------------|-------------|--------|---------------------------|----------------------|----------|
/// | `things_tsv` | `uniqueID`  | `Word` | `Wordnet synonyms`        | `Definition...` (prefix) | `Top-down Category (manual selection)` / `category` |
/// | `hill200_tsv`| = lemma     | `word` | none                      | `description`        | none     |
///
/// Rows with an empty lemma or description are an error, not skipped.
pub fn load_concepts(path: &Path, format: ConceptFormat) -> Result<ConceptSet, CorpusError> {
    let text = read_text(path)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("concepts").to_string();
    let concepts = match format {
        ConceptFormat::Jsonl => parse_jsonl(&text)?,
        ConceptFormat::ThingsTsv => parse_things(&text)?,
        ConceptFormat::Hill200Tsv => parse_hill(&text)?,
    };
    let mut seen = BTreeSet::new();
    for c in &concepts {
        if !seen.insert(c.id.clone()) {
            return Err(CorpusError::DuplicateId(c.id.clone()));
        }
    }
    ConceptSet::new(&name, concepts)
}

fn parse_jsonl(text: &str) -> Result<Vec<Concept>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: Concept = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRow {
            line: i + 1,
            reason: e.to_string(),
        })?;
        check_row(&c, i + 1)?;
        out.push(c);
    }
    Ok(out)
}

fn check_row(c: &Concept, line: usize) -> Result<(), CorpusError> {
    if c.id.trim().is_empty() {
        return Err(CorpusError::MalformedRow { line, reason: "empty id".into() });
    }
    if c.lemma.trim().is_empty() {
        return Err(CorpusError::MalformedRow { line, reason: "empty lemma".into() });
    }
    if c.description.trim().is_empty() {
        return Err(CorpusError::MalformedRow { line, reason: "empty description".into() });
    }
    Ok(())
}

struct Tsv<'a> {
    header: Vec<String>,
    rows: Vec<(usize, Vec<&'a str>)>,
}

fn split_tsv(text: &str) -> Result<Tsv<'_>, CorpusError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header = match lines.next() {
        Some((_, h)) => h.split('\t').map(|s| s.trim().to_lowercase()).collect::<Vec<_>>(),
        None => return Err(CorpusError::MalformedRow { line: 1, reason: "missing header".into() }),
    };
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != header.len() {
            return Err(CorpusError::MalformedRow {
                line: i + 1,
                reason: format!("{} fields, header has {}", fields.len(), header.len()),
            });
        }
        rows.push((i + 1, fields));
    }
    Ok(Tsv { header, rows })
}

fn column(header: &[String], pred: impl Fn(&str) -> bool) -> Option<usize> {
    header.iter().position(|h| pred(h))
}

fn parse_things(text: &str) -> Result<Vec<Concept>, CorpusError> {
    let tsv = split_tsv(text)?;
    let h = &tsv.header;
    let missing = |what: &str| CorpusError::MalformedRow { line: 1, reason: format!("header lacks {what} column") };
    let id = column(h, |c| c == "uniqueid").ok_or_else(|| missing("uniqueID"))?;
    let lemma = column(h, |c| c == "word").ok_or_else(|| missing("Word"))?;
    let desc = column(h, |c| c.starts_with("definition")).ok_or_else(|| missing("Definition"))?;
    let syn = column(h, |c| c == "wordnet synonyms");
    let cat = column(h, |c| c == "top-down category (manual selection)").or_else(|| column(h, |c| c == "category"));
    let mut out = Vec::with_capacity(tsv.rows.len());
    for (line, f) in tsv.rows {
        let lemma_s = f[lemma].trim().to_string();
        let synonyms = syn
            .map(|s| {
                f[s].split(',')
                    .map(str::trim)
                    .filter(|x| !x.is_empty() && *x != lemma_s)
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default();
        let category = cat.map(|c| f[c].trim()).filter(|c| !c.is_empty()).map(String::from);
        let c = Concept {
            id: f[id].trim().to_string(),
            lemma: lemma_s,
            synonyms,
            description: f[desc].trim().to_string(),
            category,
            source: ConceptSource::Things,
        };
        check_row(&c, line)?;
        out.push(c);
    }
    Ok(out)
}

fn parse_hill(text: &str) -> Result<Vec<Concept>, CorpusError> {
    let tsv = split_tsv(text)?;
    let h = &tsv.header;
    let word = column(h, |c| c == "word")
        .ok_or_else(|| CorpusError::MalformedRow { line: 1, reason: "header lacks word column".into() })?;
    let desc = column(h, |c| c == "description")
        .ok_or_else(|| CorpusError::MalformedRow { line: 1, reason: "header lacks description column".into() })?;
    let mut out = Vec::with_capacity(tsv.rows.len());
    for (line, f) in tsv.rows {
        let lemma = f[word].trim();
        let c = Concept {
            id: lemma.to_string(),
            lemma: lemma.to_string(),
            synonyms: BTreeSet::new(),
            description: f[desc].trim().to_string(),
            category: None,
            source: ConceptSource::Hill200,
        };
        check_row(&c, line)?;
        out.push(c);
    }
    Ok(out)
}

/// Canonical JSONL: one object per line, keys in the order
/// id, lemma, synonyms, description, category, source.
pub fn write_concepts_jsonl(set: &ConceptSet, mut out: impl Write) -> std::io::Result<()> {
    for c in set.iter() {
        serde_json::to_writer(&mut out, c)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Group concept ids by category, skipping uncategorized concepts.
pub fn categories_of(set: &ConceptSet) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for c in set.iter() {
        if let Some(cat) = &c.category {
            out.entry(cat.clone()).or_default().push(c.id.clone());
        }
    }
    out
}
