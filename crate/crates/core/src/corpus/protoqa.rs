use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{read_text, CorpusError};

/// A gold answer cluster; `count` is how many people gave an answer in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub answers: BTreeSet<String>,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtoQAItem {
    pub id: String,
    pub question: String,
    pub clusters: Vec<Cluster>,
}

/// Read ProtoQA questions, one JSON object per line.
///
/// Two record shapes are accepted:
/// * canonical: `{"id"?, "question": str, "clusters": [{"answers": [str], "count": int}]}`
///   (cluster order kept as written);
/// * the upstream dataset shape: `{"question": {"normalized"|"original": str},
///   "answers": {"clusters": {key: {"answers": [...], "count": n}}}, "metadata": {"id": ..}}`,
///   whose clusters are ordered by descending count, then key.
pub fn load_protoqa(path: &Path) -> Result<Vec<ProtoQAItem>, CorpusError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| CorpusError::MalformedRecord { line: line_no, reason: reason.to_string() };
        let v: Value = serde_json::from_str(line).map_err(|e| bad(&e.to_string()))?;
        let item = if v.get("clusters").is_some() {
            parse_canonical(&v, line_no).map_err(|e| match e {
                RecordError::Bad(r) => bad(&r),
                RecordError::NonPositive => CorpusError::NonPositiveCount { line: line_no },
            })?
        } else {
            parse_upstream(&v, line_no).map_err(|e| match e {
                RecordError::Bad(r) => bad(&r),
                RecordError::NonPositive => CorpusError::NonPositiveCount { line: line_no },
            })?
        };
        let mut seen = BTreeSet::new();
        for c in &item.clusters {
            for a in &c.answers {
                if !seen.insert(a.as_str()) {
                    return Err(bad(&format!("answer `{a}` appears in more than one cluster")));
                }
            }
        }
        out.push(item);
    }
    Ok(out)
}

enum RecordError {
    Bad(String),
    NonPositive,
}

fn cluster_from(v: &Value) -> Result<Cluster, RecordError> {
    let count = v
        .get("count")
        .and_then(Value::as_i64)
        .ok_or_else(|| RecordError::Bad("cluster lacks an integer count".into()))?;
    if count < 1 {
        return Err(RecordError::NonPositive);
    }
    let answers: BTreeSet<String> = v
        .get("answers")
        .and_then(Value::as_array)
        .ok_or_else(|| RecordError::Bad("cluster lacks answers".into()))?
        .iter()
        .map(|a| a.as_str().map(str::to_string).ok_or_else(|| RecordError::Bad("non-string answer".into())))
        .collect::<Result<_, _>>()?;
    if answers.is_empty() {
        return Err(RecordError::Bad("empty cluster".into()));
    }
    Ok(Cluster { answers, count: count as u32 })
}

fn parse_canonical(v: &Value, line: usize) -> Result<ProtoQAItem, RecordError> {
    let question = v
        .get("question")
        .and_then(Value::as_str)
        .ok_or_else(|| RecordError::Bad("missing question".into()))?
        .to_string();
    let clusters = v
        .get("clusters")
        .and_then(Value::as_array)
        .ok_or_else(|| RecordError::Bad("clusters must be a list".into()))?
        .iter()
        .map(cluster_from)
        .collect::<Result<Vec<_>, _>>()?;
    if clusters.is_empty() {
        return Err(RecordError::Bad("no clusters".into()));
    }
    let id = v.get("id").and_then(Value::as_str).map(str::to_string).unwrap_or_else(|| format!("q{line}"));
    Ok(ProtoQAItem { id, question, clusters })
}

fn parse_upstream(v: &Value, line: usize) -> Result<ProtoQAItem, RecordError> {
    let q = v.get("question").ok_or_else(|| RecordError::Bad("missing question".into()))?;
    let question = q
        .get("original")
        .or_else(|| q.get("normalized"))
        .or(Some(q))
        .and_then(Value::as_str)
        .ok_or_else(|| RecordError::Bad("question is not a string".into()))?
        .to_string();
    let map = v
        .pointer("/answers/clusters")
        .and_then(Value::as_object)
        .ok_or_else(|| RecordError::Bad("missing answers.clusters".into()))?;
    let mut keyed = map
        .iter()
        .map(|(k, c)| cluster_from(c).map(|c| (k.clone(), c)))
        .collect::<Result<Vec<_>, _>>()?;
    if keyed.is_empty() {
        return Err(RecordError::Bad("no clusters".into()));
    }
    keyed.sort_by(|a, b| b.1.count.cmp(&a.1.count).then_with(|| a.0.cmp(&b.0)));
    let id = v
        .pointer("/metadata/id")
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| format!("q{line}"));
    Ok(ProtoQAItem { id, question, clusters: keyed.into_iter().map(|(_, c)| c).collect() })
}
