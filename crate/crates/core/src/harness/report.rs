use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::read_jsonl;
use super::HarnessError;
use crate::probe::{accuracy_report, write_report_csv, AccuracyReport, BootstrapConfig, TrialRecord};
use crate::promptgen::Condition;
use crate::stats::{pearson, spearman};

/// Correlation of probe scores against one target across models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub target: String,
    pub n_models: usize,
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
    /// Why a coefficient is absent (e.g. zero variance).
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub models: Vec<String>,
    pub tasks: Vec<Correlation>,
    /// Against each model's mean score over all tasks.
    pub average: Correlation,
}

fn correlation(target: &str, x: &[f64], y: &[f64]) -> Correlation {
    let s = spearman(x, y);
    let p = pearson(x, y);
    let note = match (&s, &p) {
        (Err(e), _) | (_, Err(e)) => Some(e.to_string()),
        _ => None,
    };
    Correlation { target: target.to_string(), n_models: x.len(), spearman: s.ok(), pearson: p.ok(), note }
}

/// Spearman and Pearson correlation between probe scores and each task's
/// scores over the models that have a probe score and every task score.
pub fn correlate_models(
    probe_scores: &BTreeMap<String, f64>,
    task_scores: &BTreeMap<String, BTreeMap<String, f64>>,
) -> Result<CorrelationReport, HarnessError> {
    let models: Vec<String> = probe_scores
        .keys()
        .filter(|m| task_scores.values().all(|t| t.contains_key(*m)))
        .cloned()
        .collect();
    if models.len() < 3 || task_scores.is_empty() {
        return Err(HarnessError::TooFewModels { found: if task_scores.is_empty() { 0 } else { models.len() } });
    }
    let x: Vec<f64> = models.iter().map(|m| probe_scores[m]).collect();
    let tasks = task_scores
        .iter()
        .map(|(task, scores)| {
            let y: Vec<f64> = models.iter().map(|m| scores[m]).collect();
            correlation(task, &x, &y)
        })
        .collect();
    let avg: Vec<f64> = models
        .iter()
        .map(|m| task_scores.values().map(|t| t[m]).sum::<f64>() / task_scores.len() as f64)
        .collect();
    Ok(CorrelationReport { average: correlation("average", &x, &avg), models, tasks })
}

/// Correlate probe scores with a single per-model quantity such as
/// parameter count.
pub fn correlate_with(
    probe_scores: &BTreeMap<String, f64>,
    other: &BTreeMap<String, f64>,
    target: &str,
) -> Result<Correlation, HarnessError> {
    let models: Vec<&String> = probe_scores.keys().filter(|m| other.contains_key(*m)).collect();
    if models.len() < 3 {
        return Err(HarnessError::TooFewModels { found: models.len() });
    }
    let x: Vec<f64> = models.iter().map(|m| probe_scores[*m]).collect();
    let y: Vec<f64> = models.iter().map(|m| other[*m]).collect();
    Ok(correlation(target, &x, &y))
}

fn read_csv_rows(path: &Path, columns: usize) -> Result<Vec<Vec<String>>, HarnessError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|_| HarnessError::MissingArtifact(path.display().to_string()))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))?;
        if rec.len() < columns {
            return Err(HarnessError::Format(format!("{} row {}: expected {columns} columns", path.display(), i + 2)));
        }
        rows.push(rec.iter().take(columns).map(String::from).collect());
    }
    Ok(rows)
}

fn number(path: &Path, s: &str) -> Result<f64, HarnessError> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| HarnessError::Format(format!("{}: `{s}` is not a finite number", path.display())))
}

/// `model,score` CSV with a header row.
pub fn load_model_scores(path: &Path) -> Result<BTreeMap<String, f64>, HarnessError> {
    read_csv_rows(path, 2)?.into_iter().map(|r| Ok((r[0].clone(), number(path, &r[1])?))).collect()
}

/// `model,task,score` CSV with a header row.
pub fn load_task_scores(path: &Path) -> Result<BTreeMap<String, BTreeMap<String, f64>>, HarnessError> {
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in read_csv_rows(path, 3)? {
        out.entry(r[1].clone()).or_default().insert(r[0].clone(), number(path, &r[2])?);
    }
    Ok(out)
}

pub fn write_correlation_csv(rows: &[Correlation], mut out: impl Write) -> Result<(), HarnessError> {
    let cell = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    writeln!(out, "target,n_models,spearman,pearson,note")?;
    for r in rows {
        let note = r.note.as_deref().unwrap_or("");
        writeln!(out, "{},{},{},{},{}", r.target, r.n_models, cell(r.spearman), cell(r.pearson), note)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}` (expected csv or markdown)")),
        }
    }
}

/// Column label for one (condition, N, permute ratio) group.
fn column_label(key: &(Condition, usize, u64), ambiguous: &BTreeSet<Condition>) -> String {
    let (condition, n, ratio_bits) = *key;
    let mut label = condition.label().to_string();
    if ambiguous.contains(&condition) {
        label.push_str(&format!(" N={n}"));
    }
    let ratio = f64::from_bits(ratio_bits);
    if ratio > 0.0 {
        label.push_str(&format!(" perm={ratio}"));
    }
    label
}

/// Models as rows, conditions as columns (Demo, NL, Mis, Rand first),
/// cells holding accuracy in percent with the bootstrap interval.
fn markdown_table(reports: &[AccuracyReport]) -> String {
    let mut columns: BTreeSet<(Condition, usize, u64)> = BTreeSet::new();
    let mut cells: BTreeMap<(String, (Condition, usize, u64)), &AccuracyReport> = BTreeMap::new();
    for r in reports {
        let col = (r.key.condition, r.key.n_demos, r.key.permute_ratio.to_bits());
        columns.insert(col);
        cells.insert((r.key.model_id.clone(), col), r);
    }
    let mut per_condition: BTreeMap<Condition, BTreeSet<usize>> = BTreeMap::new();
    for (c, n, _) in &columns {
        per_condition.entry(*c).or_default().insert(*n);
    }
    let ambiguous: BTreeSet<Condition> = per_condition.into_iter().filter(|(_, ns)| ns.len() > 1).map(|(c, _)| c).collect();
    let models: BTreeSet<&String> = reports.iter().map(|r| &r.key.model_id).collect();

    let mut text = String::from("| Model |");
    for col in &columns {
        text.push_str(&format!(" {} |", column_label(col, &ambiguous)));
    }
    text.push_str("\n|---|");
    text.push_str(&"---:|".repeat(columns.len()));
    text.push('\n');
    for m in models {
        text.push_str(&format!("| {m} |"));
        for col in &columns {
            match cells.get(&(m.clone(), *col)) {
                Some(r) => text.push_str(&format!(
                    " {:.1} [{:.1}, {:.1}] |",
                    r.mean * 100.0,
                    r.ci_lo * 100.0,
                    r.ci_hi * 100.0
                )),
                None => text.push_str(" – |"),
            }
        }
        text.push('\n');
    }
    text
}

/// Aggregate probe records from one or more `records.jsonl` files into an
/// accuracy table under `out_dir`. Returns the written file.
pub fn export_report(
    record_files: &[PathBuf],
    out_dir: &Path,
    format: ReportFormat,
    boot: &BootstrapConfig,
) -> Result<PathBuf, HarnessError> {
    if record_files.is_empty() {
        return Err(HarnessError::MissingArtifact("no record files given".into()));
    }
    let mut records: Vec<TrialRecord> = Vec::new();
    for f in record_files {
        records.extend(read_jsonl::<TrialRecord>(f)?);
    }
    if records.is_empty() {
        return Err(HarnessError::MissingArtifact("record files hold no trials".into()));
    }
    let reports = accuracy_report(&records, boot)?;
    std::fs::create_dir_all(out_dir)?;
    let path = match format {
        ReportFormat::Csv => {
            let path = out_dir.join("accuracy.csv");
            let mut buf = Vec::new();
            write_report_csv(&reports, &mut buf)?;
            std::fs::write(&path, buf)?;
            path
        }
        ReportFormat::Markdown => {
            let path = out_dir.join("accuracy.md");
            std::fs::write(&path, markdown_table(&reports))?;
            path
        }
    };
    Ok(path)
}
